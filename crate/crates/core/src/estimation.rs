//! Parameter estimation from aggregated report variances.
//!
//! The cost curve `C(x) = a x^(-b)` is fitted by least squares in log-log
//! space from `(cost, variance)` pairs. Given `(a, b)`, the accuracy weight
//! `r` attached to a reward level is recovered by inverting the optimal
//! variance formula, and then used to predict variances out of sample.

use thiserror::Error;

use crate::acquisition::{self, AcquisitionError, RiParams};

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("need at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error("need at least 2 observations, got {0}")]
    TooFewPoints(usize),
    #[error("all observations share the same variance")]
    DuplicateAbscissa,
    #[error("fitted slope {slope} is not negative; cost does not decrease with variance")]
    DegenerateFit { slope: f64 },
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostObservation {
    /// Cost proxy, e.g. display time in seconds.
    pub cost: f64,
    pub variance: f64,
    /// Number of reports behind `variance`.
    pub count: u64,
}

impl CostObservation {
    fn check(&self) -> Result<(), EstimationError> {
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(EstimationError::Domain(format!("cost must be positive, got {}", self.cost)));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(EstimationError::Domain(format!("variance must be positive, got {}", self.variance)));
        }
        if self.count < 2 {
            return Err(EstimationError::Domain(format!("count must be at least 2, got {}", self.count)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardObservation {
    pub reward: f64,
    pub variance: f64,
}

impl RewardObservation {
    fn check(&self) -> Result<(), EstimationError> {
        if !(self.reward > 0.0 && self.reward.is_finite()) {
            return Err(EstimationError::Domain(format!("reward must be positive, got {}", self.reward)));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(EstimationError::Domain(format!("variance must be positive, got {}", self.variance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFit {
    pub a: f64,
    pub b: f64,
    /// Coefficient of determination of the log-log regression.
    pub r2: f64,
    /// `log(cost) - fitted log(cost)` per observation.
    pub residuals: Vec<f64>,
}

impl CostFit {
    pub fn to_text(&self) -> String {
        let mut out = format!("a={:.16e}\nb={:.16e}\nr2={:.16e}\n", self.a, self.b, self.r2);
        for (i, r) in self.residuals.iter().enumerate() {
            out.push_str(&format!("residual[{i}]={r:.16e}\n"));
        }
        out
    }
}

/// Unbiased sample variance.
pub fn sample_variance(reports: &[f64]) -> Result<f64, EstimationError> {
    let n = reports.len();
    if n < 2 {
        return Err(EstimationError::TooFewReports(n));
    }
    let mean = reports.iter().sum::<f64>() / n as f64;
    let ss: f64 = reports.iter().map(|x| (x - mean).powi(2)).sum();
    Ok(ss / (n - 1) as f64)
}

/// Fit `log(cost) = log(a) - b log(variance)`.
///
/// With `weighted`, each observation counts in proportion to its report
/// count; otherwise all conditions weigh the same.
pub fn fit_cost_power_law(obs: &[CostObservation], weighted: bool) -> Result<CostFit, EstimationError> {
    if obs.len() < 2 {
        return Err(EstimationError::TooFewPoints(obs.len()));
    }
    for o in obs {
        o.check()?;
    }
    let xs: Vec<f64> = obs.iter().map(|o| o.variance.ln()).collect();
    let ys: Vec<f64> = obs.iter().map(|o| o.cost.ln()).collect();
    let ws: Vec<f64> = obs
        .iter()
        .map(|o| if weighted { o.count as f64 } else { 1.0 })
        .collect();
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(EstimationError::DuplicateAbscissa);
    }

    let w_sum: f64 = ws.iter().sum();
    let x_bar = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / w_sum;
    let y_bar = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / w_sum;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(&ys).zip(&ws) {
        sxy += w * (x - x_bar) * (y - y_bar);
        sxx += w * (x - x_bar) * (x - x_bar);
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    if !(slope < 0.0) {
        return Err(EstimationError::DegenerateFit { slope });
    }

    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let ss_res: f64 = residuals.iter().zip(&ws).map(|(r, w)| w * r * r).sum();
    let ss_tot: f64 = ys.iter().zip(&ws).map(|(y, w)| w * (y - y_bar).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(CostFit { a: intercept.exp(), b: -slope, r2, residuals })
}

/// The accuracy weight under which `variance` is the optimal choice:
/// `r = a b variance^(-(b + 1))`.
pub fn estimate_r(variance: f64, a: f64, b: f64) -> Result<f64, EstimationError> {
    for (name, v) in [("variance", variance), ("a", a), ("b", b)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(EstimationError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(a * b * variance.powf(-(b + 1.0)))
}

pub fn predict_variance(r: f64, a: f64, b: f64) -> Result<f64, EstimationError> {
    Ok(acquisition::optimal_variance(&RiParams::new(a, b, r)?)?)
}

/// Mean of `|predicted - actual| / actual`.
pub fn evaluate_prediction(predicted: &[f64], actual: &[f64]) -> Result<f64, EstimationError> {
    if predicted.len() != actual.len() {
        return Err(EstimationError::DimensionMismatch {
            what: "predictions",
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(EstimationError::Domain("no observations to evaluate".into()));
    }
    if let Some(bad) = actual.iter().find(|&&x| !(x > 0.0)) {
        return Err(EstimationError::Domain(format!("actual variances must be positive, got {bad}")));
    }
    let total: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs() / a).sum();
    Ok(total / actual.len() as f64)
}

/// The accuracy weight learned for one reward level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEstimate {
    pub reward: f64,
    pub r: f64,
    pub predicted_variance: f64,
}

/// One `r` per reward level from training observations.
pub fn estimate_rewards(train: &[RewardObservation], a: f64, b: f64) -> Result<Vec<RewardEstimate>, EstimationError> {
    train
        .iter()
        .map(|o| {
            o.check()?;
            let r = estimate_r(o.variance, a, b)?;
            Ok(RewardEstimate { reward: o.reward, r, predicted_variance: predict_variance(r, a, b)? })
        })
        .collect()
}

/// Predict held-out variances from per-reward estimates and score them.
///
/// Every test reward must have a training estimate.
pub fn evaluate_rewards(estimates: &[RewardEstimate], test: &[RewardObservation]) -> Result<f64, EstimationError> {
    let mut predicted = Vec::with_capacity(test.len());
    for o in test {
        o.check()?;
        let est = estimates
            .iter()
            .find(|e| e.reward == o.reward)
            .ok_or_else(|| EstimationError::Domain(format!("no training estimate for reward {}", o.reward)))?;
        predicted.push(est.predicted_variance);
    }
    let actual: Vec<f64> = test.iter().map(|o| o.variance).collect();
    evaluate_prediction(&predicted, &actual)
}
