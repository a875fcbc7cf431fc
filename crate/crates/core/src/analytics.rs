//! Analytic moments of the belief and signal processes.
//!
//! Because update weights are deterministic, the belief means follow the
//! linear recursion
//!
//! ```text
//! pi[t+1] = M[t] pi[t] + A[t] W eps[t],   M[t] = A[t] W + (I - A[t])
//! ```
//!
//! with `eps[t] ~ N(0, diag(sigma2[t]))` the draw noise. Its covariance
//! propagates exactly as `P[t+1] = M P Mᵀ + (A W) diag(sigma2) (A W)ᵀ`, and
//! the signal variance is `diag(P) + sigma2`.
//!
//! The closed-form signal-variance expression implemented by
//! [`signal_variance_eq8`] applies the squared weights to the diagonal of
//! `P` only, so it ignores covariance between distinct neighbours' means.
//! It coincides with the exact recursion at `t = 1` and drifts from it as
//! neighbours' beliefs become correlated. The scalar per-agent form of the
//! same expression is sometimes written with plain weights `w_ij` in the
//! middle term; that form is not dimensionally consistent with the
//! variance of a weighted sum, and the squared-weight form is used here.

use libm::erfc;
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::acquisition::InitialBeliefs;
use crate::dynamics::{self, BandTable, DynamicsError, Ensemble};
use crate::network::Network;

/// Symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue tolerated before a covariance is declared broken.
pub const PSD_FLOOR: f64 = -1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("update weight {value} of agent {agent} is outside [0, 1]")]
    WeightOutOfRange { agent: usize, value: f64 },
    #[error("covariance at t={t} is not positive semidefinite (smallest eigenvalue {min_eigenvalue})")]
    NotPsd { t: usize, min_eigenvalue: f64 },
    #[error("covariance at t={t} is not symmetric")]
    NotSymmetric { t: usize },
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

fn expect_len(what: &'static str, expected: usize, found: usize) -> Result<(), AnalyticsError> {
    if expected == found {
        Ok(())
    } else {
        Err(AnalyticsError::DimensionMismatch { what, expected, found })
    }
}

/// Covariance of the belief-mean vector at one step, with the belief
/// variances carried alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    pub t: usize,
    pub p: DMatrix<f64>,
    pub delta2: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl CovarianceState {
    /// Initial means are the true state for everyone, so `P[0] = 0`.
    pub fn initial(sigma2_0: &[f64]) -> Self {
        let n = sigma2_0.len();
        CovarianceState {
            t: 0,
            p: DMatrix::zeros(n, n),
            delta2: vec![0.0; n],
            sigma2: sigma2_0.to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.sigma2.len()
    }

    /// Symmetry and positive-semidefiniteness.
    pub fn check(&self) -> Result<(), AnalyticsError> {
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(AnalyticsError::NotSymmetric { t: self.t });
                }
            }
        }
        if n > 0 {
            let min = SymmetricEigen::new(self.p.clone())
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min < PSD_FLOOR {
                return Err(AnalyticsError::NotPsd { t: self.t, min_eigenvalue: min });
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: &[f64], n: usize) -> Result<(), AnalyticsError> {
    expect_len("alpha", n, alpha.len())?;
    for (agent, &value) in alpha.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(AnalyticsError::WeightOutOfRange { agent, value });
        }
    }
    Ok(())
}

/// `A W`, the weight matrix with row `i` scaled by `alpha[i]`.
fn scaled_weights(alpha: &[f64], net: &Network) -> DMatrix<f64> {
    let mut aw = net.weights().clone();
    for (i, &a) in alpha.iter().enumerate() {
        aw.row_mut(i).scale_mut(a);
    }
    aw
}

/// `A W + (I - A)`, the row-stochastic matrix driving the mean dynamics.
pub fn mixing_matrix(alpha: &[f64], net: &Network) -> Result<DMatrix<f64>, AnalyticsError> {
    check_alpha(alpha, net.n())?;
    let mut m = scaled_weights(alpha, net);
    for (i, &a) in alpha.iter().enumerate() {
        m[(i, i)] += 1.0 - a;
    }
    Ok(m)
}

/// Advance the belief-mean covariance by one step.
pub fn propagate_covariance(
    cov: &CovarianceState,
    net: &Network,
    alpha: &[f64],
) -> Result<CovarianceState, AnalyticsError> {
    let n = net.n();
    expect_len("covariance", n, cov.n())?;
    let m = mixing_matrix(alpha, net)?;
    let aw = scaled_weights(alpha, net);
    let noise = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&cov.sigma2));
    let p = &m * &cov.p * m.transpose() + &aw * noise * aw.transpose();
    let p = (&p + p.transpose()) * 0.5;

    let sigma2_y = dynamics::social_variance(net, &cov.sigma2)?;
    let sigma2 = cov
        .sigma2
        .iter()
        .zip(&sigma2_y)
        .map(|(&s2, &sy)| dynamics::bayesian_update(0.0, s2, 0.0, sy).map(|u| u.sigma2))
        .collect::<Result<Vec<_>, _>>()?;

    let next = CovarianceState {
        t: cov.t + 1,
        delta2: p.diagonal().iter().copied().collect(),
        p,
        sigma2,
    };
    next.check()?;
    Ok(next)
}

/// Variance of each published signal: mean uncertainty plus draw noise.
pub fn signal_variance_exact(cov: &CovarianceState) -> Vec<f64> {
    cov.delta2.iter().zip(&cov.sigma2).map(|(d, s)| d + s).collect()
}

/// The closed-form signal variance at `t + 1` built from the state at `t`:
///
/// ```text
/// (I - A)² δ² + A² W∘² (δ² + σ²) + 2 A (I - A) diag(W P) + σ²[t+1]
/// ```
pub fn signal_variance_eq8(
    cov_prev: &CovarianceState,
    net: &Network,
    alpha: &[f64],
    sigma2_next: &[f64],
) -> Result<Vec<f64>, AnalyticsError> {
    let n = net.n();
    expect_len("covariance", n, cov_prev.n())?;
    expect_len("next variances", n, sigma2_next.len())?;
    check_alpha(alpha, n)?;
    let wp = net.weights() * &cov_prev.p;
    Ok((0..n)
        .map(|i| {
            let a = alpha[i];
            let squared: f64 = net
                .row(i)
                .iter()
                .map(|&(j, w)| w * w * (cov_prev.delta2[j] + cov_prev.sigma2[j]))
                .sum();
            (1.0 - a).powi(2) * cov_prev.delta2[i]
                + a * a * squared
                + 2.0 * a * (1.0 - a) * wp[(i, i)]
                + sigma2_next[i]
        })
        .collect())
}

/// Analytic moments at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStep {
    pub t: usize,
    pub mean: Vec<f64>,
    pub var_exact: Vec<f64>,
    pub var_eq8: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub theta: f64,
    pub n_agents: usize,
    pub steps: Vec<MomentStep>,
}

impl MomentTrajectory {
    /// The exact-variance 3σ bands as a table the simulator can count against.
    pub fn bands(&self) -> BandTable {
        BandTable {
            n_agents: self.n_agents,
            lo: self.steps.iter().flat_map(|s| s.band_lo.iter().copied()).collect(),
            hi: self.steps.iter().flat_map(|s| s.band_hi.iter().copied()).collect(),
        }
    }
}

fn moment_step(t: usize, theta: f64, var_exact: Vec<f64>, var_eq8: Vec<f64>, sigma2: Vec<f64>) -> MomentStep {
    let n = var_exact.len();
    let half: Vec<f64> = var_exact.iter().map(|v| 3.0 * v.sqrt()).collect();
    MomentStep {
        t,
        mean: vec![theta; n],
        band_lo: half.iter().map(|h| theta - h).collect(),
        band_hi: half.iter().map(|h| theta + h).collect(),
        var_exact,
        var_eq8,
        sigma2,
    }
}

/// Signal moments for `t = 0..=horizon`. At `t = 0` both variance
/// variants are the initial belief variances.
pub fn analytic_moments(
    net: &Network,
    init: &InitialBeliefs,
    horizon: usize,
) -> Result<MomentTrajectory, AnalyticsError> {
    let n = net.n();
    expect_len("initial beliefs", n, init.n())?;
    let schedule = dynamics::variance_schedule(net, &init.variances, horizon, None)?;
    let mut cov = CovarianceState::initial(&init.variances);
    let mut steps = vec![moment_step(
        0,
        init.theta,
        signal_variance_exact(&cov),
        init.variances.clone(),
        init.variances.clone(),
    )];
    for t in 0..horizon {
        let alpha = &schedule.alpha[t];
        let next = propagate_covariance(&cov, net, alpha)?;
        let eq8 = signal_variance_eq8(&cov, net, alpha, &next.sigma2)?;
        steps.push(moment_step(
            t + 1,
            init.theta,
            signal_variance_exact(&next),
            eq8,
            next.sigma2.clone(),
        ));
        cov = next;
    }
    Ok(MomentTrajectory { theta: init.theta, n_agents: n, steps })
}

/// Empirical signal moments at one `(t, agent)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalCell {
    pub t: usize,
    pub agent: usize,
    pub count: u64,
    pub mean_s: f64,
    pub var_s: f64,
    /// Fraction of draws inside the analytic band, when counted directly.
    pub coverage: Option<f64>,
}

/// Empirical moments in step-major order, as read from a moment table or
/// extracted from an [`Ensemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub n_agents: usize,
    pub cells: Vec<EmpiricalCell>,
}

impl EmpiricalMoments {
    /// Counted coverage is kept only when the ensemble tallied draws
    /// against exactly the bands in `analytic`.
    pub fn from_ensemble(ens: &Ensemble, analytic: Option<&MomentTrajectory>) -> Self {
        let counted = match (ens.bands(), analytic) {
            (Some(b), Some(a)) => *b == a.bands(),
            _ => false,
        };
        let mut cells = Vec::with_capacity(ens.steps() * ens.n_agents);
        for t in 0..ens.steps() {
            for agent in 0..ens.n_agents {
                let m = ens.signal(t, agent);
                cells.push(EmpiricalCell {
                    t,
                    agent,
                    count: m.count,
                    mean_s: m.mean,
                    var_s: m.variance(),
                    coverage: if counted { ens.band_coverage(t, agent) } else { None },
                });
            }
        }
        EmpiricalMoments { n_agents: ens.n_agents, cells }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageSource {
    /// Draws counted inside the band during simulation.
    Counted,
    /// Gaussian probability mass of the empirical moments inside the band.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRecord {
    pub t: usize,
    pub agent: usize,
    pub rel_err_var: f64,
    pub coverage: f64,
    pub coverage_source: CoverageSource,
    /// `(mean_s - theta)` in standard-error units.
    pub mean_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub records: Vec<ComparisonRecord>,
}

impl ComparisonReport {
    pub fn min_coverage(&self) -> f64 {
        self.records.iter().map(|r| r.coverage).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.records.iter().map(|r| r.mean_z.abs()).fold(0.0, f64::max)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.records.iter().map(|r| r.rel_err_var).fold(0.0, f64::max)
    }

    /// One `key=value` record per (agent, step), followed by a summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "agent={} t={} rel_err_var={:.6e} coverage={:.6} coverage_source={} mean_z={:.4}\n",
                r.agent,
                r.t,
                r.rel_err_var,
                r.coverage,
                match r.coverage_source {
                    CoverageSource::Counted => "counted",
                    CoverageSource::Gaussian => "gaussian",
                },
                r.mean_z
            ));
        }
        out.push_str(&format!(
            "summary records={} min_coverage={:.6} max_abs_mean_z={:.4} max_rel_err_var={:.6e}\n",
            self.records.len(),
            self.min_coverage(),
            self.max_abs_z(),
            self.max_rel_err()
        ));
        out
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn ratio_error(empirical: f64, analytic: f64) -> f64 {
    if analytic == 0.0 {
        if empirical == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (empirical - analytic).abs() / analytic
    }
}

/// Compare empirical moments against an analytic trajectory cell by cell.
pub fn compare_tables(
    empirical: &EmpiricalMoments,
    analytic: &MomentTrajectory,
) -> Result<ComparisonReport, AnalyticsError> {
    if empirical.n_agents != analytic.n_agents {
        return Err(AnalyticsError::ProvenanceMismatch(format!(
            "{} agents simulated, {} analysed",
            empirical.n_agents, analytic.n_agents
        )));
    }
    let steps = empirical.cells.len() / empirical.n_agents.max(1);
    if steps != analytic.steps.len() || empirical.cells.len() != steps * empirical.n_agents {
        return Err(AnalyticsError::ProvenanceMismatch(format!(
            "{} simulated cells vs {} analytic steps of {} agents",
            empirical.cells.len(),
            analytic.steps.len(),
            analytic.n_agents
        )));
    }
    let mut records = Vec::with_capacity(empirical.cells.len());
    for cell in &empirical.cells {
        let step = analytic.steps.get(cell.t).filter(|s| s.t == cell.t).ok_or_else(|| {
            AnalyticsError::ProvenanceMismatch(format!("no analytic step t={}", cell.t))
        })?;
        let (i, theta) = (cell.agent, step.mean[cell.agent]);
        let (lo, hi) = (step.band_lo[i], step.band_hi[i]);
        let sd = cell.var_s.sqrt();
        let (coverage, coverage_source) = match cell.coverage {
            Some(c) => (c, CoverageSource::Counted),
            None => {
                let c = if sd > 0.0 {
                    normal_cdf((hi - cell.mean_s) / sd) - normal_cdf((lo - cell.mean_s) / sd)
                } else if (lo..=hi).contains(&cell.mean_s) {
                    1.0
                } else {
                    0.0
                };
                (c, CoverageSource::Gaussian)
            }
        };
        let se = sd / (cell.count as f64).sqrt();
        let dev = cell.mean_s - theta;
        let mean_z = if se > 0.0 {
            dev / se
        } else if dev.abs() <= 1e-12 * theta.abs().max(1.0) {
            0.0
        } else {
            dev.signum() * f64::INFINITY
        };
        records.push(ComparisonRecord {
            t: cell.t,
            agent: i,
            rel_err_var: ratio_error(cell.var_s, step.var_exact[i]),
            coverage,
            coverage_source,
            mean_z,
        });
    }
    Ok(ComparisonReport { records })
}

pub fn compare_moments(ensemble: &Ensemble, analytic: &MomentTrajectory) -> Result<ComparisonReport, AnalyticsError> {
    compare_tables(&EmpiricalMoments::from_ensemble(ensemble, Some(analytic)), analytic)
}
