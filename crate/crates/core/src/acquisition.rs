//! Costly information acquisition.
//!
//! Each agent picks the variance of its initial belief by trading the
//! quadratic accuracy benefit `-r * sigma2` against the power-law cost
//! `a * sigma2^(-b)`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AcquisitionError {
    #[error("variance must be positive and finite, got {0}")]
    NonPositiveVariance(f64),
    #[error("parameters must be positive and finite (a={a}, b={b}, r={r})")]
    InvalidParams { a: f64, b: f64, r: f64 },
    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<AcquisitionError>,
    },
}

/// Rational-inattention constants of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiParams {
    /// Cost scale.
    pub a: f64,
    /// Cost curvature.
    pub b: f64,
    /// Weight on accuracy of the acquired signal.
    pub r: f64,
}

impl RiParams {
    pub fn new(a: f64, b: f64, r: f64) -> Result<Self, AcquisitionError> {
        let p = RiParams { a, b, r };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), AcquisitionError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.a) && ok(self.b) && ok(self.r) {
            Ok(())
        } else {
            Err(AcquisitionError::InvalidParams { a: self.a, b: self.b, r: self.r })
        }
    }
}

fn check_variance(sigma2: f64) -> Result<(), AcquisitionError> {
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(())
    } else {
        Err(AcquisitionError::NonPositiveVariance(sigma2))
    }
}

/// `a * sigma2^(-b)`, strictly decreasing in `sigma2`.
pub fn acquisition_cost(sigma2: f64, p: &RiParams) -> Result<f64, AcquisitionError> {
    p.check()?;
    check_variance(sigma2)?;
    Ok(p.a * sigma2.powf(-p.b))
}

/// Expected utility of publishing a signal drawn from `N(theta, sigma2)`.
///
/// The expectation of the squared error is exactly `sigma2`, so no
/// sampling is involved.
pub fn expected_utility(sigma2: f64, p: &RiParams) -> Result<f64, AcquisitionError> {
    Ok(-p.r * sigma2 - acquisition_cost(sigma2, p)?)
}

/// Utility-maximizing variance, `(a b / r)^(1 / (b + 1))`.
pub fn optimal_variance(p: &RiParams) -> Result<f64, AcquisitionError> {
    p.check()?;
    Ok((p.a * p.b / p.r).powf(1.0 / (p.b + 1.0)))
}

/// Initial beliefs of a population: everyone centred on the true state,
/// each with its own optimal variance.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialBeliefs {
    pub theta: f64,
    pub variances: Vec<f64>,
}

impl InitialBeliefs {
    /// Beliefs with variances assigned directly rather than derived from
    /// utility maximization.
    pub fn from_variances(theta: f64, variances: Vec<f64>) -> Result<Self, AcquisitionError> {
        for (agent, &v) in variances.iter().enumerate() {
            // zero is allowed here: it is the point-mass belief used by
            // degenerate test configurations
            if !(v.is_finite() && v >= 0.0) {
                return Err(AcquisitionError::Agent {
                    agent,
                    source: Box::new(AcquisitionError::NonPositiveVariance(v)),
                });
            }
        }
        Ok(InitialBeliefs { theta, variances })
    }

    pub fn n(&self) -> usize {
        self.variances.len()
    }
}

pub fn form_initial_beliefs(params: &[RiParams], theta: f64) -> Result<InitialBeliefs, AcquisitionError> {
    let variances = params
        .iter()
        .enumerate()
        .map(|(agent, p)| {
            optimal_variance(p).map_err(|e| AcquisitionError::Agent { agent, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InitialBeliefs { theta, variances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(a: f64, b: f64, r: f64) -> RiParams {
        RiParams::new(a, b, r).unwrap()
    }

    /// Coarse log-spaced scan followed by repeated local refinement.
    fn grid_argmax(params: &RiParams, hi: f64) -> f64 {
        let f = |x: f64| -params.r * x - params.a * x.powf(-params.b);
        let (mut lo, mut hi) = (1e-4f64.min(hi / 10.0), hi);
        let mut best = lo;
        for _ in 0..12 {
            let steps = 2000;
            let mut best_val = f64::NEG_INFINITY;
            for k in 0..=steps {
                let x = lo + (hi - lo) * k as f64 / steps as f64;
                let v = f(x);
                if v > best_val {
                    best_val = v;
                    best = x;
                }
            }
            let h = (hi - lo) / steps as f64;
            lo = (best - 2.0 * h).max(1e-12);
            hi = best + 2.0 * h;
        }
        best
    }

    #[test]
    fn utility_examples() {
        assert_eq!(expected_utility(1.0, &p(1.0, 1.0, 1.0)).unwrap(), -2.0);
        assert_eq!(expected_utility(2.0, &p(1.0, 1.0, 1.0)).unwrap(), -2.5);
        assert_eq!(
            expected_utility(0.0, &p(1.0, 1.0, 1.0)),
            Err(AcquisitionError::NonPositiveVariance(0.0))
        );
        assert!(expected_utility(-1.0, &p(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn optimal_examples() {
        assert_eq!(optimal_variance(&p(1.0, 1.0, 1.0)).unwrap(), 1.0);
        let v = optimal_variance(&p(2.0, 1.0, 1.0)).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
        assert!((grid_argmax(&p(2.0, 1.0, 1.0), 10.0 * v) - v).abs() < 1e-6);
        let v = optimal_variance(&p(1.0, 2.0, 4.0)).unwrap();
        assert!((v - 2f64.powf(-1.0 / 3.0)).abs() < 1e-12);
        assert!((v - 0.7937005).abs() < 1e-7);
        assert!((grid_argmax(&p(1.0, 2.0, 4.0), 10.0 * v) - v).abs() < 1e-6);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(acquisition_cost(1.0, &p(3.0, 2.0, 1.0)).unwrap(), 3.0);
        assert_eq!(acquisition_cost(4.0, &p(1.0, 0.5, 1.0)).unwrap(), 0.5);
        let q = p(1.0, 1.0, 1.0);
        let ratio = acquisition_cost(2.0, &q).unwrap() / acquisition_cost(1.0, &q).unwrap();
        assert_eq!(ratio, 0.5);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(RiParams::new(0.0, 1.0, 1.0).is_err());
        assert!(RiParams::new(1.0, -1.0, 1.0).is_err());
        assert!(RiParams::new(1.0, 1.0, f64::NAN).is_err());
        let raw = RiParams { a: 1.0, b: 1.0, r: 0.0 };
        assert!(optimal_variance(&raw).is_err());
    }

    #[test]
    fn population_beliefs() {
        let init = form_initial_beliefs(&[p(1.0, 1.0, 1.0); 5], 0.6).unwrap();
        assert_eq!(init.theta, 0.6);
        assert_eq!(init.variances, vec![1.0; 5]);

        let mixed = [p(2.0, 1.0, 1.0), p(1.0, 2.0, 4.0), p(0.5, 0.7, 3.0)];
        let init = form_initial_beliefs(&mixed, 0.0).unwrap();
        for (q, v) in mixed.iter().zip(&init.variances) {
            assert!((grid_argmax(q, 10.0 * v) - v).abs() < 1e-6 * v.max(1.0));
        }

        let bad = [p(1.0, 1.0, 1.0), RiParams { a: 1.0, b: 1.0, r: 0.0 }];
        match form_initial_beliefs(&bad, 0.6) {
            Err(AcquisitionError::Agent { agent, .. }) => assert_eq!(agent, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn params() -> impl Strategy<Value = RiParams> {
        (0.05f64..20.0, 0.1f64..4.0, 0.05f64..20.0).prop_map(|(a, b, r)| RiParams { a, b, r })
    }

    proptest! {
        #[test]
        fn first_order_condition(q in params()) {
            let x = optimal_variance(&q).unwrap();
            // five-point central stencil
            let h = 1e-3 * x;
            let f = |y: f64| expected_utility(y, &q).unwrap();
            let d = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
            prop_assert!(d.abs() < 1e-8, "derivative {d}");
        }

        #[test]
        fn optimum_beats_perturbations(q in params()) {
            let x = optimal_variance(&q).unwrap();
            let best = expected_utility(x, &q).unwrap();
            for eps in [1e-3, 1e-2, 1e-1] {
                prop_assert!(expected_utility(x * (1.0 + eps), &q).unwrap() < best);
                prop_assert!(expected_utility(x * (1.0 - eps), &q).unwrap() < best);
            }
        }

        #[test]
        fn monotone_in_r_and_a(q in params(), factor in 1.01f64..5.0) {
            let x = optimal_variance(&q).unwrap();
            let more_r = optimal_variance(&RiParams { r: q.r * factor, ..q }).unwrap();
            let more_a = optimal_variance(&RiParams { a: q.a * factor, ..q }).unwrap();
            prop_assert!(more_r < x);
            prop_assert!(more_a > x);
        }

        #[test]
        fn joint_scaling_of_a_and_r_is_invisible(q in params(), c in 0.01f64..100.0) {
            let x = optimal_variance(&q).unwrap();
            let y = optimal_variance(&RiParams { a: q.a * c, r: q.r * c, ..q }).unwrap();
            prop_assert!((x - y).abs() <= 1e-12 * x);
        }
    }
}
