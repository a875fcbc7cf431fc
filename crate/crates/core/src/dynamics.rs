//! Belief-update dynamics and Monte-Carlo ensembles.
//!
//! At every round each agent publishes a signal drawn from its current
//! Gaussian belief, averages its neighbours' signals into a social signal
//! and performs a conjugate Gaussian update against it. Variances and
//! update weights never depend on realized signals, only means do.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::acquisition::InitialBeliefs;
use crate::network::Network;

/// Replicates are simulated in fixed-size batches so the reduction order,
/// and therefore every floating-point result, is independent of how many
/// threads run them.
const BATCH: u64 = 64;

/// Histogram bin width for recorded signal histograms.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("variance must be non-negative, got {what} = {value}")]
    NegativeVariance { what: &'static str, value: f64 },
    #[error("state is at t={state} but signals are from t={signals}")]
    TimeMismatch { state: usize, signals: usize },
    #[error("invalid simulation config: {0}")]
    Config(String),
}

fn expect_len(what: &'static str, expected: usize, found: usize) -> Result<(), DynamicsError> {
    if expected == found {
        Ok(())
    } else {
        Err(DynamicsError::DimensionMismatch { what, expected, found })
    }
}

/// Beliefs of all agents at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub t: usize,
    pub pi: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl BeliefState {
    /// Everyone starts centred on the true state.
    pub fn initial(init: &InitialBeliefs) -> Self {
        BeliefState {
            t: 0,
            pi: vec![init.theta; init.n()],
            sigma2: init.variances.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    pub t: usize,
    pub s: Vec<f64>,
}

/// The Gaussian approximation of each agent's averaged neighbour signal,
/// together with the resulting update weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialSignal {
    pub eta: Vec<f64>,
    pub sigma2_y: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Result of a single-agent update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub pi: f64,
    pub sigma2: f64,
    pub alpha: f64,
}

/// Weight placed on the social signal. An agent whose own belief is
/// already a point mass does not move.
pub fn update_weight(sigma2: f64, sigma2_y: f64) -> f64 {
    if sigma2 == 0.0 {
        0.0
    } else {
        sigma2 / (sigma2 + sigma2_y)
    }
}

/// Posterior of `N(pi, sigma2)` after observing `eta` with noise variance
/// `sigma2_y`.
pub fn bayesian_update(pi: f64, sigma2: f64, eta: f64, sigma2_y: f64) -> Result<Update, DynamicsError> {
    if !(sigma2 >= 0.0) {
        return Err(DynamicsError::NegativeVariance { what: "sigma2", value: sigma2 });
    }
    if !(sigma2_y >= 0.0) {
        return Err(DynamicsError::NegativeVariance { what: "sigma2_y", value: sigma2_y });
    }
    if sigma2 == 0.0 {
        return Ok(Update { pi, sigma2: 0.0, alpha: 0.0 });
    }
    let alpha = update_weight(sigma2, sigma2_y);
    Ok(Update {
        pi: alpha * eta + (1.0 - alpha) * pi,
        sigma2: sigma2 * sigma2_y / (sigma2 + sigma2_y),
        alpha,
    })
}

/// `sum_j w_ij^2 sigma2_j` for every agent.
pub fn social_variance(net: &Network, sigma2: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    expect_len("sigma2", net.n(), sigma2.len())?;
    Ok((0..net.n())
        .map(|i| net.row(i).iter().map(|&(j, w)| w * w * sigma2[j]).sum())
        .collect())
}

pub fn combine_social_signal(
    net: &Network,
    signals: &SignalVector,
    state: &BeliefState,
) -> Result<SocialSignal, DynamicsError> {
    let n = net.n();
    expect_len("signals", n, signals.s.len())?;
    expect_len("belief means", n, state.pi.len())?;
    let sigma2_y = social_variance(net, &state.sigma2)?;
    let eta = (0..n)
        .map(|i| net.row(i).iter().map(|&(j, w)| w * signals.s[j]).sum())
        .collect();
    let alpha = state
        .sigma2
        .iter()
        .zip(&sigma2_y)
        .map(|(&s2, &sy)| update_weight(s2, sy))
        .collect();
    Ok(SocialSignal { eta, sigma2_y, alpha })
}

/// Every agent publishes an independent draw from its own belief.
pub fn draw_signals<R: Rng + ?Sized>(state: &BeliefState, rng: &mut R) -> SignalVector {
    let s = state
        .pi
        .iter()
        .zip(&state.sigma2)
        .map(|(&pi, &s2)| {
            let z: f64 = rng.sample(StandardNormal);
            if s2 == 0.0 {
                pi
            } else {
                pi + s2.sqrt() * z
            }
        })
        .collect();
    SignalVector { t: state.t, s }
}

/// One synchronous round for the whole network.
pub fn step(net: &Network, state: &BeliefState, signals: &SignalVector) -> Result<BeliefState, DynamicsError> {
    if state.t != signals.t {
        return Err(DynamicsError::TimeMismatch { state: state.t, signals: signals.t });
    }
    let social = combine_social_signal(net, signals, state)?;
    let mut pi = Vec::with_capacity(net.n());
    let mut sigma2 = Vec::with_capacity(net.n());
    for i in 0..net.n() {
        let u = bayesian_update(state.pi[i], state.sigma2[i], social.eta[i], social.sigma2_y[i])?;
        pi.push(u.pi);
        sigma2.push(u.sigma2);
    }
    Ok(BeliefState { t: state.t + 1, pi, sigma2 })
}

/// The signal-free part of the dynamics: belief variances at every step
/// and the update weights used between consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    /// `sigma2[t][i]`, for `t = 0..=steps`.
    pub sigma2: Vec<Vec<f64>>,
    /// `alpha[t][i]`, for `t = 0..steps`.
    pub alpha: Vec<Vec<f64>>,
}

impl VarianceSchedule {
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }
}

/// Iterate the variance recursion for `horizon` steps, stopping early once
/// every variance falls below `stop_below` (if given).
pub fn variance_schedule(
    net: &Network,
    sigma2_0: &[f64],
    horizon: usize,
    stop_below: Option<f64>,
) -> Result<VarianceSchedule, DynamicsError> {
    expect_len("initial variances", net.n(), sigma2_0.len())?;
    let mut sigma2 = vec![sigma2_0.to_vec()];
    let mut alpha = Vec::new();
    for _ in 0..horizon {
        let current = sigma2.last().expect("non-empty");
        if let Some(tol) = stop_below {
            if current.iter().cloned().fold(0.0, f64::max) < tol {
                break;
            }
        }
        let sy = social_variance(net, current)?;
        let mut next = Vec::with_capacity(net.n());
        let mut a = Vec::with_capacity(net.n());
        for (&s2, &y) in current.iter().zip(&sy) {
            let u = bayesian_update(0.0, s2, 0.0, y)?;
            next.push(u.sigma2);
            a.push(u.alpha);
        }
        alpha.push(a);
        sigma2.push(next);
    }
    Ok(VarianceSchedule { sigma2, alpha })
}

/// Per-step, per-agent intervals used to count how many signal draws fall
/// inside a reference band. Indexed `[t * n + agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub n_agents: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BandTable {
    pub fn steps(&self) -> usize {
        if self.n_agents == 0 {
            0
        } else {
            self.lo.len() / self.n_agents
        }
    }

    fn contains(&self, idx: usize, x: f64) -> bool {
        self.lo[idx] <= x && x <= self.hi[idx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub theta: f64,
    pub horizon: usize,
    pub replicates: u64,
    pub seed: u64,
    /// Stop once every belief variance is below this value.
    pub convergence_tol: Option<f64>,
    /// Keep every replicate's full trajectory.
    pub record_trajectories: bool,
    /// Steps at which per-agent signal histograms are collected.
    pub histogram_steps: Vec<usize>,
    /// Optional reference bands; draws falling inside are counted.
    pub bands: Option<BandTable>,
    /// Worker threads, 0 uses the ambient rayon pool. Never affects results.
    pub workers: usize,
}

impl SimConfig {
    pub fn new(theta: f64, horizon: usize, replicates: u64, seed: u64) -> Self {
        SimConfig {
            theta,
            horizon,
            replicates,
            seed,
            convergence_tol: None,
            record_trajectories: false,
            histogram_steps: Vec::new(),
            bands: None,
            workers: 0,
        }
    }

    fn check(&self) -> Result<(), DynamicsError> {
        if self.replicates == 0 {
            return Err(DynamicsError::Config("replicates must be at least 1".into()));
        }
        if !self.theta.is_finite() {
            return Err(DynamicsError::Config(format!("theta must be finite, got {}", self.theta)));
        }
        if let Some(tol) = self.convergence_tol {
            if !(tol > 0.0) {
                return Err(DynamicsError::Config(format!("convergence_tol must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

/// One-pass mean and variance accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Pairwise combination of two partial accumulators.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    /// Unbiased sample variance; NaN with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// One row of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub replicate: u64,
    pub t: usize,
    pub agent: usize,
    pub signal: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Signal histogram of every agent at one step, bins keyed by
/// `floor(s / HISTOGRAM_BIN_WIDTH)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub t: usize,
    pub bins: Vec<BTreeMap<i64, u64>>,
}

pub fn histogram_bin(x: f64) -> i64 {
    (x / HISTOGRAM_BIN_WIDTH).floor() as i64
}

#[derive(Debug, Clone, PartialEq)]
struct Accumulators {
    signal: Vec<Moments>,
    mean: Vec<Moments>,
    band_hits: Vec<u64>,
    histograms: Vec<Histogram>,
    trajectories: Vec<TrajectoryRow>,
}

impl Accumulators {
    fn new(cells: usize, n: usize, hist_steps: &[usize], bands: bool) -> Self {
        Accumulators {
            signal: vec![Moments::default(); cells],
            mean: vec![Moments::default(); cells],
            band_hits: if bands { vec![0; cells] } else { Vec::new() },
            histograms: hist_steps
                .iter()
                .map(|&t| Histogram { t, bins: vec![BTreeMap::new(); n] })
                .collect(),
            trajectories: Vec::new(),
        }
    }

    fn merge(&mut self, other: Accumulators) {
        for (a, b) in self.signal.iter_mut().zip(&other.signal) {
            a.merge(b);
        }
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            a.merge(b);
        }
        for (a, b) in self.band_hits.iter_mut().zip(&other.band_hits) {
            *a += b;
        }
        for (h, o) in self.histograms.iter_mut().zip(other.histograms) {
            for (bins, obins) in h.bins.iter_mut().zip(o.bins) {
                for (k, c) in obins {
                    *bins.entry(k).or_insert(0) += c;
                }
            }
        }
        self.trajectories.extend(other.trajectories);
    }
}

/// Moment statistics of a Monte-Carlo ensemble, indexed by step and agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub n_agents: usize,
    pub theta: f64,
    pub replicates: u64,
    /// Belief variances per step, identical across replicates.
    pub sigma2: Vec<Vec<f64>>,
    signal: Vec<Moments>,
    mean: Vec<Moments>,
    bands: Option<BandTable>,
    band_hits: Vec<u64>,
    pub histograms: Vec<Histogram>,
    pub trajectories: Vec<TrajectoryRow>,
}

impl Ensemble {
    /// Number of recorded steps (`t = 0..steps()`).
    pub fn steps(&self) -> usize {
        self.sigma2.len()
    }

    pub fn signal(&self, t: usize, agent: usize) -> &Moments {
        &self.signal[t * self.n_agents + agent]
    }

    pub fn belief_mean(&self, t: usize, agent: usize) -> &Moments {
        &self.mean[t * self.n_agents + agent]
    }

    pub fn bands(&self) -> Option<&BandTable> {
        self.bands.as_ref()
    }

    /// Fraction of draws inside the reference band, if bands were given.
    pub fn band_coverage(&self, t: usize, agent: usize) -> Option<f64> {
        self.bands.as_ref()?;
        let hits = self.band_hits[t * self.n_agents + agent];
        Some(hits as f64 / self.replicates as f64)
    }
}

fn run_batch(
    net: &Network,
    init: &InitialBeliefs,
    cfg: &SimConfig,
    steps: usize,
    range: std::ops::Range<u64>,
) -> Result<Accumulators, DynamicsError> {
    let n = net.n();
    let cells = (steps + 1) * n;
    let mut acc = Accumulators::new(cells, n, &cfg.histogram_steps, cfg.bands.is_some());
    for replicate in range {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(replicate);
        let mut state = BeliefState::initial(init);
        state.pi.fill(cfg.theta);
        for t in 0..=steps {
            let signals = draw_signals(&state, &mut rng);
            let base = t * n;
            for i in 0..n {
                let s = signals.s[i];
                acc.signal[base + i].push(s);
                acc.mean[base + i].push(state.pi[i]);
                if let Some(b) = &cfg.bands {
                    if b.contains(base + i, s) {
                        acc.band_hits[base + i] += 1;
                    }
                }
                if cfg.record_trajectories {
                    acc.trajectories.push(TrajectoryRow {
                        replicate,
                        t,
                        agent: i,
                        signal: s,
                        mean: state.pi[i],
                        variance: state.sigma2[i],
                    });
                }
            }
            for h in acc.histograms.iter_mut().filter(|h| h.t == t) {
                for (bins, &s) in h.bins.iter_mut().zip(&signals.s) {
                    *bins.entry(histogram_bin(s)).or_insert(0) += 1;
                }
            }
            if t < steps {
                state = step(net, &state, &signals)?;
            }
        }
    }
    Ok(acc)
}

/// Run `cfg.replicates` independent realizations of the dynamics.
///
/// Replicate `k` draws from its own ChaCha stream `k` under the master
/// seed, and partial results are merged in replicate order, so the output
/// is a pure function of the inputs regardless of worker count.
pub fn simulate_ensemble(net: &Network, init: &InitialBeliefs, cfg: &SimConfig) -> Result<Ensemble, DynamicsError> {
    cfg.check()?;
    expect_len("initial beliefs", net.n(), init.n())?;
    let schedule = variance_schedule(net, &init.variances, cfg.horizon, cfg.convergence_tol)?;
    let steps = schedule.steps();
    let n = net.n();
    if let Some(b) = &cfg.bands {
        expect_len("band agents", n, b.n_agents)?;
        if b.steps() < steps + 1 || b.lo.len() != b.hi.len() {
            return Err(DynamicsError::Config(format!(
                "band table covers {} steps, simulation needs {}",
                b.steps(),
                steps + 1
            )));
        }
    }
    let hist_steps: Vec<usize> = cfg.histogram_steps.iter().copied().filter(|&t| t <= steps).collect();
    if hist_steps.len() < cfg.histogram_steps.len() {
        log::warn!("histogram steps beyond t={steps} ignored");
    }
    let cfg = SimConfig { histogram_steps: hist_steps, ..cfg.clone() };

    let batches: Vec<u64> = (0..cfg.replicates.div_ceil(BATCH)).collect();
    let work = || {
        batches
            .par_iter()
            .map(|&b| {
                let lo = b * BATCH;
                let hi = (lo + BATCH).min(cfg.replicates);
                run_batch(net, init, &cfg, steps, lo..hi)
            })
            .collect::<Vec<_>>()
    };
    let partials = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| DynamicsError::Config(format!("thread pool: {e}")))?
            .install(work)
    } else {
        work()
    };

    let mut total = Accumulators::new((steps + 1) * n, n, &cfg.histogram_steps, cfg.bands.is_some());
    for part in partials {
        total.merge(part?);
    }
    debug_assert!(total.signal.iter().all(|m| m.count == cfg.replicates));
    Ok(Ensemble {
        n_agents: n,
        theta: cfg.theta,
        replicates: cfg.replicates,
        sigma2: schedule.sigma2,
        signal: total.signal,
        mean: total.mean,
        bands: cfg.bands.clone(),
        band_hits: total.band_hits,
        histograms: total.histograms,
        trajectories: total.trajectories,
    })
}
