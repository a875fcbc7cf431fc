//! Run configuration files.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! theta = 0.6
//!
//! [network]
//! kind = "barabasi_albert"   # complete | ring | custom_file
//! n = 100
//! m = 3
//! seed = 42
//!
//! [agents]
//! mode = "uniform_variance"  # homogeneous | per_agent
//! low = 0.009
//! high = 0.18
//! seed = 42
//!
//! [sim]
//! horizon = 30
//! replicates = 10000
//! seed = 2024
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::acquisition::{self, AcquisitionError, InitialBeliefs, RiParams};
use crate::dynamics::SimConfig;
use crate::network::{self, GraphKind, GraphSpec, Network, NetworkError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    theta: f64,
    network: RawNetwork,
    agents: RawAgents,
    sim: RawSim,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    kind: String,
    n: Option<usize>,
    m: Option<usize>,
    k: Option<usize>,
    #[serde(default)]
    seed: u64,
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgents {
    mode: String,
    a: Option<f64>,
    b: Option<f64>,
    r: Option<f64>,
    params: Option<Vec<[f64; 3]>>,
    low: Option<f64>,
    high: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    horizon: usize,
    replicates: u64,
    #[serde(default)]
    seed: u64,
    convergence_tol: Option<f64>,
    #[serde(default)]
    record_trajectories: bool,
    #[serde(default)]
    histogram: Vec<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// How initial belief variances are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    /// Every agent solves the same acquisition problem.
    Homogeneous(RiParams),
    /// One parameter triple per agent.
    PerAgent(Vec<RiParams>),
    /// Variances drawn uniformly from `[low, high]`, bypassing acquisition.
    UniformVariance { low: f64, high: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub theta: f64,
    pub network: GraphSpec,
    pub agents: AgentSpec,
    pub horizon: usize,
    pub replicates: u64,
    pub seed: u64,
    pub convergence_tol: Option<f64>,
    pub record_trajectories: bool,
    pub histogram_steps: Vec<usize>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Relative paths inside the file are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        if !raw.theta.is_finite() {
            return invalid("theta must be finite");
        }
        let network = parse_network(raw.network, base)?;
        let agents = parse_agents(raw.agents)?;
        if raw.sim.replicates == 0 {
            return invalid("replicates must be at least 1");
        }
        if let Some(tol) = raw.sim.convergence_tol {
            if !(tol > 0.0) {
                return invalid(format!("convergence_tol must be positive, got {tol}"));
            }
        }
        let output_dir = match raw.output.dir {
            Some(d) if d.is_relative() => base.join(d),
            Some(d) => d,
            None => base.join("out"),
        };
        Ok(RunConfig {
            theta: raw.theta,
            network,
            agents,
            horizon: raw.sim.horizon,
            replicates: raw.sim.replicates,
            seed: raw.sim.seed,
            convergence_tol: raw.sim.convergence_tol,
            record_trajectories: raw.sim.record_trajectories,
            histogram_steps: raw.sim.histogram,
            output_dir,
        })
    }

    pub fn build_network(&self) -> Result<Network, ConfigError> {
        Ok(network::generate(&self.network)?)
    }

    pub fn initial_beliefs(&self, n: usize) -> Result<InitialBeliefs, ConfigError> {
        match &self.agents {
            AgentSpec::Homogeneous(p) => Ok(acquisition::form_initial_beliefs(&vec![*p; n], self.theta)?),
            AgentSpec::PerAgent(ps) => {
                if ps.len() != n {
                    return invalid(format!("{} agent parameter triples for {n} agents", ps.len()));
                }
                Ok(acquisition::form_initial_beliefs(ps, self.theta)?)
            }
            AgentSpec::UniformVariance { low, high, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let variances = (0..n).map(|_| rng.random_range(*low..=*high)).collect();
                Ok(InitialBeliefs::from_variances(self.theta, variances)?)
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            convergence_tol: self.convergence_tol,
            record_trajectories: self.record_trajectories,
            histogram_steps: self.histogram_steps.clone(),
            ..SimConfig::new(self.theta, self.horizon, self.replicates, self.seed)
        }
    }
}

fn parse_network(raw: RawNetwork, base: &Path) -> Result<GraphSpec, ConfigError> {
    let kind = match raw.kind.as_str() {
        "custom_file" | "file" => {
            let Some(path) = raw.path else {
                return invalid("network kind custom_file needs `path`");
            };
            if raw.m.is_some() || raw.k.is_some() {
                return invalid("custom_file networks take no `m` or `k`");
            }
            let path = if path.is_relative() { base.join(path) } else { path };
            GraphKind::CustomFile(path)
        }
        other => {
            if raw.path.is_some() {
                return invalid(format!("`path` given for generated network kind `{other}`; exactly one network source is allowed"));
            }
            match other {
                "barabasi_albert" | "ba" => GraphKind::BarabasiAlbert { m: raw.m.unwrap_or(3) },
                "complete" => GraphKind::Complete,
                "ring" => GraphKind::Ring { k: raw.k.unwrap_or(1) },
                _ => return invalid(format!("unknown network kind `{other}`")),
            }
        }
    };
    let n = match (&kind, raw.n) {
        (GraphKind::CustomFile(_), n) => n.unwrap_or(0),
        (_, Some(n)) => n,
        (_, None) => return invalid("network needs `n`"),
    };
    let spec = GraphSpec { kind, n, seed: raw.seed };
    spec.check()?;
    Ok(spec)
}

fn parse_agents(raw: RawAgents) -> Result<AgentSpec, ConfigError> {
    let homogeneous = raw.a.is_some() || raw.b.is_some() || raw.r.is_some();
    let per_agent = raw.params.is_some();
    let uniform = raw.low.is_some() || raw.high.is_some() || raw.seed.is_some();
    let extra = |allowed: bool, name: &str| -> Result<(), ConfigError> {
        if allowed {
            Ok(())
        } else {
            invalid(format!("agents mode `{}` does not take {name} fields", raw.mode))
        }
    };
    match raw.mode.as_str() {
        "homogeneous" => {
            extra(!per_agent, "`params`")?;
            extra(!uniform, "`low`/`high`/`seed`")?;
            match (raw.a, raw.b, raw.r) {
                (Some(a), Some(b), Some(r)) => Ok(AgentSpec::Homogeneous(RiParams::new(a, b, r)?)),
                _ => invalid("homogeneous agents need `a`, `b` and `r`"),
            }
        }
        "per_agent" => {
            extra(!homogeneous, "`a`/`b`/`r`")?;
            extra(!uniform, "`low`/`high`/`seed`")?;
            let params = raw.params.unwrap_or_default();
            if params.is_empty() {
                return invalid("per_agent mode needs a non-empty `params` list of [a, b, r]");
            }
            let ps = params
                .iter()
                .map(|&[a, b, r]| RiParams::new(a, b, r))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AgentSpec::PerAgent(ps))
        }
        "uniform_variance" => {
            extra(!homogeneous, "`a`/`b`/`r`")?;
            extra(!per_agent, "`params`")?;
            match (raw.low, raw.high) {
                (Some(low), Some(high)) if low > 0.0 && low <= high && high.is_finite() => {
                    Ok(AgentSpec::UniformVariance { low, high, seed: raw.seed.unwrap_or(0) })
                }
                (Some(_), Some(_)) => invalid("uniform_variance needs 0 < low <= high"),
                _ => invalid("uniform_variance needs `low` and `high`"),
            }
        }
        other => invalid(format!("unknown agents mode `{other}`")),
    }
}
