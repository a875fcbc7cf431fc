//! Directed weighted influence networks.
//!
//! Entry `(i, j)` of the weight matrix is the influence of agent `j` on
//! agent `i`. Every row is a probability vector over the agent's
//! neighbours, self-influence is zero unless explicitly allowed.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Maximum absolute row-sum error accepted for a validated network.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Rows loaded from text whose sum is off by at most this much are
/// renormalized instead of rejected.
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// A single broken constraint found by [`validate_network`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonStochasticRow { row: usize, sum: f64 },
    NegativeWeight { row: usize, col: usize },
    NonFiniteWeight { row: usize, col: usize },
    SelfLoop { row: usize },
    IsolatedRow { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonStochasticRow { row, sum } => {
                write!(f, "row {row} sums to {sum} instead of 1")
            }
            Violation::NegativeWeight { row, col } => write!(f, "negative weight at ({row}, {col})"),
            Violation::NonFiniteWeight { row, col } => {
                write!(f, "non-finite weight at ({row}, {col})")
            }
            Violation::SelfLoop { row } => write!(f, "self loop on row {row}"),
            Violation::IsolatedRow { row } => write!(f, "row {row} has no positive weight"),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("weight matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid network: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("invalid graph spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl NetworkError {
    /// The violation list, when this error came from validation.
    pub fn violations(&self) -> Option<&[Violation]> {
        match self {
            NetworkError::Invalid(v) => Some(v),
            _ => None,
        }
    }
}

/// A validated row-stochastic influence network.
///
/// Immutable once built. Rows are also kept in sparse form since the
/// simulator only ever needs the non-zero neighbours of each agent.
#[derive(Debug, Clone)]
pub struct Network {
    weights: DMatrix<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    self_loops: bool,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
    }
}

impl Network {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Non-zero `(column, weight)` pairs of row `i`, in column order.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn mean_out_degree(&self) -> f64 {
        let total: usize = (0..self.n()).map(|i| self.out_degree(i)).sum();
        total as f64 / self.n() as f64
    }

    pub fn allows_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn is_identity(&self) -> bool {
        self.weights == DMatrix::identity(self.n(), self.n())
    }

    /// The `n x n` identity network. Only meaningful as the degenerate
    /// "no social influence" reference case.
    pub fn identity(n: usize) -> Result<Self, NetworkError> {
        validate_network(DMatrix::identity(n, n), true)
    }

    /// Agents reachable from agent 0 following edges in either direction.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && (self.weights[(u, v)] > 0.0 || self.weights[(v, u)] > 0.0) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Check every network invariant and collect all violations.
pub fn validate_network(weights: DMatrix<f64>, allow_self_loops: bool) -> Result<Network, NetworkError> {
    let (rows, cols) = weights.shape();
    if rows != cols {
        return Err(NetworkError::NotSquare { rows, cols });
    }
    let mut violations = Vec::new();
    for i in 0..rows {
        let mut sum = 0.0;
        let mut any_positive = false;
        for j in 0..cols {
            let w = weights[(i, j)];
            if !w.is_finite() {
                violations.push(Violation::NonFiniteWeight { row: i, col: j });
                continue;
            }
            if w < 0.0 {
                violations.push(Violation::NegativeWeight { row: i, col: j });
            }
            if w > 0.0 {
                any_positive = true;
            }
            sum += w;
        }
        if !allow_self_loops && weights[(i, i)] != 0.0 {
            violations.push(Violation::SelfLoop { row: i });
        }
        if !any_positive {
            violations.push(Violation::IsolatedRow { row: i });
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL || !sum.is_finite() {
            violations.push(Violation::NonStochasticRow { row: i, sum });
        }
    }
    if !violations.is_empty() {
        return Err(NetworkError::Invalid(violations));
    }
    let sparse = (0..rows)
        .map(|i| {
            (0..cols)
                .filter_map(|j| {
                    let w = weights[(i, j)];
                    (w != 0.0).then_some((j, w))
                })
                .collect()
        })
        .collect();
    Ok(Network {
        weights,
        rows: sparse,
        self_loops: allow_self_loops,
    })
}

/// Which family of graph to build.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphKind {
    /// Preferential attachment, each new node brings `m` edges.
    BarabasiAlbert { m: usize },
    Complete,
    /// Each agent listens to its `k` nearest neighbours on either side.
    Ring { k: usize },
    CustomFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub n: usize,
    pub seed: u64,
}

impl GraphSpec {
    pub fn check(&self) -> Result<(), NetworkError> {
        let n = self.n;
        let bad = |msg: String| Err(NetworkError::InvalidSpec(msg));
        match &self.kind {
            GraphKind::CustomFile(_) => Ok(()),
            _ if n < 2 => bad(format!("need at least 2 agents, got {n}")),
            GraphKind::BarabasiAlbert { m } if *m == 0 || *m >= n => {
                bad(format!("attachment parameter m={m} must satisfy 1 <= m < n={n}"))
            }
            GraphKind::Ring { k } if *k == 0 || 2 * k >= n => {
                bad(format!("ring span k={k} must satisfy 1 <= k < n/2 (n={n})"))
            }
            _ => Ok(()),
        }
    }
}

/// Build a network from its spec. Pure in `spec`: the same spec always
/// yields a bit-identical weight matrix.
pub fn generate(spec: &GraphSpec) -> Result<Network, NetworkError> {
    spec.check()?;
    let n = spec.n;
    let adjacency = match &spec.kind {
        GraphKind::CustomFile(path) => return load_network(path),
        GraphKind::BarabasiAlbert { m } => barabasi_albert(n, *m, spec.seed),
        GraphKind::Complete => {
            let mut adj = vec![BTreeSet::new(); n];
            for (i, set) in adj.iter_mut().enumerate() {
                set.extend((0..n).filter(|&j| j != i));
            }
            adj
        }
        GraphKind::Ring { k } => {
            let mut adj = vec![BTreeSet::new(); n];
            for (i, set) in adj.iter_mut().enumerate() {
                for d in 1..=*k {
                    set.insert((i + d) % n);
                    set.insert((i + n - d) % n);
                }
            }
            adj
        }
    };
    let mut weights = DMatrix::zeros(n, n);
    for (i, neighbours) in adjacency.iter().enumerate() {
        let w = 1.0 / neighbours.len() as f64;
        for &j in neighbours {
            weights[(i, j)] = w;
        }
    }
    validate_network(weights, false)
}

/// Undirected preferential attachment: a star on `m + 1` nodes, then each
/// new node links to `m` distinct existing nodes drawn proportionally to
/// degree.
fn barabasi_albert(n: usize, m: usize, seed: u64) -> Vec<BTreeSet<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![BTreeSet::new(); n];
    // degree-weighted urn: each node appears once per incident edge
    let mut urn: Vec<usize> = Vec::with_capacity(2 * m * n);
    for leaf in 1..=m {
        adj[0].insert(leaf);
        adj[leaf].insert(0);
        urn.push(0);
        urn.push(leaf);
    }
    for source in (m + 1)..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            targets.insert(urn[rng.random_range(0..urn.len())]);
        }
        for &t in &targets {
            adj[source].insert(t);
            adj[t].insert(source);
            urn.push(t);
            urn.push(source);
        }
    }
    adj
}

/// Write the network as `n <count>` followed by one `i j w` line per
/// non-zero entry, weights with 17 significant digits.
pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# beliefnet network, row i lists the influence of j on i")?;
    writeln!(out, "n {}", net.n())?;
    for i in 0..net.n() {
        for &(j, w) in net.row(i) {
            writeln!(out, "{i} {j} {w:.16e}")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let text = fs::read_to_string(path)?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<Network, NetworkError> {
    let perr = |line: usize, msg: String| NetworkError::Parse { line, msg };
    let mut weights: Option<DMatrix<f64>> = None;
    let mut seen = BTreeSet::new();
    let mut self_loops = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let Some(w) = weights.as_mut() else {
            if tokens.len() != 2 || tokens[0] != "n" {
                return Err(perr(line_no, format!("expected `n <count>`, found `{content}`")));
            }
            let n: usize = tokens[1]
                .parse()
                .map_err(|_| perr(line_no, format!("bad agent count `{}`", tokens[1])))?;
            if n == 0 {
                return Err(perr(line_no, "agent count must be positive".into()));
            }
            weights = Some(DMatrix::zeros(n, n));
            continue;
        };
        if tokens.len() != 3 {
            return Err(perr(line_no, format!("expected `i j w`, found `{content}`")));
        }
        let n = w.nrows();
        let index = |tok: &str| -> Result<usize, NetworkError> {
            let v: usize = tok
                .parse()
                .map_err(|_| perr(line_no, format!("bad index `{tok}`")))?;
            if v >= n {
                return Err(perr(line_no, format!("index {v} out of range for n={n}")));
            }
            Ok(v)
        };
        let i = index(tokens[0])?;
        let j = index(tokens[1])?;
        let value: f64 = tokens[2]
            .parse()
            .map_err(|_| perr(line_no, format!("bad weight `{}`", tokens[2])))?;
        if !seen.insert((i, j)) {
            return Err(perr(line_no, format!("duplicate entry for ({i}, {j})")));
        }
        if i == j {
            self_loops = true;
        }
        w[(i, j)] = value;
    }

    let mut weights = weights.ok_or_else(|| perr(0, "missing `n <count>` header".into()))?;
    for i in 0..weights.nrows() {
        let sum: f64 = weights.row(i).iter().sum();
        let err = (sum - 1.0).abs();
        if err > ROW_SUM_TOL && err <= RENORMALIZE_TOL && weights.row(i).iter().all(|&x| x >= 0.0) {
            log::warn!("row {i} sums to {sum}; renormalizing");
            for j in 0..weights.ncols() {
                weights[(i, j)] /= sum;
            }
        }
    }
    // a file that lists i == i edges is only ever the identity test case
    let identity_like = self_loops && weights == DMatrix::identity(weights.nrows(), weights.ncols());
    validate_network(weights, identity_like)
}
