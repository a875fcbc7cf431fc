//! CSV tables exchanged between commands.
//!
//! All tables carry a mandatory header, use LF line endings and write
//! reals with 17 significant digits.

use std::io::{Read, Write};

use thiserror::Error;

use crate::analytics::{EmpiricalCell, EmpiricalMoments, MomentStep, MomentTrajectory};
use crate::dynamics::{Ensemble, HISTOGRAM_BIN_WIDTH};
use crate::estimation::{CostObservation, RewardObservation};

pub const MOMENT_HEADER: [&str; 8] = ["t", "agent", "mean_s", "var_s", "mean_pi", "var_pi", "sigma2", "count"];
pub const ANALYTIC_HEADER: [&str; 8] = [
    "t", "agent", "mean", "var_exact", "var_eq8", "sigma2", "band_lo", "band_hi",
];
pub const TRAJECTORY_HEADER: [&str; 6] = ["replicate", "t", "agent", "signal", "mean", "variance"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["t", "agent", "bin_lo", "bin_hi", "count"];
pub const COST_HEADER: [&str; 3] = ["cost", "variance", "count"];
pub const REWARD_HEADER: [&str; 2] = ["reward", "variance"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("table has no data rows")]
    Empty,
    #[error("malformed table: {0}")]
    Shape(String),
}

/// Decimal text with 17 significant digits.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>, TableError> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

fn reader<R: Read>(r: R, header: &[&str]) -> Result<csv::Reader<R>, TableError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let found = rdr.headers()?;
    if found.iter().ne(header.iter().copied()) {
        return Err(TableError::Header {
            expected: header.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T, TableError> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec.get(idx).ok_or_else(|| TableError::Parse { line, msg: format!("missing column {name}") })?;
    raw.parse()
        .map_err(|_| TableError::Parse { line, msg: format!("bad {name} value `{raw}`") })
}

pub fn write_moments<W: Write>(ens: &Ensemble, w: W) -> Result<(), TableError> {
    let mut out = writer(w, &MOMENT_HEADER)?;
    for t in 0..ens.steps() {
        for i in 0..ens.n_agents {
            let s = ens.signal(t, i);
            let m = ens.belief_mean(t, i);
            out.write_record([
                t.to_string(),
                i.to_string(),
                real(s.mean),
                real(s.variance()),
                real(m.mean),
                real(m.variance()),
                real(ens.sigma2[t][i]),
                s.count.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn check_grid(cells: &[(usize, usize)]) -> Result<usize, TableError> {
    let n = cells.iter().take_while(|c| c.0 == 0).count();
    if n == 0 || cells.len() % n != 0 {
        return Err(TableError::Shape("rows do not form a complete step x agent grid".into()));
    }
    for (k, &(t, agent)) in cells.iter().enumerate() {
        if t != k / n || agent != k % n {
            return Err(TableError::Shape(format!(
                "row {} is (t={t}, agent={agent}), expected (t={}, agent={})",
                k + 1,
                k / n,
                k % n
            )));
        }
    }
    Ok(n)
}

pub fn read_moments<R: Read>(r: R) -> Result<EmpiricalMoments, TableError> {
    let mut rdr = reader(r, &MOMENT_HEADER)?;
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        cells.push(EmpiricalCell {
            t: field(&rec, 0, "t")?,
            agent: field(&rec, 1, "agent")?,
            mean_s: field(&rec, 2, "mean_s")?,
            var_s: field(&rec, 3, "var_s")?,
            count: field(&rec, 7, "count")?,
            coverage: None,
        });
    }
    if cells.is_empty() {
        return Err(TableError::Empty);
    }
    let keys: Vec<_> = cells.iter().map(|c| (c.t, c.agent)).collect();
    let n_agents = check_grid(&keys)?;
    Ok(EmpiricalMoments { n_agents, cells })
}

pub fn write_analytic<W: Write>(traj: &MomentTrajectory, w: W) -> Result<(), TableError> {
    let mut out = writer(w, &ANALYTIC_HEADER)?;
    for s in &traj.steps {
        for i in 0..traj.n_agents {
            out.write_record([
                s.t.to_string(),
                i.to_string(),
                real(s.mean[i]),
                real(s.var_exact[i]),
                real(s.var_eq8[i]),
                real(s.sigma2[i]),
                real(s.band_lo[i]),
                real(s.band_hi[i]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_analytic<R: Read>(r: R) -> Result<MomentTrajectory, TableError> {
    let mut rdr = reader(r, &ANALYTIC_HEADER)?;
    let mut rows: Vec<(usize, usize, [f64; 6])> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut vals = [0.0; 6];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = field(&rec, k + 2, ANALYTIC_HEADER[k + 2])?;
        }
        rows.push((field(&rec, 0, "t")?, field(&rec, 1, "agent")?, vals));
    }
    if rows.is_empty() {
        return Err(TableError::Empty);
    }
    let keys: Vec<_> = rows.iter().map(|r| (r.0, r.1)).collect();
    let n = check_grid(&keys)?;
    let steps = rows
        .chunks(n)
        .enumerate()
        .map(|(t, chunk)| {
            let col = |k: usize| chunk.iter().map(|r| r.2[k]).collect::<Vec<_>>();
            MomentStep {
                t,
                mean: col(0),
                var_exact: col(1),
                var_eq8: col(2),
                sigma2: col(3),
                band_lo: col(4),
                band_hi: col(5),
            }
        })
        .collect();
    Ok(MomentTrajectory { theta: rows[0].2[0], n_agents: n, steps })
}

pub fn write_trajectories<W: Write>(ens: &Ensemble, w: W) -> Result<(), TableError> {
    let mut out = writer(w, &TRAJECTORY_HEADER)?;
    for row in &ens.trajectories {
        out.write_record([
            row.replicate.to_string(),
            row.t.to_string(),
            row.agent.to_string(),
            real(row.signal),
            real(row.mean),
            real(row.variance),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_histograms<W: Write>(ens: &Ensemble, w: W) -> Result<(), TableError> {
    let mut out = writer(w, &HISTOGRAM_HEADER)?;
    for h in &ens.histograms {
        for (agent, bins) in h.bins.iter().enumerate() {
            for (&bin, &count) in bins {
                out.write_record([
                    h.t.to_string(),
                    agent.to_string(),
                    real(bin as f64 * HISTOGRAM_BIN_WIDTH),
                    real((bin + 1) as f64 * HISTOGRAM_BIN_WIDTH),
                    count.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_cost_observations<R: Read>(r: R) -> Result<Vec<CostObservation>, TableError> {
    let mut rdr = reader(r, &COST_HEADER)?;
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        obs.push(CostObservation {
            cost: field(&rec, 0, "cost")?,
            variance: field(&rec, 1, "variance")?,
            count: field(&rec, 2, "count")?,
        });
    }
    if obs.is_empty() {
        return Err(TableError::Empty);
    }
    Ok(obs)
}

pub fn read_reward_observations<R: Read>(r: R) -> Result<Vec<RewardObservation>, TableError> {
    let mut rdr = reader(r, &REWARD_HEADER)?;
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        obs.push(RewardObservation {
            reward: field(&rec, 0, "reward")?,
            variance: field(&rec, 1, "variance")?,
        });
    }
    if obs.is_empty() {
        return Err(TableError::Empty);
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::InitialBeliefs;
    use crate::analytics::analytic_moments;
    use crate::dynamics::{simulate_ensemble, SimConfig};
    use crate::network::{generate, GraphKind, GraphSpec};

    fn setup() -> (Ensemble, MomentTrajectory) {
        let net = generate(&GraphSpec { kind: GraphKind::Ring { k: 1 }, n: 5, seed: 0 }).unwrap();
        let init = InitialBeliefs::from_variances(0.6, vec![0.01, 0.05, 0.02, 0.1, 0.07]).unwrap();
        let mut cfg = SimConfig::new(0.6, 3, 100, 4);
        cfg.histogram_steps = vec![1];
        cfg.record_trajectories = true;
        (simulate_ensemble(&net, &init, &cfg).unwrap(), analytic_moments(&net, &init, 3).unwrap())
    }

    #[test]
    fn real_has_seventeen_digits() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn analytic_table_roundtrip() {
        let (_, traj) = setup();
        let mut buf = Vec::new();
        write_analytic(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,agent,mean,var_exact,var_eq8,sigma2,band_lo,band_hi\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_analytic(&buf[..]).unwrap(), traj);
    }

    #[test]
    fn moment_table_matches_ensemble() {
        let (ens, _) = setup();
        let mut buf = Vec::new();
        write_moments(&ens, &mut buf).unwrap();
        let table = read_moments(&buf[..]).unwrap();
        assert_eq!(table, EmpiricalMoments::from_ensemble(&ens, None));
        assert_eq!(table.cells.len(), 4 * 5);
    }

    #[test]
    fn other_tables_have_headers() {
        let (ens, _) = setup();
        let mut buf = Vec::new();
        write_trajectories(&ens, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 100 * 4 * 5);
        assert!(text.starts_with("replicate,t,agent,signal,mean,variance\n"));
        let mut buf = Vec::new();
        write_histograms(&ens, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let total: u64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(total, 100 * 5);
    }

    #[test]
    fn malformed_tables() {
        assert!(matches!(read_analytic(&b"t,agent\n0,0\n"[..]), Err(TableError::Header { .. })));
        assert!(matches!(read_cost_observations(&b"cost,variance,count\n"[..]), Err(TableError::Empty)));
        assert!(matches!(read_cost_observations(&b""[..]), Err(TableError::Header { .. })));
        assert!(matches!(
            read_reward_observations(&b"reward,variance\n1,abc\n"[..]),
            Err(TableError::Parse { line: 2, .. })
        ));
        let gap = "t,agent,mean_s,var_s,mean_pi,var_pi,sigma2,count\n0,0,0,0,0,0,0,2\n0,1,0,0,0,0,0,2\n1,0,0,0,0,0,0,2\n";
        assert!(matches!(read_moments(gap.as_bytes()), Err(TableError::Shape(_))));
    }

    #[test]
    fn observation_tables() {
        let costs = read_cost_observations(&b"cost,variance,count\n10,0.04,137\n20,0.02,137\n"[..]).unwrap();
        assert_eq!(costs[1], CostObservation { cost: 20.0, variance: 0.02, count: 137 });
        let rewards = read_reward_observations(&b"reward,variance\n1,0.05\n"[..]).unwrap();
        assert_eq!(rewards, vec![RewardObservation { reward: 1.0, variance: 0.05 }]);
    }
}
