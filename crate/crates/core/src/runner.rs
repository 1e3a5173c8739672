//! Job orchestration and row output.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::baselines::{fd_greek, BumpSpec};
use crate::config::{OutputFormat, RunConfig};
use crate::engine::{simulate_paths, PathAccumulators, PathContext, PathSet, Perturbation, SimConfig};
use crate::error::{Error, Result};
use crate::greeks::{malliavin, Greek, GreekEstimate};
use crate::model::ModelSpec;
use crate::stats::agree_within;

pub const CSV_HEADER: &str = "estimator,greek,n_paths,n_steps,seed,value,std_error,clamp_count,wall_time_ms";
pub const COMPARE_HEADER: &str =
    "greek,n_paths,estimator,value,std_error,n_simulations,wall_time_ms,agrees_with_malliavin";

/// Combined-SE multiple used for agreement flags.
pub const AGREEMENT_SIGMAS: f64 = 3.0;

/// One output record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub estimator: String,
    pub greek: &'static str,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub value: f64,
    pub std_error: f64,
    pub clamp_count: u64,
    pub wall_time_ms: f64,
}

impl Row {
    fn new(label: String, greek: Greek, est: &GreekEstimate, sim: &SimConfig, wall_time_ms: f64) -> Self {
        Self {
            estimator: label,
            greek: greek.name(),
            n_paths: est.n_paths,
            n_steps: sim.n_steps,
            seed: sim.seed,
            value: est.value,
            std_error: est.std_error,
            clamp_count: est.clamp_count,
            wall_time_ms,
        }
    }

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.estimator,
            self.greek,
            self.n_paths,
            self.n_steps,
            self.seed,
            self.value,
            self.std_error,
            self.clamp_count,
            self.wall_time_ms
        )
    }
}

struct Clock(bool);

impl Clock {
    fn time<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
        let start = Instant::now();
        let out = f()?;
        let ms = if self.0 { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        Ok((out, ms))
    }
}

struct Job {
    model: ModelSpec,
    cfg: RunConfig,
    clock: Clock,
}

impl Job {
    fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { model: cfg.build_model()?, cfg: cfg.clone(), clock: Clock(cfg.output.timing) })
    }

    fn sim(&self, n_paths: usize) -> SimConfig {
        SimConfig { n_paths, ..self.cfg.sim }
    }

    /// Malliavin rows for `greeks` on one simulated batch; the simulation
    /// time is charged to every row since all of them need it.
    fn malliavin_rows(&self, greeks: &[Greek], n_paths: usize) -> Result<Vec<Row>> {
        let sim = self.sim(n_paths);
        let (paths, sim_ms) = self.clock.time(|| simulate_paths(&self.model, &self.cfg.init, &sim))?;
        self.rows_from_paths(&paths, greeks, &sim, sim_ms)
    }

    fn rows_from_paths(&self, paths: &PathSet, greeks: &[Greek], sim: &SimConfig, sim_ms: f64) -> Result<Vec<Row>> {
        greeks
            .iter()
            .map(|&g| {
                let (est, ms) = self.clock.time(|| malliavin(paths, &self.cfg.payoff, g))?;
                if est.degenerate_weight {
                    log::warn!("{}: more than 1% of weight divisors were floored", g.name());
                }
                Ok(Row::new("malliavin".into(), g, &est, sim, sim_ms + ms))
            })
            .collect()
    }

    fn fd_row(&self, bump: &BumpSpec, n_paths: usize) -> Result<Row> {
        let sim = self.sim(n_paths);
        let (est, ms) = self.clock.time(|| fd_greek(&self.model, &self.cfg.init, &sim, &self.cfg.payoff, bump))?;
        Ok(Row::new(bump.label(), bump.target.greek(), &est, &sim, ms))
    }

    fn sizes(&self) -> Vec<usize> {
        if self.cfg.sweep.is_empty() {
            vec![self.cfg.sim.n_paths]
        } else {
            self.cfg.sweep.clone()
        }
    }
}

/// Discounted price only.
pub fn price(cfg: &RunConfig) -> Result<Vec<Row>> {
    let job = Job::new(cfg)?;
    job.malliavin_rows(&[Greek::Price], cfg.sim.n_paths)
}

/// One row per requested Malliavin Greek, then one per bump, at
/// `sim.paths`.
pub fn run(cfg: &RunConfig) -> Result<Vec<Row>> {
    let job = Job::new(cfg)?;
    let mut rows = job.malliavin_rows(&cfg.estimators, cfg.sim.n_paths)?;
    for b in &cfg.bumps {
        rows.push(job.fd_row(b, cfg.sim.n_paths)?);
    }
    Ok(rows)
}

/// Malliavin rows recomputed from previously dumped accumulators.
///
/// The config must be the one the accumulators were simulated with.
pub fn run_from_accumulators(cfg: &RunConfig, paths: Vec<PathAccumulators>) -> Result<Vec<Row>> {
    let job = Job::new(cfg)?;
    let sim = job.sim(paths.len());
    let context = PathContext::new(&job.model, &cfg.init, &sim, Perturbation::default());
    job.rows_from_paths(&PathSet { paths, context }, &cfg.estimators, &sim, 0.0)
}

/// Rows for every estimator at every sweep size, sizes outermost.
pub fn converge(cfg: &RunConfig) -> Result<Vec<Row>> {
    let job = Job::new(cfg)?;
    let mut rows = Vec::new();
    for n in job.sizes() {
        rows.extend(job.malliavin_rows(&cfg.estimators, n)?);
        for b in &cfg.bumps {
            rows.push(job.fd_row(b, n)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonEntry {
    pub estimator: String,
    pub value: f64,
    pub std_error: f64,
    /// Path simulations the estimate needed.
    pub n_simulations: usize,
    pub wall_time_ms: f64,
    /// `None` for the Malliavin entry itself.
    pub agrees_with_malliavin: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub greek: &'static str,
    pub n_paths: usize,
    /// Malliavin first, then each finite-difference variation.
    pub entries: Vec<ComparisonEntry>,
}

impl Comparison {
    pub fn all_agree(&self) -> bool {
        self.entries.iter().all(|e| e.agrees_with_malliavin != Some(false))
    }

    /// Summed wall time of the finite-difference entries.
    pub fn fd_total_ms(&self) -> f64 {
        self.entries[1..].iter().map(|e| e.wall_time_ms).sum()
    }
}

/// Malliavin against every finite-difference variation of the same Greek,
/// per sweep size.
pub fn compare(cfg: &RunConfig) -> Result<Vec<Comparison>> {
    let job = Job::new(cfg)?;
    let greeks: Vec<Greek> = cfg
        .estimators
        .iter()
        .copied()
        .filter(|g| cfg.bumps.iter().any(|b| b.target.greek() == *g))
        .collect();
    if greeks.is_empty() {
        return Err(Error::config("bumps", "no bump matches a requested Malliavin estimator"));
    }
    let mut out = Vec::new();
    for n in job.sizes() {
        let m_rows = job.malliavin_rows(&greeks, n)?;
        for (g, m) in greeks.iter().zip(&m_rows) {
            let mut entries = vec![ComparisonEntry {
                estimator: m.estimator.clone(),
                value: m.value,
                std_error: m.std_error,
                n_simulations: 1,
                wall_time_ms: m.wall_time_ms,
                agrees_with_malliavin: None,
            }];
            for b in cfg.bumps.iter().filter(|b| b.target.greek() == *g) {
                let r = job.fd_row(b, n)?;
                let agree = agree_within(m.value, m.std_error, r.value, r.std_error, AGREEMENT_SIGMAS);
                entries.push(ComparisonEntry {
                    estimator: r.estimator,
                    value: r.value,
                    std_error: r.std_error,
                    n_simulations: b.scheme.simulations(),
                    wall_time_ms: r.wall_time_ms,
                    agrees_with_malliavin: Some(agree),
                });
            }
            out.push(Comparison { greek: g.name(), n_paths: n, entries });
        }
    }
    Ok(out)
}

pub fn write_rows<W: Write>(mut out: W, rows: &[Row], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            for r in rows {
                writeln!(out, "{}", r.csv())?;
            }
        }
        OutputFormat::JsonLines => {
            for r in rows {
                writeln!(out, "{}", json(r)?)?;
            }
        }
    }
    Ok(())
}

pub fn write_comparisons<W: Write>(mut out: W, table: &[Comparison], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(out, "{COMPARE_HEADER}")?;
            for c in table {
                for e in &c.entries {
                    let agree = e.agrees_with_malliavin.map_or(String::new(), |a| a.to_string());
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{agree}",
                        c.greek, c.n_paths, e.estimator, e.value, e.std_error, e.n_simulations, e.wall_time_ms
                    )?;
                }
            }
        }
        OutputFormat::JsonLines => {
            for c in table {
                writeln!(out, "{}", json(c)?)?;
            }
        }
    }
    Ok(())
}

fn json<T: Serialize>(x: &T) -> Result<String> {
    serde_json::to_string(x).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::InitialState;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.sim.n_paths = 200;
        c.sim.n_steps = 12;
        c.sweep = vec![50, 100];
        c.output.timing = false;
        c
    }

    #[test]
    fn run_emits_one_row_per_estimator() {
        let c = small();
        let rows = run(&c).unwrap();
        assert_eq!(rows.len(), c.estimators.len() + c.bumps.len());
        assert_eq!(rows[0].estimator, "malliavin");
        assert_eq!(rows[0].greek, "price");
        assert_eq!(rows[4].estimator, "fd_central_crn");
        assert!(rows.iter().all(|r| r.n_paths == 200 && r.wall_time_ms == 0.0));
    }

    #[test]
    fn converge_rows_match_direct_runs() {
        let c = small();
        let rows = converge(&c).unwrap();
        assert_eq!(rows.len(), 2 * (c.estimators.len() + c.bumps.len()));
        let mut direct = c.clone();
        direct.sim.n_paths = 50;
        assert_eq!(rows[..7], run(&direct).unwrap()[..]);
    }

    #[test]
    fn csv_layout() {
        let rows = price(&small()).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows, OutputFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 9);
        assert_eq!(fields[5].parse::<f64>().unwrap(), rows[0].value);
    }

    #[test]
    fn json_lines_keys() {
        let rows = price(&small()).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows, OutputFormat::JsonLines).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["estimator"], "malliavin");
        assert_eq!(v["value"].as_f64().unwrap(), rows[0].value);
    }

    #[test]
    fn compare_needs_matching_bump() {
        let mut c = small();
        c.bumps.clear();
        assert!(matches!(compare(&c), Err(Error::Config { .. })));
        let mut c = small();
        c.estimators = vec![Greek::Delta];
        let t = compare(&c).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].entries.len(), 2);
        assert_eq!(t[0].entries[1].n_simulations, 2);
    }

    #[test]
    fn replay_matches_simulation() {
        let mut c = small();
        c.model = ModelConfig::BlackScholes { sigma: 0.2 };
        c.init = InitialState { s0: 100.0, v0: 0.04, r0: 0.05 };
        c.bumps.clear();
        let model = c.build_model().unwrap();
        let paths = simulate_paths(&model, &c.init, &c.sim).unwrap();
        let replay = run_from_accumulators(&c, paths.paths).unwrap();
        assert_eq!(replay, run(&c).unwrap());
    }
}
