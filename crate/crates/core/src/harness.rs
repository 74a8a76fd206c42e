//! Experiment harness: config parsing, deterministic parallel trial
//! execution, CSV/JSON reporting, and coverage audits.
//!
//! Reproducibility contract: every trial's randomness is a pure
//! function of `(master_seed, grid_index, trial_index)`, trials are
//! collected in grid-then-trial order regardless of how the rayon pool
//! schedules them, and floats are rendered with enough digits to
//! round-trip. Running the same config twice — or on thread pools of
//! different sizes — must produce byte-identical CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conf_class::ComplexityParams;
use crate::instances::{
    random_finite_instance, two_atom_gap, uninformative_source, FiniteInstance, Instance,
    InstanceError,
};
use crate::seeding::{sub_seed, trial_seed};
use crate::transfer::{run_strong_transfer, run_weak_transfer, EpsTildeCache, TrialReport};

/// 95% normal quantile used by the Wilson interval.
const WILSON_Z: f64 = 1.959_963_984_540_054;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which decision rule a grid point runs. The two baselines are the
/// same weak routine pinned to one-sided data: they exist so sweeps can
/// compare transfer against no-transfer under identical seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoSpec {
    Weak,
    Strong,
    TargetOnly,
    SourceOnly,
}

impl AlgoSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AlgoSpec::Weak => "weak",
            AlgoSpec::Strong => "strong",
            AlgoSpec::TargetOnly => "target_only",
            AlgoSpec::SourceOnly => "source_only",
        }
    }

    /// How many confidence events the rule's bound consumes; the
    /// coverage budget scales with it.
    pub fn coverage_multiplier(&self) -> f64 {
        match self {
            AlgoSpec::Weak => 2.0,
            AlgoSpec::Strong => 4.0,
            AlgoSpec::TargetOnly | AlgoSpec::SourceOnly => 1.0,
        }
    }
}

/// One cell of the experiment grid.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub algo: AlgoSpec,
    pub n_q: usize,
    pub n_p: usize,
}

/// Which instance the experiment runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSpec {
    TwoAtomGap,
    UninformativeSource,
    RandomFinite {
        seed: u64,
        max_atoms: usize,
        max_hypotheses: usize,
    },
    FiniteFile {
        path: String,
    },
}

impl InstanceSpec {
    pub fn build(&self) -> Result<FiniteInstance, InstanceError> {
        match self {
            InstanceSpec::TwoAtomGap => Ok(two_atom_gap()),
            InstanceSpec::UninformativeSource => Ok(uninformative_source()),
            InstanceSpec::RandomFinite {
                seed,
                max_atoms,
                max_hypotheses,
            } => Ok(random_finite_instance(*seed, *max_atoms, *max_hypotheses)),
            InstanceSpec::FiniteFile { path } => match Instance::from_path(path)? {
                Instance::Finite(inst) => Ok(inst),
                Instance::Linear(_) => Err(InstanceError::invalid(
                    "instance",
                    "experiment configs drive finite instances; linear tasks run through the library API",
                )),
            },
        }
    }
}

fn default_mc_trials() -> usize {
    200
}

/// A full experiment description, loadable from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub instance: InstanceSpec,
    pub grid: Vec<GridPoint>,
    pub trials: usize,
    pub tau: f64,
    pub master_seed: u64,
    #[serde(default = "default_mc_trials")]
    pub mc_trials: usize,
    #[serde(default)]
    pub d_vc: Option<usize>,
}

/// Field names each instance kind accepts, used to reject typos that
/// the tagged-enum representation would otherwise silently drop.
fn instance_allowed_keys(kind: &str) -> Option<&'static [&'static str]> {
    match kind {
        "two_atom_gap" | "uninformative_source" => Some(&["kind"]),
        "random_finite" => Some(&["kind", "seed", "max_atoms", "max_hypotheses"]),
        "finite_file" => Some(&["kind", "path"]),
        _ => None,
    }
}

/// Parse a config, rejecting unknown fields even inside the instance
/// block (where the tagged representation cannot enforce it natively).
pub fn parse_config(text: &str) -> Result<ExperimentConfig, InstanceError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(instance) = value.get("instance") {
        let obj = instance.as_object().ok_or_else(|| {
            InstanceError::invalid("instance", "must be an object with a \"kind\" field")
        })?;
        let kind = obj
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| InstanceError::invalid("instance.kind", "missing or non-string"))?;
        let allowed = instance_allowed_keys(kind).ok_or_else(|| {
            InstanceError::invalid("instance.kind", format!("unsupported kind {kind:?}"))
        })?;
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(InstanceError::invalid(
                    format!("instance.{key}"),
                    format!("unknown field for kind {kind:?}"),
                ));
            }
        }
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)?;
    validate_config(&cfg)?;
    Ok(cfg)
}

/// Structural checks beyond what serde can express.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<(), InstanceError> {
    if cfg.trials == 0 {
        return Err(InstanceError::invalid("trials", "need at least one trial"));
    }
    if !cfg.tau.is_finite() || cfg.tau <= 0.0 || cfg.tau >= 1.0 {
        return Err(InstanceError::invalid(
            "tau",
            format!("{} must lie strictly inside (0, 1)", cfg.tau),
        ));
    }
    if cfg.grid.is_empty() {
        return Err(InstanceError::invalid("grid", "grid is empty"));
    }
    if cfg.mc_trials < 100 {
        return Err(InstanceError::invalid(
            "mc_trials",
            format!(
                "{} Monte Carlo trials are too few; need at least 100",
                cfg.mc_trials
            ),
        ));
    }
    for (i, point) in cfg.grid.iter().enumerate() {
        let path = format!("grid[{i}]");
        match point.algo {
            AlgoSpec::Weak => {
                if point.n_q == 0 && point.n_p == 0 {
                    return Err(InstanceError::invalid(
                        path,
                        "weak points need data on some side",
                    ));
                }
            }
            AlgoSpec::Strong => {
                if point.n_q == 0 {
                    return Err(InstanceError::invalid(
                        path,
                        "strong points need target data",
                    ));
                }
            }
            AlgoSpec::TargetOnly => {
                if point.n_q == 0 || point.n_p != 0 {
                    return Err(InstanceError::invalid(
                        path,
                        "target_only points need n_q >= 1 and n_p == 0",
                    ));
                }
            }
            AlgoSpec::SourceOnly => {
                if point.n_p == 0 || point.n_q != 0 {
                    return Err(InstanceError::invalid(
                        path,
                        "source_only points need n_p >= 1 and n_q == 0",
                    ));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// One finished trial, tagged with its grid cell.
#[derive(Clone, Debug)]
pub struct ExperimentRow {
    pub grid_index: usize,
    pub algo: AlgoSpec,
    pub report: TrialReport,
}

/// Everything an experiment produces.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<ExperimentRow>,
    pub summary: Summary,
}

/// Run the whole grid. Work is distributed over the ambient rayon pool
/// but rows come back in `(grid_index, trial)` order, so output bytes
/// do not depend on thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, InstanceError> {
    validate_config(cfg)?;
    let inst = cfg.instance.build()?;
    let params = ComplexityParams::default();
    let cache = Mutex::new(EpsTildeCache::new(
        sub_seed(cfg.master_seed, 3),
        cfg.tau,
        cfg.mc_trials,
    ));
    let work: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|g| (0..cfg.trials).map(move |t| (g, t)))
        .collect();
    let rows: Result<Vec<ExperimentRow>, InstanceError> = work
        .par_iter()
        .map(|&(g, t)| {
            let point = cfg.grid[g];
            let seed = trial_seed(cfg.master_seed, g as u64, t as u64);
            let report = match point.algo {
                AlgoSpec::Weak => {
                    run_weak_transfer(
                        &inst, point.n_q, point.n_p, cfg.tau, &params, cfg.d_vc, t as u64, seed,
                    )?
                    .0
                }
                AlgoSpec::TargetOnly => {
                    run_weak_transfer(
                        &inst, point.n_q, 0, cfg.tau, &params, cfg.d_vc, t as u64, seed,
                    )?
                    .0
                }
                AlgoSpec::SourceOnly => {
                    run_weak_transfer(
                        &inst, 0, point.n_p, cfg.tau, &params, cfg.d_vc, t as u64, seed,
                    )?
                    .0
                }
                AlgoSpec::Strong => {
                    run_strong_transfer(
                        &inst, point.n_q, point.n_p, cfg.tau, &params, cfg.d_vc, &cache, t as u64,
                        seed,
                    )?
                    .0
                }
            };
            Ok(ExperimentRow {
                grid_index: g,
                algo: point.algo,
                report,
            })
        })
        .collect();
    let rows = rows?;
    let summary = summarize(cfg, &rows);
    Ok(ExperimentOutput { rows, summary })
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

pub const CSV_HEADER: [&str; 8] = [
    "trial", "algo", "np", "nq", "case", "excess_q", "bound", "bound_ok",
];

fn csv_err(e: csv::Error) -> InstanceError {
    InstanceError::invalid("csv", e.to_string())
}

/// Write rows as RFC-4180 CSV. Floats use `{:.16e}` so they round-trip
/// exactly; wall time is deliberately not a column (it is never
/// reproducible).
pub fn write_rows_csv<W: Write>(writer: W, rows: &[ExperimentRow]) -> Result<(), InstanceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record([
            row.report.trial.to_string(),
            row.algo.label().to_string(),
            row.report.n_p.to_string(),
            row.report.n_q.to_string(),
            row.report.case.label().to_string(),
            format!("{:.16e}", row.report.excess_q),
            format!("{:.16e}", row.report.bound),
            row.report.bound_ok.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The CSV as an owned string.
pub fn render_rows_csv(rows: &[ExperimentRow]) -> Result<String, InstanceError> {
    let mut buf = Vec::new();
    write_rows_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| InstanceError::invalid("csv", e.to_string()))
}

// ---------------------------------------------------------------------------
// Summaries and coverage
// ---------------------------------------------------------------------------

/// Violation-rate estimate with a 95% Wilson interval; with zero
/// observed violations the upper limit falls back to the rule of three.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn coverage_report(trials: usize, violations: usize) -> CoverageReport {
    assert!(trials > 0 && violations <= trials);
    let n = trials as f64;
    let (ci_low, ci_high) = if violations == 0 {
        (0.0, 3.0 / n)
    } else {
        let p = violations as f64 / n;
        let z2 = WILSON_Z * WILSON_Z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        ((center - half).max(0.0), (center + half).min(1.0))
    };
    CoverageReport {
        trials,
        violations,
        rate: violations as f64 / n,
        ci_low,
        ci_high,
    }
}

/// Per-grid-point aggregate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointSummary {
    pub grid_index: usize,
    pub algo: String,
    pub n_q: usize,
    pub n_p: usize,
    pub trials: usize,
    pub mean_excess: f64,
    pub mean_bound: f64,
    pub coverage: CoverageReport,
    pub cases: BTreeMap<String, usize>,
}

/// Whole-experiment aggregate, written next to the CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub master_seed: u64,
    pub trials: usize,
    pub tau: f64,
    pub points: Vec<PointSummary>,
}

/// Aggregate rows (which arrive grouped by grid point, in trial order;
/// means are plain left-to-right sums so they can be recomputed exactly
/// from the CSV).
pub fn summarize(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> Summary {
    let mut points = Vec::with_capacity(cfg.grid.len());
    for (g, point) in cfg.grid.iter().enumerate() {
        let chunk: Vec<&ExperimentRow> = rows.iter().filter(|r| r.grid_index == g).collect();
        let trials = chunk.len();
        let mut sum_excess = 0.0;
        let mut sum_bound = 0.0;
        let mut violations = 0usize;
        let mut cases: BTreeMap<String, usize> = BTreeMap::new();
        for row in &chunk {
            sum_excess += row.report.excess_q;
            sum_bound += row.report.bound;
            if !row.report.bound_ok {
                violations += 1;
            }
            *cases
                .entry(row.report.case.label().to_string())
                .or_insert(0) += 1;
        }
        points.push(PointSummary {
            grid_index: g,
            algo: point.algo.label().to_string(),
            n_q: point.n_q,
            n_p: point.n_p,
            trials,
            mean_excess: sum_excess / trials.max(1) as f64,
            mean_bound: sum_bound / trials.max(1) as f64,
            coverage: coverage_report(trials.max(1), violations),
            cases,
        });
    }
    Summary {
        name: cfg.name.clone(),
        master_seed: cfg.master_seed,
        trials: cfg.trials,
        tau: cfg.tau,
        points,
    }
}

pub fn render_summary_json(summary: &Summary) -> Result<String, InstanceError> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_summary_json(text: &str) -> Result<Summary, InstanceError> {
    Ok(serde_json::from_str(text)?)
}

/// Verdict of the coverage audit for one grid point.
#[derive(Clone, Debug, Serialize)]
pub struct PointCheck {
    pub grid_index: usize,
    pub algo: String,
    pub rate: f64,
    pub budget: f64,
    pub ok: bool,
}

/// Audit every point's violation rate against its budget
/// `k * tau + 3 * sqrt(k * tau * (1 - k * tau) / trials)`, where `k` is
/// the rule's coverage multiplier.
pub fn coverage_check(summary: &Summary, tau: f64) -> Vec<PointCheck> {
    summary
        .points
        .iter()
        .map(|p| {
            let k = match p.algo.as_str() {
                "weak" => 2.0,
                "strong" => 4.0,
                _ => 1.0,
            };
            let level = (k * tau).min(1.0);
            let budget = level + 3.0 * (level * (1.0 - level) / p.trials.max(1) as f64).sqrt();
            PointCheck {
                grid_index: p.grid_index,
                algo: p.algo.clone(),
                rate: p.coverage.rate,
                budget,
                ok: p.coverage.rate <= budget,
            }
        })
        .collect()
}
