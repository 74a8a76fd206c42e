//! Command line driver.
//!
//! Exit codes: 0 on success, 1 when an audit (`report`, `lowerbound
//! --check`) finds a violation, 2 on usage or configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use transferlab_core::conf_class::{
    localized_contract_check, localized_strong_set, population_eps_loc,
    strong_confidence_set_rootn, strong_contract_check, weak_confidence_set, weak_contract_check,
    ComplexityParams, ContractReport, FiniteConfidenceSet,
};
use transferlab_core::discrepancies::{summaries_finite, summaries_linear};
use transferlab_core::harness::{
    coverage_check, parse_config, parse_summary_json, render_rows_csv, render_summary_json,
    run_experiment, validate_config, AlgoSpec, ExperimentConfig, GridPoint, InstanceSpec,
};
use transferlab_core::instances::{two_atom_gap, uninformative_source};
use transferlab_core::lowerbound::{
    build_hard_family, kl_budget, minimax_simulate, verify_membership, FSpec, HardFamilyConfig,
    Learner,
};
use transferlab_core::moduli::{
    pivotal_sharp, pivotal_value, strong_modulus, weak_modulus, weak_modulus_curve,
    weak_modulus_linear,
};
use transferlab_core::seeding::sub_seed;
use transferlab_core::{FiniteInstance, Instance, Side};

#[derive(Parser)]
#[command(
    name = "transferlab",
    version,
    about = "Distribution-shift transfer experiments: moduli, confidence sets, simulations, and hardness audits"
)]
struct Cli {
    /// Override the master seed of seeded subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel subcommands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory outputs are written into (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate transfer moduli over level grids.
    Moduli(ModuliArgs),
    /// Print discrepancy summaries for an instance.
    Discrepancy(DiscrepancyArgs),
    /// Draw samples, build confidence sets, and audit their contracts.
    Confidence(ConfidenceArgs),
    /// Run a transfer experiment from a JSON config or inline flags.
    TransferSim(TransferSimArgs),
    /// Build the hard family, audit it, or play learners against it.
    Lowerbound(LowerboundArgs),
    /// Time an experiment config without persisting rows.
    Bench(BenchArgs),
    /// Audit an experiment summary's coverage; fails on violations.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Moduli(args) => cmd_moduli(&cli, args),
        Command::Discrepancy(args) => cmd_discrepancy(&cli, args),
        Command::Confidence(args) => cmd_confidence(&cli, args),
        Command::TransferSim(args) => cmd_transfer_sim(&cli, args),
        Command::Lowerbound(args) => cmd_lowerbound(&cli, args),
        Command::Bench(args) => cmd_bench(&cli, args),
        Command::Report(args) => cmd_report(&cli, args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn load_instance(spec: &str) -> Result<Instance> {
    match spec {
        "two_atom_gap" => Ok(Instance::Finite(two_atom_gap())),
        "uninformative_source" => Ok(Instance::Finite(uninformative_source())),
        path => Instance::from_path(path).with_context(|| format!("loading instance from {path}")),
    }
}

fn require_finite(inst: Instance, command: &str) -> Result<FiniteInstance> {
    match inst {
        Instance::Finite(f) => Ok(f),
        Instance::Linear(_) => bail!("{command} drives finite instances only"),
    }
}

fn parse_float_list(text: &str, name: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .with_context(|| format!("{name}: {s:?} is not a number"))
        })
        .collect()
}

fn parse_size_list(text: &str, name: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .with_context(|| format!("{name}: {s:?} is not a sample size"))
        })
        .collect()
}

/// Resolve where a deliverable goes: an explicit `--out` path (relative
/// paths land inside `--out-dir` when both are given), the default file
/// name inside `--out-dir`, or stdout when neither flag is present.
fn write_output(
    out_dir: &Option<PathBuf>,
    out: &Option<PathBuf>,
    default_name: &str,
    contents: &str,
) -> Result<()> {
    let path = match (out, out_dir) {
        (Some(file), Some(dir)) => dir.join(file),
        (Some(file), None) => file.clone(),
        (None, Some(dir)) => dir.join(default_name),
        (None, None) => {
            print!("{contents}");
            return Ok(());
        }
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// moduli
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ModuliArgs {
    /// Builtin name (two_atom_gap, uninformative_source) or a JSON file.
    #[arg(long, default_value = "two_atom_gap")]
    instance: String,
    /// Comma-separated primary levels; defaults to the modulus curve's
    /// breakpoints plus midpoints (finite) or a geometric grid (linear).
    #[arg(long, alias = "eps1")]
    eps: Option<String>,
    /// Comma-separated secondary levels for the strong modulus.
    #[arg(long, default_value = "0")]
    eps2: String,
    /// CSV destination (default: stdout, or moduli.csv under --out-dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_moduli(cli: &Cli, args: &ModuliArgs) -> Result<ExitCode> {
    let eps2 = parse_float_list(&args.eps2, "--eps2")?;
    if eps2.is_empty() {
        bail!("--eps2 needs at least one level");
    }
    let mut out = String::from("eps1,eps2,weak,strong,pivot,pivot_sharp\n");
    match load_instance(&args.instance)? {
        Instance::Finite(inst) => {
            let eps1 = match &args.eps {
                Some(text) => parse_float_list(text, "--eps")?,
                None => {
                    let pts = weak_modulus_curve(&inst);
                    let levels: Vec<f64> = pts.breakpoints().iter().map(|(l, _)| *l).collect();
                    let mut grid = levels.clone();
                    for pair in levels.windows(2) {
                        grid.push(0.5 * (pair[0] + pair[1]));
                    }
                    grid.push(levels.last().copied().unwrap_or(0.0) + 0.1);
                    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    grid.dedup();
                    grid
                }
            };
            let pivot = pivotal_value(&inst);
            let sharp = pivotal_sharp(&inst);
            for &e1 in &eps1 {
                for &e2 in &eps2 {
                    let weak = weak_modulus(&inst, e1)?;
                    let strong = if e1 > 0.0 {
                        fmt(strong_modulus(&inst, e1, e2)?.value)
                    } else {
                        String::new()
                    };
                    out.push_str(&format!(
                        "{},{},{},{strong},{},{}\n",
                        fmt(e1),
                        fmt(e2),
                        fmt(weak),
                        fmt(pivot),
                        fmt(sharp)
                    ));
                }
            }
        }
        Instance::Linear(inst) => {
            let eps1 = match &args.eps {
                Some(text) => parse_float_list(text, "--eps")?,
                None => (0..8).map(|i| 1e-4 * 4f64.powi(i)).collect(),
            };
            for &e1 in &eps1 {
                for &e2 in &eps2 {
                    let weak = weak_modulus_linear(&inst, e1)?;
                    out.push_str(&format!("{},{},{},,,\n", fmt(e1), fmt(e2), fmt(weak)));
                }
            }
        }
    }
    write_output(&cli.out_dir, &args.out, "moduli.csv", &out)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// discrepancy
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DiscrepancyArgs {
    /// Builtin name or a JSON file.
    #[arg(long, default_value = "two_atom_gap")]
    instance: String,
    /// "all" or a comma-separated subset of measure names.
    #[arg(long, default_value = "all")]
    measures: String,
    /// CSV destination (default: stdout, or discrepancy.csv under --out-dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_discrepancy(cli: &Cli, args: &DiscrepancyArgs) -> Result<ExitCode> {
    let rows = match load_instance(&args.instance)? {
        Instance::Finite(inst) => summaries_finite(&inst)?,
        Instance::Linear(inst) => summaries_linear(&inst)?,
    };
    let rows: Vec<(&str, f64)> = if args.measures.trim() == "all" {
        rows
    } else {
        let mut picked = Vec::new();
        for want in args
            .measures
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            match rows.iter().find(|(name, _)| *name == want) {
                Some(row) => picked.push(*row),
                None => {
                    let known: Vec<&str> = rows.iter().map(|(name, _)| *name).collect();
                    bail!(
                        "unknown measure {want:?}; this instance offers {}",
                        known.join(", ")
                    );
                }
            }
        }
        picked
    };
    let mut out = String::from("measure,value\n");
    for (name, value) in rows {
        out.push_str(&format!("{name},{}\n", fmt(value)));
    }
    write_output(&cli.out_dir, &args.out, "discrepancy.csv", &out)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// confidence
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum SetKindArg {
    Weak,
    Rootn,
    Localized,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    P,
    Q,
}

impl From<SideArg> for Side {
    fn from(side: SideArg) -> Side {
        match side {
            SideArg::P => Side::P,
            SideArg::Q => Side::Q,
        }
    }
}

#[derive(Args)]
struct ConfidenceArgs {
    /// Builtin name or a JSON file (finite instances only).
    #[arg(long, default_value = "two_atom_gap")]
    instance: String,
    #[arg(long, value_enum, default_value_t = SetKindArg::Weak)]
    kind: SetKindArg,
    #[arg(long, value_enum, default_value_t = SideArg::Q)]
    side: SideArg,
    /// Sample size to draw per trial.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Independent samples to draw; one CSV row each.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Level scale for the rootn kind.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Sublevel multiplier for the localized kind.
    #[arg(long, default_value_t = 1.0)]
    multiplier: f64,
    /// Assert the combinatorial dimension instead of computing it.
    #[arg(long)]
    d_vc: Option<usize>,
    /// CSV destination (default: stdout, or confidence.csv under --out-dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_confidence(cli: &Cli, args: &ConfidenceArgs) -> Result<ExitCode> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let inst = require_finite(load_instance(&args.instance)?, "confidence")?;
    let side: Side = args.side.into();
    let side_label = match side {
        Side::P => "p",
        Side::Q => "q",
    };
    let base_seed = cli.seed.unwrap_or(0);
    let params = ComplexityParams::default();
    let mut out =
        String::from("trial,kind,side,n,tau,members,erm,eps,strength,bitmask,contract_ok\n");
    for trial in 0..args.trials {
        let sample = inst.sample(side, args.n, sub_seed(base_seed, trial as u64));
        let (kind_label, set, contract): (&str, FiniteConfidenceSet, ContractReport) =
            match args.kind {
                SetKindArg::Weak => {
                    let set = weak_confidence_set(&inst, &sample, args.tau, &params, args.d_vc)?;
                    let contract = weak_contract_check(&inst, side, &set)?;
                    ("weak", set, contract)
                }
                SetKindArg::Rootn => {
                    let set = strong_confidence_set_rootn(
                        &inst, &sample, args.tau, args.scale, &params, args.d_vc,
                    )?;
                    let contract = strong_contract_check(&inst, side, &set);
                    ("rootn", set, contract)
                }
                SetKindArg::Localized => {
                    let run = localized_strong_set(
                        &inst,
                        &sample,
                        args.tau,
                        args.multiplier,
                        &params,
                        args.d_vc,
                    )?;
                    let eps_bar =
                        population_eps_loc(&inst, side, args.n, args.tau, &params, args.d_vc)?;
                    let contract = localized_contract_check(
                        &inst,
                        side,
                        &run.set,
                        run.multiplier,
                        eps_bar,
                        &params,
                    );
                    ("localized", run.set, contract)
                }
            };
        out.push_str(&format!(
            "{trial},{kind_label},{side_label},{},{},{},{},{},{},{},{}\n",
            args.n,
            fmt(args.tau),
            set.members.len(),
            set.erm_index.map(|i| i.to_string()).unwrap_or_default(),
            fmt(set.eps),
            fmt(set.strength),
            set.bitmask_hex(inst.num_hypotheses()),
            contract.ok(),
        ));
    }
    write_output(&cli.out_dir, &args.out, "confidence.csv", &out)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// transfer-sim
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Weak,
    Strong,
    Both,
}

#[derive(Args)]
struct TransferSimArgs {
    /// Experiment config JSON; replaces all inline flags below.
    #[arg(
        long,
        conflicts_with_all = ["instance", "np", "nq", "algo", "trials", "tau", "mc_trials", "d_vc"]
    )]
    config: Option<PathBuf>,
    /// Builtin name or finite-instance JSON file.
    #[arg(long)]
    instance: Option<String>,
    /// Comma-separated source sample sizes.
    #[arg(long, default_value = "0")]
    np: String,
    /// Comma-separated target sample sizes.
    #[arg(long, default_value = "1000")]
    nq: String,
    #[arg(long, value_enum, default_value_t = AlgoArg::Both)]
    algo: AlgoArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Monte Carlo draws behind the fallback quantile estimate.
    #[arg(long, default_value_t = 200)]
    mc_trials: usize,
    /// Assert the combinatorial dimension instead of computing it.
    #[arg(long)]
    d_vc: Option<usize>,
    /// Trial CSV destination; the summary lands next to it with a
    /// `_summary.json` suffix. Default: stdout (no summary file), or
    /// `<name>_trials.csv` under --out-dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn inline_instance_spec(name: &str) -> (String, InstanceSpec) {
    match name {
        "two_atom_gap" => ("two_atom_gap".into(), InstanceSpec::TwoAtomGap),
        "uninformative_source" => (
            "uninformative_source".into(),
            InstanceSpec::UninformativeSource,
        ),
        path => {
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "experiment".into());
            (stem, InstanceSpec::FiniteFile { path: path.into() })
        }
    }
}

fn inline_config(cli: &Cli, args: &TransferSimArgs) -> Result<ExperimentConfig> {
    let instance = args
        .instance
        .as_deref()
        .context("pass --config <file> or --instance with --np/--nq")?;
    let np = parse_size_list(&args.np, "--np")?;
    let nq = parse_size_list(&args.nq, "--nq")?;
    if np.is_empty() || nq.is_empty() {
        bail!("--np and --nq each need at least one size");
    }
    let algos: &[AlgoSpec] = match args.algo {
        AlgoArg::Weak => &[AlgoSpec::Weak],
        AlgoArg::Strong => &[AlgoSpec::Strong],
        AlgoArg::Both => &[AlgoSpec::Weak, AlgoSpec::Strong],
    };
    let mut grid = Vec::new();
    for &algo in algos {
        for &n_q in &nq {
            for &n_p in &np {
                grid.push(GridPoint { algo, n_q, n_p });
            }
        }
    }
    let (name, instance) = inline_instance_spec(instance);
    let cfg = ExperimentConfig {
        name,
        instance,
        grid,
        trials: args.trials,
        tau: args.tau,
        master_seed: cli.seed.unwrap_or(0),
        mc_trials: args.mc_trials,
        d_vc: args.d_vc,
    };
    validate_config(&cfg)?;
    Ok(cfg)
}

fn load_experiment_config(cli: &Cli, args: &TransferSimArgs) -> Result<ExperimentConfig> {
    match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg = parse_config(&text).context("parsing experiment config")?;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            Ok(cfg)
        }
        None => inline_config(cli, args),
    }
}

fn summary_sibling(trials_path: &Path) -> PathBuf {
    let stem = trials_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    let stem = stem.strip_suffix("_trials").unwrap_or(&stem);
    trials_path.with_file_name(format!("{stem}_summary.json"))
}

fn cmd_transfer_sim(cli: &Cli, args: &TransferSimArgs) -> Result<ExitCode> {
    let cfg = load_experiment_config(cli, args)?;
    let output = run_experiment(&cfg).context("running experiment")?;
    let csv_text = render_rows_csv(&output.rows)?;
    if args.out.is_none() && cli.out_dir.is_none() {
        print!("{csv_text}");
        return Ok(ExitCode::SUCCESS);
    }
    let base = sanitize(&cfg.name);
    let trials_name = format!("{base}_trials.csv");
    let trials_path = args
        .out
        .clone()
        .unwrap_or_else(|| trials_name.clone().into());
    write_output(&cli.out_dir, &args.out, &trials_name, &csv_text)?;
    let summary_text = render_summary_json(&output.summary)?;
    let summary_path = summary_sibling(&trials_path);
    write_output(
        &cli.out_dir,
        &Some(summary_path),
        &format!("{base}_summary.json"),
        &summary_text,
    )?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// lowerbound
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Oracle,
    Weak,
    Majority,
}

impl From<LearnerArg> for Learner {
    fn from(l: LearnerArg) -> Learner {
        match l {
            LearnerArg::Oracle => Learner::Oracle,
            LearnerArg::Weak => Learner::WeakTransfer,
            LearnerArg::Majority => Learner::AtomMajority,
        }
    }
}

/// On-disk form of a tabulated envelope: knot list plus its declared
/// scaling exponent.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FSpecFile {
    knots: Vec<(f64, f64)>,
    #[serde(default = "default_kappa")]
    kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Args)]
struct LowerboundArgs {
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long = "np", default_value_t = 4000)]
    n_p: usize,
    #[arg(long = "nq", default_value_t = 4000)]
    n_q: usize,
    #[arg(long, default_value_t = 0.0)]
    beta_p: f64,
    #[arg(long, default_value_t = 0.0)]
    beta_q: f64,
    #[arg(long, default_value_t = 0.01)]
    c0: f64,
    #[arg(long, default_value_t = 0.01)]
    c1: f64,
    /// Envelope JSON {"knots": [[x, y], ...], "kappa": k}; identity if absent.
    #[arg(long = "f")]
    f_file: Option<PathBuf>,
    /// Use the code itself as the hypothesis class instead of all patterns.
    #[arg(long)]
    code_class: bool,
    /// Audit identities, envelope, geometry, and the information budget.
    #[arg(long, conflicts_with = "simulate")]
    check: bool,
    /// Play a learner against the family.
    #[arg(long, value_enum)]
    simulate: Option<LearnerArg>,
    /// Trials per family member for --simulate.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// JSON destination (default: stdout, or a named file under --out-dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_lowerbound(cli: &Cli, args: &LowerboundArgs) -> Result<ExitCode> {
    let mut cfg = HardFamilyConfig::new(args.d, args.n_p, args.n_q);
    cfg.beta_p = args.beta_p;
    cfg.beta_q = args.beta_q;
    cfg.c0 = args.c0;
    cfg.c1 = args.c1;
    cfg.f = match &args.f_file {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let raw: FSpecFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing envelope {}", path.display()))?;
            FSpec::from_knots(raw.knots, raw.kappa)?
        }
        None => FSpec::identity(),
    };
    if args.code_class {
        cfg.full_class = false;
    }
    let family = build_hard_family(&cfg).context("building the hard family")?;
    if args.check {
        let membership = verify_membership(&family)?;
        let budget = kl_budget(&family)?;
        let ok = membership.ok && budget.ok;
        let report = serde_json::json!({
            "members": family.members.len(),
            "hypotheses": family.members[0].num_hypotheses(),
            "eps": family.eps,
            "eps_p": family.eps_p,
            "rate": family.rate,
            "membership": {
                "identity_err": membership.identity_err,
                "modulus_excess": membership.modulus_excess,
                "small_regime": membership.small_regime,
                "radius_slack": membership.radius_slack,
                "diam_slack": membership.diam_slack,
                "ok": membership.ok,
            },
            "kl": {
                "max_pair": budget.max_pair,
                "budget": budget.budget,
                "ok": budget.ok,
            },
            "ok": ok,
        });
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_output(&cli.out_dir, &args.out, "lowerbound_check.json", &text)?;
        return Ok(if ok {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    }
    if let Some(learner) = args.simulate {
        let seed = cli.seed.unwrap_or(0);
        let report = minimax_simulate(&family, learner.into(), args.tau, args.trials, seed)?;
        let floor = 0.05 * report.rate;
        let doc = serde_json::json!({
            "learner": Learner::from(learner).label(),
            "trials": args.trials,
            "per_member_mean": report.per_member_mean,
            "worst_mean": report.worst_mean,
            "rate": report.rate,
            "floor": floor,
            "above_floor": report.worst_mean >= floor,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        write_output(&cli.out_dir, &args.out, "lowerbound_sim.json", &text)?;
        return Ok(ExitCode::SUCCESS);
    }
    bail!("pass --check or --simulate <learner>")
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BenchArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// JSON destination (default: stdout, or bench.json under --out-dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = parse_config(&text).context("parsing experiment config")?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let t0 = std::time::Instant::now();
    let output = run_experiment(&cfg).context("running experiment")?;
    let total_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut points = Vec::new();
    for (g, point) in output.summary.points.iter().enumerate() {
        let mut times: Vec<f64> = output
            .rows
            .iter()
            .filter(|r| r.grid_index == g)
            .map(|r| r.report.wall_ms)
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
        points.push(serde_json::json!({
            "grid_index": g,
            "algo": point.algo.as_str(),
            "n_q": point.n_q,
            "n_p": point.n_p,
            "trials": times.len(),
            "mean_ms": mean,
            "p50_ms": percentile(&times, 0.50),
            "p95_ms": percentile(&times, 0.95),
            "max_ms": times.last().copied().unwrap_or(f64::NAN),
        }));
    }
    let doc = serde_json::json!({
        "name": cfg.name,
        "total_ms": total_ms,
        "points": points,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_output(&cli.out_dir, &args.out, "bench.json", &text)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReportArgs {
    /// Summary JSON produced by transfer-sim.
    #[arg(long)]
    summary: PathBuf,
    /// Coverage level to audit against; defaults to the summary's own.
    #[arg(long)]
    tau: Option<f64>,
}

fn cmd_report(_cli: &Cli, args: &ReportArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.summary)
        .with_context(|| format!("reading {}", args.summary.display()))?;
    let summary = parse_summary_json(&text).context("parsing summary")?;
    let tau = args.tau.unwrap_or(summary.tau);
    if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
        bail!("tau {tau} must lie strictly inside (0, 1)");
    }
    let checks = coverage_check(&summary, tau);
    let mut all_ok = true;
    for check in &checks {
        let verdict = if check.ok { "ok" } else { "VIOLATION" };
        println!(
            "point {} algo={} rate={:.6} budget={:.6} {}",
            check.grid_index, check.algo, check.rate, check.budget, verdict
        );
        all_ok &= check.ok;
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
