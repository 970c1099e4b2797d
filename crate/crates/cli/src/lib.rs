//! Batch front end: parses a run configuration, runs one estimator or identity
//! check, and writes a JSON result document plus optional CSV series.

pub mod config;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hardsphere::dynamics::advance;
use hardsphere::estimators::{
    bbgky_residual, rho_direct, rho_series, tree_value, verify_cancellation, verify_integration_step,
};
use hardsphere::trees::count_trees;
use hardsphere::{EventLog, MeasureVariant};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::RunConfig;
pub use error::{CliError, Result};

pub const VERSION: &str = env!("HARDSPHERE_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hardsphere", version = VERSION, about = "Hard-sphere correlation estimators and identity checks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Sample count for every estimator; overrides the configuration.
    #[arg(long, global = true, value_name = "K")]
    pub samples: Option<u64>,
    /// Output directory for the JSON document and CSV series.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for the estimators.
    #[arg(long, global = true, value_name = "T")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Advance the evaluation point forward for `time.t` and log every event.
    Simulate,
    /// Marginal of the transported density.
    RhoDirect,
    /// Contribution of the single tree `run.tree`.
    RhoTree,
    /// Finite tree expansion.
    RhoSeries,
    /// Integration-step identity for the source tree `run.tree`.
    VerifyStep,
    /// Recollision/creation cancellation for the source tree `run.tree`.
    VerifyCancel,
    /// Hierarchy residual on `time.grid`.
    VerifyBbgky,
    /// Number of trees with `n` roots and `m` nodes.
    CountTrees {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
    },
    /// Grid over `t` or `lambda` as set in `[sweep]`.
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::RhoDirect => "rho-direct",
            Command::RhoTree => "rho-tree",
            Command::RhoSeries => "rho-series",
            Command::VerifyStep => "verify-step",
            Command::VerifyCancel => "verify-cancel",
            Command::VerifyBbgky => "verify-bbgky",
            Command::CountTrees { .. } => "count-trees",
            Command::Sweep => "sweep",
        }
    }
}

/// A finished command: the result document body, CSV series, and whether its
/// statistical checks passed.
struct Outcome {
    result: Value,
    csv: Vec<(&'static str, Csv)>,
    failure: Option<String>,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Self { result, csv: Vec::new(), failure: None }
    }
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(None) => EXIT_OK,
        Ok(Some(failure)) => {
            eprintln!("check failed: {failure}");
            EXIT_FAILED_CHECK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn execute(cli: &Cli) -> Result<Option<String>> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // Only fails if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }

    if let Command::CountTrees { n, m } = cli.command {
        return count_trees_command(n, m, cli.global.out.as_deref());
    }

    let path = cli.global.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.global.samples {
        cfg.samples = config::SampleCounts::all(k);
    }
    if let Some(out) = &cli.global.out {
        cfg.out = Some(out.clone());
    }

    let outcome = match cli.command {
        Command::Simulate => simulate(&cfg)?,
        Command::RhoDirect => estimate(&cfg, EstimatorKind::Direct)?,
        Command::RhoTree => estimate(&cfg, EstimatorKind::Tree)?,
        Command::RhoSeries => estimate(&cfg, EstimatorKind::Series)?,
        Command::VerifyStep => verify_step(&cfg)?,
        Command::VerifyCancel => verify_cancel(&cfg)?,
        Command::VerifyBbgky => verify_bbgky(&cfg)?,
        Command::Sweep => sweep(&cfg)?,
        Command::CountTrees { .. } => unreachable!(),
    };

    let doc = json!({
        "command": cli.command.name(),
        "version": VERSION,
        "seed": cfg.seed,
        "config": &cfg,
        "result": outcome.result,
    });
    emit(cli.command.name(), &doc, cfg.out.as_deref(), &outcome.csv)?;
    Ok(outcome.failure)
}

fn count_trees_command(n: usize, m: usize, out: Option<&Path>) -> Result<Option<String>> {
    if n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let count = count_trees(n, m);
    println!("{count}");
    if let Some(dir) = out {
        // The count can exceed the range of a JSON integer; keep it as a string.
        let doc = json!({
            "command": "count-trees",
            "version": VERSION,
            "seed": Value::Null,
            "config": { "n": n, "m": m },
            "result": { "count": count.to_string() },
        });
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("count-trees.json"), &doc)?;
    }
    Ok(None)
}

fn emit(name: &str, doc: &Value, out: Option<&Path>, csv: &[(&'static str, Csv)]) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_json(&dir.join(format!("{name}.json")), doc)?;
            for (file, table) in csv {
                write_csv(&dir.join(file), table)?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, doc)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_csv(path: &Path, table: &Csv) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    Ok(serde_json::to_value(x)?)
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let measure = cfg.measure()?;
    let start = cfg.point(&measure, 0.0)?;
    let (end, log): (_, EventLog) = advance(measure.box_spec(), &start, cfg.time.t, &cfg.tolerances)?;
    let pair = log.events.iter().filter(|e| matches!(e.kind, hardsphere::EventKind::PairCollision { .. })).count();
    let result = json!({
        "t": cfg.time.t,
        "initial": &start,
        "final": &end,
        "events": log.len(),
        "pair_collisions": pair,
        "wall_collisions": log.len() - pair,
        "energy_drift": end.kinetic_energy() - start.kinetic_energy(),
    });
    let table = Csv {
        header: EventLog::CSV_HEADER.iter().map(|s| s.to_string()).collect(),
        rows: log.csv_rows().into_iter().map(Vec::from).collect(),
    };
    Ok(Outcome { result, csv: vec![("events.csv", table)], failure: None })
}

#[derive(Debug, Clone, Copy)]
enum EstimatorKind {
    Direct,
    Tree,
    Series,
}

fn estimate(cfg: &RunConfig, kind: EstimatorKind) -> Result<Outcome> {
    let measure = cfg.measure()?;
    let point = cfg.point(&measure, horizon(cfg))?;
    let t = cfg.time.t;
    let est = match kind {
        EstimatorKind::Direct => rho_direct(&cfg.spec(measure, point.clone(), t, cfg.samples.direct))?,
        EstimatorKind::Series => rho_series(&cfg.spec(measure, point.clone(), t, cfg.samples.series))?,
        EstimatorKind::Tree => tree_value(&cfg.tree()?, &cfg.spec(measure, point.clone(), t, cfg.samples.tree))?,
    };
    Ok(Outcome::ok(json!({ "t": t, "point": to_value(&point)?, "estimate": to_value(&est)? })))
}

/// Longest backward time any command will apply to the evaluation point.
fn horizon(cfg: &RunConfig) -> f64 {
    let mut h = cfg.time.t;
    for &t in &cfg.time.grid {
        h = h.max(t);
    }
    if let Some(s) = &cfg.sweep {
        if s.parameter == config::SweepParameter::T {
            for &t in &s.values {
                h = h.max(t);
            }
        }
    }
    h
}

fn verify_step(cfg: &RunConfig) -> Result<Outcome> {
    let measure = cfg.measure()?;
    let source = cfg.tree()?;
    let point = cfg.point(&measure, horizon(cfg))?;
    let spec = cfg.spec(measure, point, cfg.time.t, cfg.samples.step);
    let c = verify_integration_step(&source, &spec)?;
    let z = c.z_score();
    let failure = (z > cfg.run.nsigma).then(|| {
        format!(
            "step identity for {}: lhs {:.6e} ± {:.2e} vs rhs {:.6e} ± {:.2e} (z = {z:.2} > {})",
            c.source, c.lhs.value, c.lhs.stderr, c.rhs.value, c.rhs.stderr, cfg.run.nsigma
        )
    });
    let result = json!({ "t": cfg.time.t, "comparison": to_value(&c)?, "z": finite_or_null(z), "passed": failure.is_none() });
    Ok(Outcome { result, csv: Vec::new(), failure })
}

fn verify_cancel(cfg: &RunConfig) -> Result<Outcome> {
    let measure = cfg.measure()?;
    let source = cfg.tree()?;
    let point = cfg.point(&measure, horizon(cfg))?;
    let spec = cfg.spec(measure, point, cfg.time.t, cfg.samples.cancel);
    let r = verify_cancellation(&source, &spec)?;
    let zero = hardsphere::Estimate::exact(0.0, cfg.seed);
    let z = r.summed.z_score(&zero);
    let frac = r.antisymmetric_fraction();
    let mut failures = Vec::new();
    if r.r_minus_samples > 0 && frac < cfg.run.min_antisymmetric {
        failures.push(format!(
            "anti-symmetric fraction {frac:.6} ({} of {}) below {}",
            r.antisymmetric, r.r_minus_samples, cfg.run.min_antisymmetric
        ));
    }
    if z > cfg.run.nsigma {
        failures.push(format!(
            "summed restricted values {:.6e} ± {:.2e} differ from 0 (z = {z:.2} > {})",
            r.summed.value, r.summed.stderr, cfg.run.nsigma
        ));
    }
    let failure = (!failures.is_empty()).then(|| failures.join("; "));
    let result = json!({
        "t": cfg.time.t,
        "report": to_value(&r)?,
        "antisymmetric_fraction": frac,
        "z": finite_or_null(z),
        "passed": failure.is_none(),
    });
    Ok(Outcome { result, csv: Vec::new(), failure })
}

/// Uniform grid of five intervals on `[0, t]` when no grid is configured.
fn bbgky_grid(cfg: &RunConfig) -> Vec<f64> {
    if cfg.time.grid.is_empty() {
        (0..=5).map(|i| cfg.time.t * i as f64 / 5.0).collect()
    } else {
        cfg.time.grid.clone()
    }
}

fn verify_bbgky(cfg: &RunConfig) -> Result<Outcome> {
    let measure = cfg.measure()?;
    let grid = bbgky_grid(cfg);
    let h = grid.iter().copied().fold(horizon(cfg), f64::max);
    let point = cfg.point(&measure, h)?;
    let spec = cfg.spec(measure, point, 0.0, cfg.samples.bbgky);
    let pts = bbgky_residual(&spec, &grid, cfg.run.inner)?;
    let failing: Vec<String> = pts
        .iter()
        .filter(|p| !p.passes(cfg.run.nsigma))
        .map(|p| {
            format!(
                "t = {}: residual {:.6e} ± {:.2e} (quadrature bound {:.2e})",
                p.t, p.residual, p.stderr, p.quadrature_bound
            )
        })
        .collect();
    let failure = (!failing.is_empty()).then(|| format!("hierarchy residual beyond {} sigma at {}", cfg.run.nsigma, failing.join("; ")));
    let table = Csv {
        header: ["t", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "residual", "stderr", "quadrature_bound"]
            .map(String::from)
            .to_vec(),
        rows: pts
            .iter()
            .map(|p| {
                vec![
                    num(p.t),
                    num(p.lhs.value),
                    num(p.lhs.stderr),
                    num(p.rhs.value),
                    num(p.rhs.stderr),
                    num(p.residual),
                    num(p.stderr),
                    num(p.quadrature_bound),
                ]
            })
            .collect(),
    };
    let result = json!({ "grid": grid, "points": to_value(&pts)?, "passed": failure.is_none() });
    Ok(Outcome { result, csv: vec![("bbgky.csv", table)], failure })
}

fn sweep(cfg: &RunConfig) -> Result<Outcome> {
    let s = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep needs a [sweep] table".into()))?;
    if s.values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    let base = cfg.measure()?;
    let point = cfg.point(&base, horizon(cfg))?;
    let samples = match s.estimator {
        config::SweepEstimator::RhoSeries => cfg.samples.series,
        config::SweepEstimator::RhoDirect => cfg.samples.direct,
    };
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &x in &s.values {
        let (measure, t) = match s.parameter {
            config::SweepParameter::T => (base.clone(), x),
            config::SweepParameter::Lambda => {
                let variant = match cfg.measure.variant.clone() {
                    MeasureVariant::PerturbedProduct { beta, wavevector, profile, .. } => {
                        MeasureVariant::PerturbedProduct { beta, lambda: x, wavevector, profile }
                    }
                    _ => return Err(CliError::Config("a lambda sweep needs the perturbed_product measure".into())),
                };
                (cfg.measure_with(variant)?, cfg.time.t)
            }
        };
        let spec = cfg.spec(measure, point.clone(), t, samples);
        let est = match s.estimator {
            config::SweepEstimator::RhoSeries => rho_series(&spec)?,
            config::SweepEstimator::RhoDirect => rho_direct(&spec)?,
        };
        rows.push(vec![num(x), num(t), num(est.value), num(est.stderr), est.n_samples.to_string()]);
        entries.push(json!({ "value": x, "t": t, "estimate": to_value(&est)? }));
    }
    let table = Csv { header: ["value", "t", "estimate", "stderr", "n_samples"].map(String::from).to_vec(), rows };
    let result = json!({ "parameter": s.parameter, "estimator": s.estimator, "point": to_value(&point)?, "series": entries });
    Ok(Outcome { result, csv: vec![("sweep.csv", table)], failure: None })
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}
