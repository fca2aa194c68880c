//! Command-line driver. `main.rs` only forwards to [`main_with`].

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::characteristics::{
    a2_lambda, ap_lambda, comparability, cube_testing, haar_testing, haar_testing_dual, lp_cube_testing, lp_haar_testing,
    lp_haar_testing_dual, quadratic_ap_l2, quadratic_haar_testing, quadratic_offset_ap, tested_operator_norm, CubeMode,
    CubeSource, FamilySource, LpConfig, TestingMode,
};
use crate::config::{CommandKind, ExperimentKind, GridConfig, Resolved, RunConfig};
use crate::dyadic::AxisCube;
use crate::error::{Error, Result};
use crate::experiments::{
    a2_lower_bound_experiment, accept_delta, counterexample_search, halo_cover, matrix_counterexample, quadratic_ap_experiment,
    triple_absorption_experiment, LowerBoundConfig, MatrixCounterexampleConfig, QuadraticConfig, SearchConfig,
};
use crate::frames::{banach_frame_check, hilbert_frame_bounds, lp_square_function_bounds};
use crate::haar::{BasisChoice, HaarSystem};

#[derive(Debug, Parser)]
#[command(name = "haartest", version, about = "Two-weight Haar testing experiments on dyadic meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Operator norm, testing and Muckenhoupt characteristics for one pair.
    Characteristics,
    /// One of the structured experiments.
    Experiment {
        /// a2-lower-bound, kernel-difference, absorption, quadratic or halo.
        kind: Option<ExperimentKind>,
    },
    /// Leaderboard search over (sigma, omega) pairs.
    Search {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        mutations: Option<usize>,
    },
    /// Frame bounds of the weighted Haar system.
    Frames {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// The upper-triangular matrix with square-summable rows and columns.
    MatrixDemo {
        #[arg(long)]
        gamma: Option<f64>,
        /// `lo:hi` exponents of `N = 2^k`.
        #[arg(long)]
        ladder: Option<String>,
    },
    /// Run whatever the config file names.
    Run,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub kernel: Option<String>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Comma-separated measure specs.
    #[arg(long, global = true, value_delimiter = ',')]
    pub measures: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true)]
    pub depth: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub rotation_samples: Option<u32>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub max_level: Option<u32>,
    /// Output directory; without one the JSON goes to stdout.
    #[arg(long, global = true, env = "HAARTEST_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

impl Cli {
    /// The config file (if any) overlaid with the flags.
    pub fn run_config(&self) -> Result<RunConfig> {
        let base = match &self.common.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        let c = &self.common;
        let mut top = RunConfig {
            kernel: c.kernel.clone(),
            lambda: c.lambda,
            eps: c.eps,
            r: c.r,
            measures: c.measures.clone(),
            p: c.p,
            depth: c.depth,
            seed: c.seed,
            trials: c.trials,
            rotation_samples: c.rotation_samples,
            out: c.out.clone(),
            ..Default::default()
        };
        if c.dim.is_some() || c.max_level.is_some() {
            top.grid = Some(GridConfig { dim: c.dim, max_level: c.max_level, ..Default::default() });
        }
        match &self.command {
            Command::Characteristics => top.command = Some(CommandKind::Characteristics),
            Command::Experiment { kind } => {
                top.command = Some(CommandKind::Experiment);
                top.experiment = *kind;
            }
            Command::Search { iterations, mutations } => {
                top.command = Some(CommandKind::Search);
                top.iterations = *iterations;
                top.mutations = *mutations;
            }
            Command::Frames { samples } => {
                top.command = Some(CommandKind::Frames);
                top.samples = *samples;
            }
            Command::MatrixDemo { gamma, ladder } => {
                top.command = Some(CommandKind::MatrixDemo);
                top.gamma = *gamma;
                top.ladder = ladder.clone();
            }
            Command::Run => {}
        }
        Ok(base.merged(top))
    }
}

/// Result of one pipeline: the report, optional CSV tables and the first failed check.
#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub tables: Vec<(String, String)>,
    pub failure: Option<Error>,
}

impl Outcome {
    fn new<T: Serialize>(report: &T, failure: Option<Error>) -> Result<Self> {
        Ok(Self { report: serde_json::to_value(report)?, tables: Vec::new(), failure })
    }
}

/// The JSON document written for a run. `metadata` is the only part that
/// varies between identical runs.
pub fn envelope(cfg: &Resolved, outcome: &Outcome, metadata: Value) -> Result<Value> {
    Ok(json!({
        "command": cfg.command.as_str(),
        "config": serde_json::to_value(cfg)?,
        "passed": outcome.failure.is_none(),
        "failed_check": outcome.failure.as_ref().map(|e| e.to_string()),
        "report": outcome.report,
        "metadata": metadata,
    }))
}

pub fn execute(cfg: &Resolved) -> Result<Outcome> {
    match cfg.command {
        CommandKind::Characteristics => characteristics(cfg),
        CommandKind::Experiment => experiment(cfg),
        CommandKind::Search => search(cfg),
        CommandKind::Frames => frames(cfg),
        CommandKind::MatrixDemo => matrix(cfg),
    }
}

fn pair(cfg: &Resolved) -> Result<(crate::operator::DiscreteOperator, Vec<crate::measure::MeshMeasure>)> {
    let op = cfg.operator()?;
    let ms = cfg.measures(op.grid())?;
    Ok((op, ms))
}

fn characteristics(cfg: &Resolved) -> Result<Outcome> {
    let (op, ms) = pair(cfg)?;
    let (s, w) = (&ms[0], &ms[1]);
    let (d, rot, seed, lambda) = (cfg.depth, cfg.rotation_samples, cfg.seed, cfg.lambda);
    let dy = CubeSource::Dyadic { depth: d };
    let mut chars = vec![
        tested_operator_norm(&op, s, w, d, 1e-13, 20_000)?,
        haar_testing(&op, s, w, TestingMode::Global, d, rot, seed)?,
        haar_testing_dual(&op, s, w, TestingMode::Global, d, rot, seed)?,
        haar_testing(&op, s, w, TestingMode::Local, d, rot, seed)?,
        haar_testing_dual(&op, s, w, TestingMode::Local, d, rot, seed)?,
        cube_testing(&op, s, w, CubeMode::Global, &dy)?,
        cube_testing(&op, s, w, CubeMode::Triple, &dy)?,
        cube_testing(&op, s, w, CubeMode::Local, &dy)?,
        a2_lambda(s, w, lambda, &dy)?,
    ];
    if cfg.p != 2.0 {
        chars.push(lp_haar_testing(&op, s, w, cfg.p, TestingMode::Global, d, rot, seed)?);
        chars.push(lp_haar_testing_dual(&op, s, w, cfg.p, TestingMode::Global, d, rot, seed)?);
        chars.push(lp_cube_testing(&op, s, w, CubeMode::Global, &dy, cfg.p)?);
        chars.push(ap_lambda(s, w, lambda, LpConfig::new(cfg.p)?, &dy)?);
    }
    let fam = FamilySource { levels: (0..d.saturating_sub(1).max(1)).collect(), families: 50, max_size: 4 };
    chars.push(quadratic_offset_ap(s, w, lambda, cfg.p, &fam, seed)?);
    chars.push(quadratic_ap_l2(s, w, lambda, cfg.p, &fam, 3, seed)?);
    chars.push(quadratic_haar_testing(&op, s, w, cfg.p, d.min(5), 50, 4, seed)?);

    let mut rows = Vec::new();
    let mut failure = None;
    for r in [rot, 2 * rot] {
        let c = comparability(&op, s, w, d, r, seed)?;
        if c.ratio < 0.5 - 1e-9 && failure.is_none() {
            failure = Some(Error::check("trivial_direction", format!("ratio {} < 1/2 at rotation_samples {r}", c.ratio)));
        }
        rows.push(c);
    }
    let caveat = format!(
        "sup taken over sigma-Haar wavelets of levels 0..{d} and {rot}/{} rotated bases; a lower estimate of the true testing constants",
        2 * rot
    );
    let report = json!({ "characteristics": chars, "ratio_table": rows, "caveat": caveat });
    let mut out = Outcome::new(&report, failure)?;
    let mut csv = String::from("depth,rotation_samples,norm,testing,testing_dual,ratio\n");
    for c in &rows {
        csv.push_str(&format!("{},{},{:.12e},{:.12e},{:.12e},{:.12e}\n", c.depth, c.rotation_samples, c.norm, c.testing, c.testing_dual, c.ratio));
    }
    out.tables.push(("ratio_table.csv".into(), csv));
    Ok(out)
}

fn random_cubes(window_lower: &[f64], window: f64, count: usize, seed: u64) -> Vec<AxisCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let side = window * rng.random_range(0.1..0.45);
            let lower = window_lower.iter().map(|l| l + rng.random_range(0.0..window - side)).collect();
            AxisCube::new(lower, side)
        })
        .collect()
}

fn experiment(cfg: &Resolved) -> Result<Outcome> {
    let kind = cfg.experiment.ok_or_else(|| Error::Config("field `experiment`: not set".into()))?;
    match kind {
        ExperimentKind::A2LowerBound => {
            let (op, ms) = pair(cfg)?;
            let lc = LowerBoundConfig { trials: cfg.trials, seed: cfg.seed, samples: cfg.samples, depth: Some(cfg.depth) };
            let r = a2_lower_bound_experiment(&op, &ms[0], &ms[1], &lc)?;
            Outcome::new(&r, r.ensure().err())
        }
        ExperimentKind::Absorption => {
            let (op, ms) = pair(cfg)?;
            let r = triple_absorption_experiment(&op, &ms[0], &ms[1], cfg.depth)?;
            Outcome::new(&r, None)
        }
        ExperimentKind::Quadratic => {
            let (op, ms) = pair(cfg)?;
            let qc = QuadraticConfig { p: cfg.p, seed: cfg.seed, samples: cfg.samples.min(100), ..Default::default() };
            let r = quadratic_ap_experiment(&op, &ms[0], &ms[1], &qc)?;
            Outcome::new(&r, r.ensure().err())
        }
        ExperimentKind::KernelDifference => {
            let grid = cfg.grid()?;
            let kernel = cfg.kernel()?;
            let mut rows = Vec::new();
            let mut failure = None;
            for trial in 0..cfg.trials {
                let mut rng = crate::experiments::lower_bound::trial_rng(cfg.seed, trial);
                let (base, v) = crate::experiments::lower_bound::random_base(&grid, &mut rng)?;
                match accept_delta(&kernel, &cfg.truncation, &grid, &base, &v, cfg.samples, cfg.seed + trial as u64) {
                    Ok((t, rep)) => rows.push(json!({ "trial": trial, "triple": t, "report": rep })),
                    Err(e @ Error::NoAlignedConfiguration(_)) => rows.push(json!({ "trial": trial, "skipped": e.to_string() })),
                    Err(e) => {
                        if failure.is_none() {
                            failure = Some(Error::check("kernel_difference", format!("trial {trial}: {e}")));
                        }
                        rows.push(json!({ "trial": trial, "error": e.to_string() }));
                    }
                }
            }
            Outcome::new(&json!({ "trials": rows }), failure)
        }
        ExperimentKind::Halo => {
            let grid = cfg.grid()?;
            let ms = cfg.measures(&grid)?;
            let cubes = random_cubes(&grid.window_lower(), grid.window_side(), cfg.trials.min(20), cfg.seed);
            let mut rows = Vec::new();
            let mut failure = None;
            for (mi, mu) in ms.iter().enumerate() {
                for (ci, i) in cubes.iter().enumerate() {
                    let res = halo_cover(mu, i, cfg.epsilon, cfg.eta).and_then(|h| h.verify(mu).map(|_| h));
                    match res {
                        Ok(h) => rows.push(json!({ "measure": mu.label(), "cube": ci, "cover": h })),
                        Err(e) => {
                            if failure.is_none() {
                                failure = Some(Error::check("halo_cover", format!("measure {mi}, cube {ci}: {e}")));
                            }
                            rows.push(json!({ "measure": mu.label(), "cube": ci, "i": i, "error": e.to_string() }));
                        }
                    }
                }
            }
            Outcome::new(&json!({ "covers": rows }), failure)
        }
    }
}

fn search(cfg: &Resolved) -> Result<Outcome> {
    let op = cfg.operator()?;
    let family: Vec<_> = cfg.measures.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let sc = SearchConfig {
        iterations: cfg.iterations,
        mutations: cfg.mutations,
        depth: cfg.depth,
        rotation_samples: cfg.rotation_samples,
        seed: cfg.seed,
        ..Default::default()
    };
    let r = counterexample_search(&op, &family, &sc)?;
    let failure = (r.min_ratio < 0.5 - 1e-9).then(|| Error::check("trivial_direction", format!("ratio {} < 1/2", r.min_ratio)));
    let mut out = Outcome::new(&r, failure)?;
    let mut buf = Vec::new();
    r.write_csv(&mut buf)?;
    out.tables.push(("leaderboard.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    Ok(out)
}

fn frames(cfg: &Resolved) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let ms = cfg.measures(&grid)?;
    let mut rows = Vec::new();
    let mut failure = None;
    for mu in &ms {
        let sys = HaarSystem::build(mu, cfg.depth, BasisChoice::Canonical)?;
        let els: Vec<_> = sys.iter().map(|h| h.to_mesh(&grid)).collect();
        let hilbert = hilbert_frame_bounds(&els, mu, cfg.samples, cfg.seed)?;
        let square = lp_square_function_bounds(mu, cfg.p, cfg.depth, cfg.samples, cfg.seed)?;
        let banach = banach_frame_check(mu, cfg.p, cfg.depth, cfg.samples, cfg.seed)?;
        if let Err(e) = banach.ensure() {
            failure.get_or_insert(e);
        }
        rows.push(json!({ "measure": mu.label(), "hilbert": hilbert, "square_function": square, "banach": banach }));
    }
    Outcome::new(&json!({ "measures": rows }), failure)
}

fn matrix(cfg: &Resolved) -> Result<Outcome> {
    let r = matrix_counterexample(&MatrixCounterexampleConfig::new(cfg.gamma, cfg.ladder.clone())?)?;
    let failure = (!r.passed).then(|| Error::check("matrix_growth", "growth is not strictly increasing along the ladder"));
    let mut out = Outcome::new(&r, failure)?;
    let mut buf = Vec::new();
    r.write_csv(&mut buf)?;
    out.tables.push(("growth.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    Ok(out)
}

fn write_outputs(dir: &Path, cfg: &Resolved, doc: &Value, tables: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.json", cfg.command.as_str())), serde_json::to_string_pretty(doc)? + "\n")?;
    for (name, body) in tables {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) => 3,
        Error::CheckFailed { .. } => 1,
        _ => 4,
    }
}

/// Parse `args`, run, write outputs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match drive(&cli) {
        Ok(None) => 0,
        Ok(Some(check)) => {
            eprintln!("haartest: {check}");
            1
        }
        Err(e) => {
            eprintln!("haartest: {e}");
            exit_code(&e)
        }
    }
}

fn drive(cli: &Cli) -> Result<Option<String>> {
    let rc = cli.run_config()?;
    let cfg = rc.resolve()?;
    let workers = cli.common.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if workers == 0 {
        return Err(Error::Config("field `workers`: must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("field `workers`: {e}")))?;
    let start = Instant::now();
    let outcome = pool.install(|| execute(&cfg))?;
    let metadata = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "elapsed_ms": start.elapsed().as_millis() as u64,
        "workers": workers,
    });
    let doc = envelope(&cfg, &outcome, metadata)?;
    match &rc.out {
        Some(dir) => write_outputs(dir, &cfg, &doc, &outcome.tables)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(outcome.failure.map(|e| e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(args: &[&str]) -> Result<Resolved> {
        let cli = Cli::try_parse_from(args).unwrap();
        cli.run_config()?.resolve()
    }

    #[test]
    fn run_without_config_fails_validation() {
        let e = resolve(&["haartest", "run"]).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn matrix_demo_table() {
        let cfg = resolve(&["haartest", "matrix-demo", "--gamma", "0.6", "--ladder", "10:14"]).unwrap();
        let out = execute(&cfg).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.tables[0].1.lines().count(), 6);
        assert_eq!(out.report["col_sup"], json!(1.0));
    }

    #[test]
    fn report_independent_of_pool_size() {
        let cfg = resolve(&[
            "haartest", "search", "--kernel", "hilbert", "--measures", "doubling:2:1,lebesgue", "--max-level", "6", "--depth", "4",
            "--iterations", "3", "--mutations", "2",
        ])
        .unwrap();
        let run = |n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            let o = pool.install(|| execute(&cfg)).unwrap();
            serde_json::to_string(&envelope(&cfg, &o, Value::Null).unwrap()).unwrap()
        };
        assert_eq!(run(1), run(3));
    }
}
