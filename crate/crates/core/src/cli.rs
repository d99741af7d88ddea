//! Command-line front end.
//!
//! Settings come from flags and, optionally, a key-value file passed with
//! `--config`: one `key = value` per line, `#` starts a comment, keys are the
//! long flag names (`n-epochs` or `n_epochs`). Flags override file values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gnss::{Epoch, ProcessNoiseConfig, P0_DIAG};
use crate::ingest::{load_epochs, load_truth, write_epochs, write_truth};
use crate::metrics::{score_run, RunReport, TruthFix};
use crate::pipeline::{run_estimator, EstimatorConfig, EstimatorKind, DEFAULT_HORIZON};
use crate::simulate::{generate_scenario, ScenarioConfig, Trajectory};
use crate::verify::{gnss_suite, run_suite, theorem1_suite, Suite, SuiteReport};

pub const THREADS_ENV: &str = "HORIZON_EST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "horizon-est", version, about = "Recursive MHE, EKF, FGO and WLS for GNSS positioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one estimator and score it against truth.
    Run(RunArgs),
    /// Run identity suites on seeded random systems.
    Verify(VerifyArgs),
    /// Run a horizon estimator for several horizon sizes.
    Sweep(SweepArgs),
    /// Write a synthetic scenario as epoch and truth CSVs.
    Simulate(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Key-value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// wls, ekf, mhe or fgo.
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Epoch measurements CSV.
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    /// Ground-truth CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Use a generated scenario instead of files.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_epochs: Option<usize>,
    #[arg(long)]
    pub n_sats: Option<usize>,
    #[arg(long)]
    pub sigma_pr: Option<f64>,
    #[arg(long)]
    pub sigma_prr: Option<f64>,
    /// static, constant_velocity or waypoint_turns.
    #[arg(long)]
    pub trajectory: Option<String>,
    /// Position-velocity PSD, m²/s³.
    #[arg(long)]
    pub sp: Option<f64>,
    /// Clock-bias PSD, m²/s.
    #[arg(long)]
    pub sf: Option<f64>,
    /// Clock-drift PSD, m²/s³.
    #[arg(long)]
    pub sg: Option<f64>,
    /// Diagonal of the initial Riccati matrix.
    #[arg(long)]
    pub p0: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated horizon sizes.
    #[arg(long)]
    pub horizons: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// theorem1, lemma2, lemma3, corollary21, bls, optimality, gnss or all.
    pub suite: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Trials per suite; each suite has its own default.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Directory for the JSON summary and divergence traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    Files { epochs: PathBuf, truth: PathBuf },
    Synthetic(ScenarioConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub estimator: EstimatorKind,
    pub horizon: usize,
    pub input: InputSource,
    pub process_noise: ProcessNoiseConfig,
    pub p0_diag: f64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            kind: self.estimator,
            horizon: self.horizon,
            process_noise: self.process_noise,
            p0_diag: self.p0_diag,
        }
    }
}

/// Parses a `key = value` settings file into a map with `_` normalized to `-`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value", i + 1)))?;
        map.insert(key.trim().replace('_', "-"), value.trim().to_string());
    }
    Ok(map)
}

fn settings(args: &RunArgs, horizons: Option<&String>) -> Result<BTreeMap<String, String>> {
    let mut map = match &args.config {
        Some(path) => parse_config_text(&std::fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let mut set = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    set("estimator", args.estimator.clone());
    set("horizon", args.horizon.map(|v| v.to_string()));
    set("epochs", path(&args.epochs));
    set("truth", path(&args.truth));
    set("synthetic", args.synthetic.then(|| "true".to_string()));
    set("seed", args.seed.map(|v| v.to_string()));
    set("n-epochs", args.n_epochs.map(|v| v.to_string()));
    set("n-sats", args.n_sats.map(|v| v.to_string()));
    set("sigma-pr", args.sigma_pr.map(|v| v.to_string()));
    set("sigma-prr", args.sigma_prr.map(|v| v.to_string()));
    set("trajectory", args.trajectory.clone());
    set("sp", args.sp.map(|v| v.to_string()));
    set("sf", args.sf.map(|v| v.to_string()));
    set("sg", args.sg.map(|v| v.to_string()));
    set("p0", args.p0.map(|v| v.to_string()));
    set("out", path(&args.out));
    set("horizons", horizons.cloned());
    Ok(map)
}

const KNOWN_KEYS: [&str; 17] = [
    "estimator", "horizon", "epochs", "truth", "synthetic", "seed", "n-epochs", "n-sats", "sigma-pr",
    "sigma-prr", "trajectory", "sp", "sf", "sg", "p0", "out", "horizons",
];

struct Settings(BTreeMap<String, String>);

impl Settings {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Usage(format!("invalid value '{v}' for {key}"))))
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

fn scenario_from(s: &Settings) -> Result<ScenarioConfig> {
    let d = ScenarioConfig::default();
    Ok(ScenarioConfig {
        n_epochs: s.or("n-epochs", d.n_epochs)?,
        n_sats: s.or("n-sats", d.n_sats)?,
        sigma_pr: s.or("sigma-pr", d.sigma_pr)?,
        sigma_prr: s.or("sigma-prr", d.sigma_prr)?,
        seed: s.or("seed", d.seed)?,
        trajectory: match s.0.get("trajectory") {
            Some(t) => t.parse::<Trajectory>()?,
            None => d.trajectory,
        },
        ..d
    })
}

fn build_config(map: BTreeMap<String, String>) -> Result<RunConfig> {
    if let Some(unknown) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Error::Usage(format!("unknown setting '{unknown}'")));
    }
    let s = Settings(map);
    let estimator: EstimatorKind = s.or("estimator", EstimatorKind::Mhe)?;
    let horizon_given: Option<usize> = s.get("horizon")?;
    if horizon_given.is_some() && !estimator.uses_horizon() {
        eprintln!("warning: --horizon is ignored by {estimator}");
    }
    let synthetic = s.or("synthetic", false)?;
    let input = match (synthetic, s.0.get("epochs"), s.0.get("truth")) {
        (true, None, None) => InputSource::Synthetic(scenario_from(&s)?),
        (false, Some(e), Some(t)) => InputSource::Files { epochs: e.into(), truth: t.into() },
        (true, _, _) => return Err(Error::Usage("--synthetic cannot be combined with --epochs/--truth".into())),
        (false, None, None) => return Err(Error::Usage("give --epochs and --truth, or --synthetic".into())),
        (false, _, _) => return Err(Error::Usage("--epochs and --truth must be given together".into())),
    };
    let defaults = ProcessNoiseConfig::default();
    let process_noise = ProcessNoiseConfig {
        s_p: s.or("sp", defaults.s_p)?,
        s_f: s.or("sf", defaults.s_f)?,
        s_g: s.or("sg", defaults.s_g)?,
    };
    process_noise.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let p0_diag = s.or("p0", P0_DIAG)?;
    if !(p0_diag > 0.0) {
        return Err(Error::Usage(format!("--p0 must be positive, got {p0_diag}")));
    }
    let out_dir: PathBuf = s.get::<String>("out")?.map(PathBuf::from).ok_or_else(|| Error::Usage("--out is required".into()))?;
    Ok(RunConfig {
        estimator,
        horizon: horizon_given.unwrap_or(DEFAULT_HORIZON),
        input,
        process_noise,
        p0_diag,
        out_dir,
    })
}

pub fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    build_config(settings(args, None)?)
}

/// Loaded or generated epochs and truth for a run.
pub struct Inputs {
    pub epochs: Vec<Epoch>,
    pub truth: Vec<TruthFix>,
}

pub fn load_inputs(input: &InputSource) -> Result<Inputs> {
    match input {
        InputSource::Files { epochs, truth } => {
            let e = load_epochs(epochs)?;
            let t = load_truth(truth)?;
            if e.dropped_rows > 0 {
                eprintln!("warning: dropped {} epoch rows with non-finite fields", e.dropped_rows);
            }
            if t.dropped_rows > 0 {
                eprintln!("warning: dropped {} truth rows with non-finite fields", t.dropped_rows);
            }
            Ok(Inputs { epochs: e.items, truth: t.items })
        }
        InputSource::Synthetic(cfg) => {
            let scenario = generate_scenario(cfg)?;
            let truth = scenario.truth_fixes()?;
            Ok(Inputs { epochs: scenario.epochs, truth })
        }
    }
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn estimate_and_score(inputs: &Inputs, cfg: &EstimatorConfig) -> Result<RunReport> {
    let trace = run_estimator(&inputs.epochs, cfg)?;
    for (t, reason) in &trace.skipped {
        eprintln!("warning: epoch {t} skipped: {reason}");
    }
    for (k, cond) in &trace.diagnostics.ill_conditioned {
        eprintln!("warning: epoch {k}: normal matrix condition estimate {cond:.3e}");
    }
    for k in &trace.diagnostics.jittered {
        eprintln!("warning: epoch {k}: factorization needed diagonal jitter");
    }
    let horizon = cfg.kind.uses_horizon().then_some(cfg.horizon);
    score_run(&trace.positions(), &inputs.truth, cfg.kind.as_str(), horizon)
}

fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.json"), &report.to_json()?)?;
    write_atomic(&dir.join("report.csv"), &report.to_csv())
}

/// Runs the configured estimator and writes `report.json`, `report.csv` and `config.json`.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let inputs = load_inputs(&config.input)?;
    let report = estimate_and_score(&inputs, &config.estimator_config())?;
    write_report(&config.out_dir, &report)?;
    write_atomic(&config.out_dir.join("config.json"), &serde_json::to_string_pretty(config)?)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub horizontal_mean_m: Option<f64>,
    pub vertical_rmse_m: Option<f64>,
    pub error: Option<String>,
}

pub fn parse_horizons(text: &str) -> Result<Vec<usize>> {
    let horizons = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Usage(format!("invalid horizon '{s}'"))))
        .collect::<Result<Vec<usize>>>()?;
    if horizons.is_empty() {
        return Err(Error::Usage("horizon list is empty".into()));
    }
    Ok(horizons)
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// One run per horizon, rows in the order given; each row's report lands in `out/horizon_<N>/`.
pub fn sweep(config: &RunConfig, horizons: &[usize]) -> Result<Vec<SweepRow>> {
    if horizons.is_empty() {
        return Err(Error::Usage("horizon list is empty".into()));
    }
    if !config.estimator.uses_horizon() {
        return Err(Error::Usage(format!("sweep needs mhe or fgo, got {}", config.estimator)));
    }
    let inputs = load_inputs(&config.input)?;
    let row = |&horizon: &usize| -> SweepRow {
        let cfg = EstimatorConfig { horizon, ..config.estimator_config() };
        let result = estimate_and_score(&inputs, &cfg).and_then(|report| {
            write_report(&config.out_dir.join(format!("horizon_{horizon}")), &report)?;
            Ok(report)
        });
        match result {
            Ok(r) => SweepRow {
                horizon,
                horizontal_mean_m: Some(r.summary.horizontal_mean_m),
                vertical_rmse_m: Some(r.summary.vertical_rmse_m),
                error: None,
            },
            Err(e) => SweepRow { horizon, horizontal_mean_m: None, vertical_rmse_m: None, error: Some(e.to_string()) },
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| horizons.par_iter().map(row).collect());

    std::fs::create_dir_all(&config.out_dir)?;
    let mut csv = String::from("horizon,horizontal_mean_m,vertical_rmse_m,error\n");
    let real = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
    for r in &rows {
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let _ = writeln!(csv, "{},{},{},\"{}\"", r.horizon, real(r.horizontal_mean_m), real(r.vertical_rmse_m), err);
    }
    write_atomic(&config.out_dir.join("sweep.csv"), &csv)?;
    write_atomic(&config.out_dir.join("sweep.json"), &serde_json::to_string_pretty(&rows)?)?;
    write_atomic(&config.out_dir.join("config.json"), &serde_json::to_string_pretty(config)?)?;
    Ok(rows)
}

/// Writes the configured synthetic scenario as `epochs.csv` and `truth.csv` under `out`.
pub fn simulate_to(scenario: &ScenarioConfig, out: &Path) -> Result<()> {
    let s = generate_scenario(scenario)?;
    std::fs::create_dir_all(out)?;
    write_epochs(&out.join("epochs.csv"), &s.epochs)?;
    write_truth(&out.join("truth.csv"), &s.truth_fixes()?)
}

fn verify(args: &VerifyArgs) -> Result<Vec<SuiteReport>> {
    let suites = if args.suite == "all" { Suite::ALL.to_vec() } else { vec![args.suite.parse::<Suite>()?] };
    if args.trials == Some(0) {
        return Err(Error::Usage("--trials must be at least 1".into()));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
    }
    let mut reports = Vec::new();
    for suite in suites {
        let trials = args.trials.unwrap_or(suite.default_trials());
        let report = match (suite, &args.out) {
            (Suite::Theorem1, Some(dir)) => {
                let (report, trace) = theorem1_suite(args.seed, trials);
                let mut csv = String::from("trial,horizon,k,relative_difference\n");
                for s in &trace {
                    let _ = writeln!(csv, "{},{},{},{:.16e}", s.trial, s.horizon, s.k, s.relative_difference);
                }
                write_atomic(&dir.join("theorem1_trace.csv"), &csv)?;
                report
            }
            (Suite::Gnss, Some(dir)) => {
                let (report, trace) = gnss_suite(args.seed, trials);
                let mut csv = String::from("utc_ms,horizon,filtered_diff_m,predicted_diff_m\n");
                for s in &trace {
                    let _ = writeln!(csv, "{},{},{:.16e},{:.16e}", s.t_ms, s.horizon, s.filtered_m, s.predicted_m);
                }
                write_atomic(&dir.join("gnss_trace.csv"), &csv)?;
                report
            }
            _ => run_suite(suite, args.seed, trials),
        };
        println!("{report}");
        reports.push(report);
    }
    if let Some(dir) = &args.out {
        write_atomic(&dir.join("verify.json"), &serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(reports)
}

fn print_summary(report: &RunReport) {
    let s = &report.summary;
    println!(
        "{} horizon={} epochs={} unmatched={} horizontal_mean_m={:.6} vertical_rmse_m={:.6}",
        s.estimator_name,
        s.horizon.map_or("-".to_string(), |h| h.to_string()),
        s.n_epochs,
        s.n_unmatched,
        s.horizontal_mean_m,
        s.vertical_rmse_m
    );
}

/// Executes a parsed command; `Ok(false)` means the command ran but reported failures.
pub fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let config = resolve_run_config(&args)?;
            print_summary(&run(&config)?);
            Ok(true)
        }
        Command::Sweep(args) => {
            let map = settings(&args.run, args.horizons.as_ref())?;
            let horizons = parse_horizons(map.get("horizons").map(String::as_str).unwrap_or(""))?;
            let config = build_config(map.into_iter().filter(|(k, _)| k != "horizons").collect())?;
            let rows = sweep(&config, &horizons)?;
            for r in &rows {
                match (&r.error, r.horizontal_mean_m, r.vertical_rmse_m) {
                    (Some(e), _, _) => println!("N={} error: {e}", r.horizon),
                    (None, Some(h), Some(v)) => println!("N={} horizontal_mean_m={h:.9} vertical_rmse_m={v:.9}", r.horizon),
                    _ => unreachable!("rows carry either metrics or an error"),
                }
            }
            Ok(rows.iter().all(|r| r.error.is_none()))
        }
        Command::Simulate(args) => {
            let map = settings(&args, None)?;
            let s = Settings(map);
            let out: PathBuf = s.get::<String>("out")?.map(PathBuf::from).ok_or_else(|| Error::Usage("--out is required".into()))?;
            simulate_to(&scenario_from(&s)?, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Verify(args) => Ok(verify(&args)?.iter().all(|r| r.passed)),
    }
}

/// Entry point shared by the binary: parses `args`, runs, and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parsing() {
        let map = parse_config_text("# comment\nestimator = ekf\nn_epochs=20 # trailing\n\n").unwrap();
        assert_eq!(map.get("estimator").unwrap(), "ekf");
        assert_eq!(map.get("n-epochs").unwrap(), "20");
        assert!(parse_config_text("nonsense").is_err());
    }

    #[test]
    fn horizons_parse() {
        assert_eq!(parse_horizons("0, 1,5").unwrap(), vec![0, 1, 5]);
        assert!(matches!(parse_horizons(""), Err(Error::Usage(_))));
        assert!(parse_horizons("1,x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg.txt");
        std::fs::write(&file, "estimator = ekf\nsynthetic = true\nseed = 3\nout = a\n").unwrap();
        let args = RunArgs { config: Some(file), seed: Some(9), ..Default::default() };
        let cfg = resolve_run_config(&args).unwrap();
        assert_eq!(cfg.estimator, EstimatorKind::Ekf);
        match cfg.input {
            InputSource::Synthetic(s) => assert_eq!(s.seed, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn input_source_rules() {
        let base = RunArgs { out: Some("o".into()), ..Default::default() };
        assert!(matches!(resolve_run_config(&base), Err(Error::Usage(_))));
        let files = RunArgs { epochs: Some("e.csv".into()), ..base.clone() };
        assert!(matches!(resolve_run_config(&files), Err(Error::Usage(_))));
        let bad = RunArgs { synthetic: true, p0: Some(0.0), ..base };
        assert!(matches!(resolve_run_config(&bad), Err(Error::Usage(_))));
    }
}
