mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use tubepi::conformal::{run_trials, ConformalMethod, TrialConfig, TrialRecord};
use tubepi::data::{gen_white_noise, load_series, write_csv, Dataset};
use tubepi::forecast::{rolling_forecast, train_forecaster, train_forecaster_scaled, WindowSpec};
use tubepi::metrics::PIReport;
use tubepi::model::{fit_interval, IntervalPredictor};
use tubepi::oracle::{lemma_ratios, GridSpec, DEFAULT_GRID_STEPS};
use tubepi::tuning::{
    recalibrate_delta, sweep_r, SweepResult, DEFAULT_COVERAGE_SLACK, DEFAULT_DELTA_SCHEDULE, DEFAULT_R_GRID,
};
use tubepi::IntervalModel;

use config::{resolve_seed, DataSource, ExperimentArgs, Settings, SplitDefaults};
use output::{ensure_dir, ensure_finite, ensure_finite_report, write_json, write_predictions, write_table, ModelFile, SavedModel};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Diverged(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Data(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl From<tubepi::error::Error> for CliError {
    fn from(e: tubepi::error::Error) -> Self {
        use tubepi::error::Error as E;
        match e {
            E::InvalidParameter(_) => CliError::Config(e.to_string()),
            E::Diverged { .. } => CliError::Diverged(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

const EXIT_CODES: &str = "\
Exit status:
  0    success
  101  internal error (a bug)
  2    usage or config error (bad flag, unparsable TOML, invalid parameter)
  3    I/O error (missing or unwritable file)
  4    training diverged (non-finite parameters)
  5    data error (malformed CSV, corrupt or unsupported model file, too few rows)

The seed is taken from --seed, then TUBEPI_SEED, then the config file, then 0.";

#[derive(Parser)]
#[command(name = "tubepi", version, about = "Prediction intervals with the Tube loss", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Gen {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Output CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an interval model and evaluate it on the held-out rows.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Evaluate a saved model on a dataset.
    Eval {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Pick the split-line position r by validation sweep.
    SweepR {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Candidate values, comma separated.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Allowed validation coverage shortfall.
        #[arg(long, default_value_t = DEFAULT_COVERAGE_SLACK)]
        slack: f64,
    },
    /// Narrow the intervals by walking the width penalty up a schedule.
    Recalibrate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Coverage to keep on validation data; defaults to t.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        slack: f64,
        /// Increasing penalty weights starting at 0, comma separated.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<f64>>,
    },
    /// Region ratios at the exact scalar optimum for a sample.
    LemmaCheck(LemmaArgs),
    /// Split-conformal trials on synthetic Gaussian regression data.
    Conformal {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 600)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_calib: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
    },
    /// One-step-ahead interval forecasts on a series.
    Forecast {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Single-column series CSV; white noise when absent.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Lag window length.
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Min-max scale the series before training.
        #[arg(long)]
        scale: bool,
    },
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, default_value_t = 0.8)]
    t: f64,
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Sample size.
    #[arg(long, default_value_t = 5000)]
    m: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SampleDist::Normal)]
    distribution: SampleDist,
    /// Grid intervals per axis.
    #[arg(long, default_value_t = DEFAULT_GRID_STEPS)]
    grid_steps: usize,
    /// Also write report.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SampleDist {
    Normal,
    /// Chi-squared with 3 degrees of freedom.
    Chi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Tcr,
    Cqr,
    Both,
}

const TRAIN_SPLIT: SplitDefaults = SplitDefaults {
    train_frac: 1.0 / 3.0,
    val_frac: 0.0,
};
const TUNE_SPLIT: SplitDefaults = SplitDefaults {
    train_frac: 0.6,
    val_frac: 0.2,
};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tubepi: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Gen { exp, out } => gen(&exp, out.as_deref()),
        Command::Train { exp } => train(&exp),
        Command::Eval { exp, model } => eval(&exp, &model),
        Command::SweepR { exp, grid, slack } => sweep(&exp, grid, slack),
        Command::Recalibrate {
            exp,
            target,
            slack,
            schedule,
        } => recalibrate(&exp, target, slack, schedule),
        Command::LemmaCheck(args) => lemma_check(&args),
        Command::Conformal {
            exp,
            method,
            trials,
            n_train,
            n_calib,
            n_test,
        } => conformal(&exp, method, trials, [n_train, n_calib, n_test]),
        Command::Forecast {
            exp,
            series,
            window,
            scale,
        } => forecast(&exp, series.as_deref(), window, scale),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn timing(start: Instant, extra: Value) -> Value {
    let started_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let mut t = json!({ "started_at_unix": started_at, "total_seconds": start.elapsed().as_secs_f64() });
    if let (Value::Object(map), Value::Object(more)) = (&mut t, extra) {
        map.extend(more);
    }
    t
}

/// Checks, writes `report.json` into the output directory and returns its text.
fn finish(settings: &Settings, command: &str, results: Value, timing: Value) -> Result<String, CliError> {
    let doc = output::report(command, settings.seed, to_value(settings), results, timing);
    write_json(&settings.out_dir.join("report.json"), &doc)
}

fn pi_report(model: &impl IntervalModel, data: &Dataset, r: f64, t: f64) -> Result<(PIReport, Vec<f64>, Vec<f64>), CliError> {
    let (lo, hi) = model.predict_bounds(&data.features)?;
    let truth = data.true_bounds(t, r).ok();
    let rep = PIReport::evaluate(
        &data.targets,
        &lo,
        &hi,
        r,
        truth.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
    )?;
    Ok((rep, lo, hi))
}

fn training_summary(model: &IntervalPredictor) -> Value {
    match model {
        IntervalPredictor::Kernel(m) => to_value(&m.stats),
        IntervalPredictor::Net(m) => to_value(&m.stats),
    }
}

fn gen(exp: &ExperimentArgs, out: Option<&Path>) -> Result<String, CliError> {
    let settings = exp.resolve(TRAIN_SPLIT)?;
    if matches!(settings.data, DataSource::Csv { .. }) {
        return Err(CliError::Config("gen needs a generator, not --data".into()));
    }
    let data = settings.load_data()?;
    let mut buf = Vec::new();
    write_csv(&data, &mut buf)?;
    match out {
        Some(path) => {
            fs::write(path, &buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(String::new())
        }
        None => Ok(String::from_utf8(buf).expect("csv output is utf-8")),
    }
}

fn train(exp: &ExperimentArgs) -> Result<String, CliError> {
    let start = Instant::now();
    let settings = exp.resolve(TRAIN_SPLIT)?;
    ensure_dir(&settings.out_dir)?;
    let data = settings.load_data()?;
    let (train, _, test) = settings.split(&data)?;
    let params = settings.params;

    let fit_start = Instant::now();
    let model = fit_interval(&train, params, &settings.backbone)?;
    let train_seconds = fit_start.elapsed().as_secs_f64();

    let (test_report, lo, hi) = pi_report(&model, &test, params.r, params.t)?;
    let (train_report, _, _) = pi_report(&model, &train, params.r, params.t)?;
    ensure_finite_report("test metrics", &test_report)?;
    ensure_finite_report("train metrics", &train_report)?;
    write_predictions(&settings.out_dir.join("predictions.csv"), &test.features, &test.targets, &lo, &hi)?;
    let summary = training_summary(&model);
    ModelFile::new(settings.seed, params, SavedModel::Interval(model)).save(&settings.out_dir.join("model.json"))?;

    let results = json!({
        "n_train": train.len(),
        "n_test": test.len(),
        "training": summary,
        "train": train_report,
        "test": test_report,
    });
    finish(&settings, "train", results, timing(start, json!({ "train_seconds": train_seconds })))
}

fn eval(exp: &ExperimentArgs, model_path: &Path) -> Result<String, CliError> {
    let start = Instant::now();
    let settings = exp.resolve(TRAIN_SPLIT)?;
    ensure_dir(&settings.out_dir)?;
    let file = ModelFile::load(model_path)?;
    let SavedModel::Interval(model) = &file.model else {
        return Err(CliError::Data(format!("{}: holds a forecaster; use forecast", model_path.display())));
    };
    let data = settings.load_data()?;
    let (rep, lo, hi) = pi_report(model, &data, file.params.r, file.params.t)?;
    ensure_finite_report("eval metrics", &rep)?;
    write_predictions(&settings.out_dir.join("predictions.csv"), &data.features, &data.targets, &lo, &hi)?;
    let results = json!({ "model_params": file.params, "model_seed": file.seed, "eval": rep });
    finish(&settings, "eval", results, timing(start, json!({})))
}

fn sweep_outputs(settings: &Settings, command: &str, result: &SweepResult, extra: Value, start: Instant) -> Result<String, CliError> {
    for row in &result.rows {
        let test = [row.test_picp, row.test_mpiw].into_iter().flatten();
        ensure_finite("sweep metrics", [row.val_picp, row.val_mpiw].into_iter().chain(test))?;
    }
    write_table(&settings.out_dir.join("sweep.csv"), &result.rows)?;
    let mut results = to_value(result);
    if let (Value::Object(map), Value::Object(more)) = (&mut results, extra) {
        map.extend(more);
    }
    finish(settings, command, results, timing(start, json!({})))
}

fn sweep(exp: &ExperimentArgs, grid: Option<Vec<f64>>, slack: f64) -> Result<String, CliError> {
    let start = Instant::now();
    let settings = exp.resolve(TUNE_SPLIT)?;
    ensure_dir(&settings.out_dir)?;
    let data = settings.load_data()?;
    let (train, val, test) = settings.split(&data)?;
    let grid = grid.unwrap_or_else(|| DEFAULT_R_GRID.to_vec());
    let result = sweep_r(&train, &val, Some(&test), settings.params, &settings.backbone, &grid, slack)?;
    sweep_outputs(&settings, "sweep-r", &result, json!({ "slack": slack }), start)
}

fn recalibrate(exp: &ExperimentArgs, target: Option<f64>, slack: f64, schedule: Option<Vec<f64>>) -> Result<String, CliError> {
    let start = Instant::now();
    let settings = exp.resolve(TUNE_SPLIT)?;
    ensure_dir(&settings.out_dir)?;
    let data = settings.load_data()?;
    let (train, val, test) = settings.split(&data)?;
    let target = target.unwrap_or(settings.params.t);
    if !(target > 0.0 && target < 1.0) {
        return Err(CliError::Config(format!("target {target} not in (0, 1)")));
    }
    let schedule = schedule.unwrap_or_else(|| DEFAULT_DELTA_SCHEDULE.to_vec());
    let result = recalibrate_delta(&train, &val, Some(&test), settings.params, &settings.backbone, &schedule, target, slack)?;
    sweep_outputs(&settings, "recalibrate", &result, json!({ "target": target, "slack": slack }), start)
}

fn lemma_samples(dist: SampleDist, m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist {
        SampleDist::Normal => (0..m).map(|_| StandardNormal.sample(&mut rng)).collect(),
        SampleDist::Chi2 => {
            let chi = ChiSquared::new(3.0).expect("3 degrees of freedom is valid");
            (0..m).map(|_| chi.sample(&mut rng)).collect()
        }
    }
}

fn lemma_check(args: &LemmaArgs) -> Result<String, CliError> {
    let start = Instant::now();
    let seed = resolve_seed(args.seed, None)?;
    let params = tubepi::loss::TubeParams::new(args.t, args.r)?;
    if args.m < 2 {
        return Err(CliError::Config("m must be at least 2".into()));
    }
    let samples = lemma_samples(args.distribution, args.m, seed);
    let grid = GridSpec::covering(&samples, args.grid_steps)?;
    let ratios = lemma_ratios(&samples, &params, &grid)?;
    let o = &ratios.optimum;
    ensure_finite("lemma optimum", [o.lower, o.upper, o.loss])?;
    let results = to_value(&ratios);
    let settings = json!({
        "t": args.t,
        "r": args.r,
        "m": args.m,
        "distribution": args.distribution,
        "grid_steps": args.grid_steps,
    });
    let doc = output::report("lemma-check", seed, settings, results, timing(start, json!({})));
    match &args.out_dir {
        Some(dir) => {
            ensure_dir(dir)?;
            write_json(&dir.join("report.json"), &doc)
        }
        None => Ok(serde_json::to_string_pretty(&doc).expect("json value") + "\n"),
    }
}

#[derive(Serialize)]
struct TrialRow {
    method: ConformalMethod,
    trial: usize,
    picp: f64,
    mpiw: f64,
    q_hat: f64,
    time: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

fn conformal(exp: &ExperimentArgs, method: MethodArg, trials: usize, sizes: [usize; 3]) -> Result<String, CliError> {
    let start = Instant::now();
    let settings = exp.resolve(TRAIN_SPLIT)?;
    ensure_dir(&settings.out_dir)?;
    if trials == 0 || sizes.contains(&0) {
        return Err(CliError::Config("trials and all sample sizes must be positive".into()));
    }
    let (dim, noise_std) = match settings.data {
        DataSource::Generator { dim, noise_std, .. } => (dim, noise_std),
        DataSource::Csv { .. } => return Err(CliError::Config("conformal trials use generated data; drop --data".into())),
    };
    let methods: &[ConformalMethod] = match method {
        MethodArg::Tcr => &[ConformalMethod::Tcr],
        MethodArg::Cqr => &[ConformalMethod::Cqr],
        MethodArg::Both => &[ConformalMethod::Tcr, ConformalMethod::Cqr],
    };
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    let mut seconds = serde_json::Map::new();
    for &m in methods {
        let cfg = TrialConfig {
            method: m,
            t: settings.params.t,
            n_train: sizes[0],
            n_calib: sizes[1],
            n_test: sizes[2],
            dim,
            noise_std,
            backbone: settings.backbone,
            seed: settings.seed,
        };
        let records: Vec<TrialRecord> = run_trials(&cfg, trials)?;
        if records.iter().any(|r| r.q_hat.is_infinite()) {
            return Err(CliError::Config(format!(
                "{} calibration points are too few for coverage {}",
                sizes[1], cfg.t
            )));
        }
        ensure_finite("trial metrics", records.iter().flat_map(|r| [r.picp, r.mpiw, r.q_hat]))?;
        let name = match m {
            ConformalMethod::Tcr => "tcr",
            ConformalMethod::Cqr => "cqr",
        };
        summary.insert(
            name.into(),
            json!({
                "mean_picp": mean(records.iter().map(|r| r.picp)),
                "mean_mpiw": mean(records.iter().map(|r| r.mpiw)),
                "mean_q_hat": mean(records.iter().map(|r| r.q_hat)),
                "trials": records.iter().map(|r| json!({ "trial": r.trial, "picp": r.picp, "mpiw": r.mpiw, "q_hat": r.q_hat })).collect::<Vec<_>>(),
            }),
        );
        seconds.insert(format!("{name}_mean_seconds"), json!(mean(records.iter().map(|r| r.seconds))));
        rows.extend(records.iter().map(|r| TrialRow {
            method: m,
            trial: r.trial,
            picp: r.picp,
            mpiw: r.mpiw,
            q_hat: r.q_hat,
            time: r.seconds,
        }));
    }
    write_table(&settings.out_dir.join("trials.csv"), &rows)?;
    let results = json!({
        "n_train": sizes[0],
        "n_calib": sizes[1],
        "n_test": sizes[2],
        "methods": summary,
    });
    finish(&settings, "conformal", results, timing(start, Value::Object(seconds)))
}

#[derive(Serialize)]
struct ForecastRow {
    index: usize,
    lower: f64,
    upper: f64,
    y: f64,
}

fn forecast(exp: &ExperimentArgs, series_path: Option<&Path>, window: usize, scale: bool) -> Result<String, CliError> {
    let start = Instant::now();
    let settings = exp.resolve(SplitDefaults {
        train_frac: 0.7,
        val_frac: 0.0,
    })?;
    ensure_dir(&settings.out_dir)?;
    let series = match series_path {
        Some(path) => load_series(path)?,
        None => match settings.data {
            DataSource::Generator { n, noise_std, .. } => gen_white_noise(n, noise_std, settings.seed),
            DataSource::Csv { .. } => return Err(CliError::Config("use --series for a series file".into())),
        },
    };
    let spec = WindowSpec::new(window)?;
    let cut = (settings.train_frac * series.len() as f64).round() as usize;
    if cut <= window + 1 || cut >= series.len() {
        return Err(CliError::Data(format!(
            "series of length {} cannot be cut at {cut} with window {window}",
            series.len()
        )));
    }
    let train_series = &series[..cut];
    let test_series = &series[cut - window..];

    let fit_start = Instant::now();
    let forecaster = if scale {
        train_forecaster_scaled(train_series, spec, settings.params, &settings.backbone)?
    } else {
        train_forecaster(train_series, spec, settings.params, &settings.backbone)?
    };
    let train_seconds = fit_start.elapsed().as_secs_f64();

    let f = rolling_forecast(&forecaster, test_series)?;
    let rep = PIReport::evaluate(&f.targets, &f.lowers, &f.uppers, settings.params.r, None)?;
    ensure_finite_report("forecast metrics", &rep)?;
    let rows: Vec<ForecastRow> = (0..f.index.len())
        .map(|i| ForecastRow {
            index: cut - window + f.index[i],
            lower: f.lowers[i],
            upper: f.uppers[i],
            y: f.targets[i],
        })
        .collect();
    write_table(&settings.out_dir.join("forecast.csv"), &rows)?;
    let summary = training_summary(&forecaster.model);
    ModelFile::new(settings.seed, settings.params, SavedModel::Forecaster(forecaster))
        .save(&settings.out_dir.join("model.json"))?;

    let mean_center = mean(f.lowers.iter().zip(&f.uppers).map(|(l, u)| 0.5 * (l + u)));
    ensure_finite("mean interval center", [mean_center])?;
    let results = json!({
        "series_len": series.len(),
        "train_len": cut,
        "window": window,
        "scaled": scale,
        "training": summary,
        "test": rep,
        "mean_center": mean_center,
    });
    finish(&settings, "forecast", results, timing(start, json!({ "train_seconds": train_seconds })))
}
