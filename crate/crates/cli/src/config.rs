//! Experiment settings: defaults, then the TOML config file, then flags.
//! `TUBEPI_SEED` overrides the config file seed; `--seed` overrides both.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use tubepi::data::{
    gen_dataset_a_with, gen_dataset_b, gen_gaussian_regression, gen_hetero_sin, gen_sinc_uniform, load_csv, Dataset,
    Dispersion,
};
use tubepi::kernel::{GDConfig, KernelSpec, LrSchedule};
use tubepi::loss::TubeParams;
use tubepi::model::Backbone;
use tubepi::net::{AdamConfig, NetConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    A,
    B,
    Sinc,
    Hetero,
    Gauss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionKind {
    Variance,
    Std,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Kernel,
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    InvSqrt,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub split: SplitSection,
    pub tube: TubeSection,
    pub backbone: BackboneSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub generator: Option<Generator>,
    pub path: Option<PathBuf>,
    pub n: Option<usize>,
    pub dim: Option<usize>,
    pub noise_std: Option<f64>,
    pub dispersion: Option<DispersionKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeSection {
    pub t: Option<f64>,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub kind: Option<BackboneKind>,
    pub kernel: Option<KernelKind>,
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub width_penalty_warmup: Option<usize>,
    pub lr_schedule: Option<ScheduleKind>,
    pub hidden_units: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub init_scale: Option<f64>,
}

/// Flags shared by the experiment subcommands; each mirrors a config key.
#[derive(Debug, Default, Args)]
pub struct ExperimentArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed (overrides TUBEPI_SEED and the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for reports, predictions and model files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Synthetic generator (ignored when --data is given).
    #[arg(long, value_enum)]
    pub dataset: Option<Generator>,
    /// CSV with a header row; the last column is the target.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimension of the `gauss` generator.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Noise standard deviation of the `gauss` generator.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Whether dataset A's 0.8 is a variance or a standard deviation.
    #[arg(long, value_enum)]
    pub dispersion: Option<DispersionKind>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Target coverage.
    #[arg(long)]
    pub t: Option<f64>,
    /// Relative position of the split line inside the tube.
    #[arg(long)]
    pub r: Option<f64>,
    /// Width penalty weight.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Ridge / weight-decay strength.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub backbone: Option<BackboneKind>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub width_penalty_warmup: Option<usize>,
    #[arg(long, value_enum)]
    pub lr_schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
}

/// Source of the experiment data.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Generator {
        generator: Generator,
        n: usize,
        dim: usize,
        noise_std: f64,
        dispersion: DispersionKind,
    },
    Csv {
        path: PathBuf,
    },
}

/// Fully resolved settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub train_frac: f64,
    pub val_frac: f64,
    pub params: TubeParams,
    pub backbone: Backbone,
}

/// Per-command fallbacks for the split.
#[derive(Debug, Clone, Copy)]
pub struct SplitDefaults {
    pub train_frac: f64,
    pub val_frac: f64,
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var("TUBEPI_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("TUBEPI_SEED=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Seed precedence: flag, then `TUBEPI_SEED`, then config file, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    Ok(flag.or(seed_from_env()?).or(file).unwrap_or(0))
}

impl ExperimentArgs {
    pub fn resolve(&self, split: SplitDefaults) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => read_config(path)?,
            None => FileConfig::default(),
        };
        let seed = resolve_seed(self.seed, file.seed)?;
        let out_dir = self.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("out"));

        let d = &file.data;
        let data = match self.data.clone().or(d.path.clone()) {
            Some(path) if self.dataset.is_none() => DataSource::Csv { path },
            _ => DataSource::Generator {
                generator: self.dataset.or(d.generator).unwrap_or(Generator::A),
                n: self.n.or(d.n).unwrap_or(1500),
                dim: self.dim.or(d.dim).unwrap_or(8),
                noise_std: self.noise_std.or(d.noise_std).unwrap_or(0.5),
                dispersion: self.dispersion.or(d.dispersion).unwrap_or(DispersionKind::Variance),
            },
        };

        let train_frac = self.train_frac.or(file.split.train_frac).unwrap_or(split.train_frac);
        let val_frac = self.val_frac.or(file.split.val_frac).unwrap_or(split.val_frac);
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
            return Err(CliError::Config(format!(
                "train_frac {train_frac} and val_frac {val_frac} must leave a test share"
            )));
        }

        let tube = &file.tube;
        let params = TubeParams::new(self.t.or(tube.t).unwrap_or(0.8), self.r.or(tube.r).unwrap_or(0.5))
            .and_then(|p| p.with_delta(self.delta.or(tube.delta).unwrap_or(0.0)))
            .and_then(|p| p.with_lambda(self.lambda.or(tube.lambda).unwrap_or(0.0)))
            .map_err(|e| CliError::Config(e.to_string()))?;

        let b = &file.backbone;
        let kind = self.backbone.or(b.kind).unwrap_or(BackboneKind::Kernel);
        let backbone = match kind {
            BackboneKind::Kernel => {
                let kernel = match self.kernel.or(b.kernel).unwrap_or(KernelKind::Linear) {
                    KernelKind::Linear => KernelSpec::Linear,
                    KernelKind::Rbf => KernelSpec::Rbf {
                        gamma: self.gamma.or(b.gamma).unwrap_or(1.0),
                    },
                };
                let defaults = GDConfig::default();
                let gd = GDConfig {
                    learning_rate: self.learning_rate.or(b.learning_rate).unwrap_or(0.01),
                    max_iters: self.max_iters.or(b.max_iters).unwrap_or(defaults.max_iters),
                    tol: self.tol.or(b.tol).unwrap_or(defaults.tol),
                    width_penalty_warmup: self
                        .width_penalty_warmup
                        .or(b.width_penalty_warmup)
                        .unwrap_or(defaults.width_penalty_warmup),
                    lr_schedule: match self.lr_schedule.or(b.lr_schedule).unwrap_or(ScheduleKind::Constant) {
                        ScheduleKind::Constant => LrSchedule::Constant,
                        ScheduleKind::InvSqrt => LrSchedule::InvSqrt,
                    },
                };
                kernel.validate().map_err(|e| CliError::Config(e.to_string()))?;
                gd.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Backbone::Kernel { kernel, gd }
            }
            BackboneKind::Net => {
                let net = NetConfig {
                    hidden_units: self.hidden_units.or(b.hidden_units).unwrap_or(100),
                    init_scale: self.init_scale.or(b.init_scale).unwrap_or(1.0),
                    seed,
                    ..NetConfig::new(0)
                };
                let adam = AdamConfig {
                    learning_rate: self.learning_rate.or(b.learning_rate).unwrap_or(0.005),
                    epochs: self.epochs.or(b.epochs).unwrap_or(300),
                    batch_size: self.batch_size.or(b.batch_size).unwrap_or(100),
                    seed,
                    ..AdamConfig::default()
                };
                net.validate().map_err(|e| CliError::Config(e.to_string()))?;
                adam.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Backbone::Net { net, adam }
            }
        };

        Ok(Settings {
            seed,
            out_dir,
            data,
            train_frac,
            val_frac,
            params,
            backbone,
        })
    }
}

pub fn generate(generator: Generator, n: usize, seed: u64, dim: usize, noise_std: f64, dispersion: DispersionKind) -> Dataset {
    match generator {
        Generator::A => {
            let d = match dispersion {
                DispersionKind::Variance => Dispersion::Variance(0.8),
                DispersionKind::Std => Dispersion::StdDev(0.8),
            };
            gen_dataset_a_with(n, seed, d)
        }
        Generator::B => gen_dataset_b(n, seed),
        Generator::Sinc => gen_sinc_uniform(n, seed),
        Generator::Hetero => gen_hetero_sin(n, seed),
        Generator::Gauss => gen_gaussian_regression(n, dim, noise_std, seed),
    }
}

impl Settings {
    pub fn load_data(&self) -> Result<Dataset, CliError> {
        match &self.data {
            DataSource::Generator {
                generator,
                n,
                dim,
                noise_std,
                dispersion,
            } => {
                if *n < 3 {
                    return Err(CliError::Config(format!("n = {n} is too small")));
                }
                Ok(generate(*generator, *n, self.seed, *dim, *noise_std, *dispersion))
            }
            DataSource::Csv { path } => Ok(load_csv(path)?),
        }
    }

    /// Shuffles with the seed and cuts into train, validation and test parts.
    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset, Dataset), CliError> {
        let n = data.len();
        let n_train = (self.train_frac * n as f64).round() as usize;
        let n_val = (self.val_frac * n as f64).round() as usize;
        if n_train < 2 || n_train + n_val >= n || (self.val_frac > 0.0 && n_val == 0) {
            return Err(CliError::Data(format!("{n} rows are too few for the requested split")));
        }
        let shuffled = data.shuffled(self.seed);
        let (train, rest) = shuffled.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        Ok((train, val, test))
    }
}
