//! Artifacts on disk: JSON reports, CSV tables and versioned model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tubepi::data::Matrix;
use tubepi::forecast::Forecaster;
use tubepi::loss::TubeParams;
use tubepi::metrics::PIReport;
use tubepi::model::IntervalPredictor;

use crate::CliError;

pub const REPORT_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Assembles the report document. Everything that varies between identical
/// runs belongs in `timing`.
pub fn report(command: &str, seed: u64, settings: Value, results: Value, timing: Value) -> Value {
    json!({
        "format_version": REPORT_VERSION,
        "command": command,
        "seed": seed,
        "settings": settings,
        "results": results,
        "timing": timing,
    })
}

/// Fails on a NaN or infinity among `values`. JSON encoding would
/// silently turn them into `null`, so reports are checked before encoding.
pub fn ensure_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<(), CliError> {
    match values.into_iter().find(|v| !v.is_finite()) {
        Some(v) => Err(CliError::Data(format!("{what} is {v}"))),
        None => Ok(()),
    }
}

pub fn ensure_finite_report(what: &str, r: &PIReport) -> Result<(), CliError> {
    ensure_finite(what, [r.picp, r.mpiw, r.lq, r.uq].into_iter().chain(r.smse))
}

pub fn write_json(path: &Path, value: &Value) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, &text).map_err(|e| io_err(path, e))?;
    Ok(text)
}

/// `x1..xd, y, lower, upper` per row.
pub fn write_predictions(path: &Path, features: &Matrix, y: &[f64], lowers: &[f64], uppers: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let header: Vec<String> = (1..=features.cols())
        .map(|j| format!("x{j}"))
        .chain(["y", "lower", "upper"].map(String::from))
        .collect();
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (i, row) in features.iter_rows().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .chain([&y[i], &lowers[i], &uppers[i]])
            .map(|v| v.to_string())
            .collect();
        w.write_record(&cells).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// One CSV row per serializable record, header from the field names.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum SavedModel {
    Interval(IntervalPredictor),
    Forecaster(Forecaster),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub seed: u64,
    pub params: TubeParams,
    #[serde(flatten)]
    pub model: SavedModel,
}

impl ModelFile {
    pub fn new(seed: u64, params: TubeParams, model: SavedModel) -> Self {
        Self {
            format_version: MODEL_VERSION,
            seed,
            params,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string(self).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let corrupt = |e: serde_json::Error| CliError::Data(format!("{}: corrupt model file: {e}", path.display()));
        let raw: Value = serde_json::from_str(&text).map_err(corrupt)?;
        match raw.get("format_version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => {
                return Err(CliError::Data(format!(
                    "{}: unsupported model format version {v} (expected {MODEL_VERSION})",
                    path.display()
                )))
            }
            None => {
                return Err(CliError::Data(format!("{}: corrupt model file: no format_version", path.display())))
            }
        }
        serde_json::from_value(raw).map_err(corrupt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tubepi::data::{gen_dataset_a, gen_white_noise};
    use tubepi::forecast::{train_forecaster_scaled, WindowSpec};
    use tubepi::kernel::{GDConfig, KernelSpec};
    use tubepi::model::{fit_interval, Backbone};
    use tubepi::net::{AdamConfig, NetConfig};
    use tubepi::IntervalModel;

    fn random_inputs(dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        (0..100).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn round_trip(file: &ModelFile) -> ModelFile {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        file.save(&path).unwrap();
        ModelFile::load(&path).unwrap()
    }

    #[test]
    fn saved_models_predict_identically() {
        let data = gen_dataset_a(120, 3);
        let params = TubeParams::new(0.8, 0.4).unwrap().with_delta(0.01).unwrap();
        let backbones = [
            Backbone::Kernel {
                kernel: KernelSpec::Rbf { gamma: 0.7 },
                gd: GDConfig {
                    max_iters: 200,
                    ..GDConfig::default()
                },
            },
            Backbone::Net {
                net: NetConfig {
                    hidden_units: 6,
                    ..NetConfig::new(1)
                },
                adam: AdamConfig {
                    epochs: 5,
                    ..AdamConfig::default()
                },
            },
        ];
        for backbone in &backbones {
            let model = fit_interval(&data, params, backbone).unwrap();
            let file = ModelFile::new(3, params, SavedModel::Interval(model));
            let loaded = round_trip(&file);
            assert_eq!(loaded, file);
            let (SavedModel::Interval(a), SavedModel::Interval(b)) = (&file.model, &loaded.model) else {
                panic!("kind changed");
            };
            for x in random_inputs(1) {
                let (p, q) = (a.predict_interval(&x).unwrap(), b.predict_interval(&x).unwrap());
                assert_eq!(p.lower.to_bits(), q.lower.to_bits());
                assert_eq!(p.upper.to_bits(), q.upper.to_bits());
            }
        }
    }

    #[test]
    fn saved_forecaster_predicts_identically() {
        let series = gen_white_noise(200, 1.0, 4);
        let backbone = Backbone::Kernel {
            kernel: KernelSpec::Linear,
            gd: GDConfig {
                max_iters: 200,
                ..GDConfig::default()
            },
        };
        let params = TubeParams::new(0.9, 0.5).unwrap();
        let f = train_forecaster_scaled(&series, WindowSpec::new(3).unwrap(), params, &backbone).unwrap();
        let file = ModelFile::new(4, params, SavedModel::Forecaster(f));
        let loaded = round_trip(&file);
        let (SavedModel::Forecaster(a), SavedModel::Forecaster(b)) = (&file.model, &loaded.model) else {
            panic!("kind changed");
        };
        for x in random_inputs(3) {
            let (p, q) = (a.predict_next(&x).unwrap(), b.predict_next(&x).unwrap());
            assert_eq!((p.lower.to_bits(), p.upper.to_bits()), (q.lower.to_bits(), q.upper.to_bits()));
        }
    }

    #[test]
    fn finite_check_rejects_nan() {
        assert!(ensure_finite("x", [1.0, 2.0]).is_ok());
        assert!(ensure_finite("x", [1.0, f64::NAN]).is_err());
        assert!(ensure_finite("x", [f64::NEG_INFINITY]).is_err());
    }
}
