//! One-step-ahead interval forecasting from a sliding lag window.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetMeta, Matrix, Provenance};
use crate::error::{Error, Result};
use crate::loss::TubeParams;
use crate::metrics::PIReport;
use crate::model::{fit_interval, Backbone, IntervalPredictor};
use crate::{Interval, IntervalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Lag window length.
    pub p: usize,
}

impl WindowSpec {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("window length must be >= 1".into()));
        }
        Ok(Self { p })
    }
}

/// Rows `(series[j..j+p]) -> series[j+p]`, oldest lag first.
pub fn windowize(series: &[f64], spec: WindowSpec) -> Result<Dataset> {
    let p = spec.p;
    if p == 0 {
        return Err(Error::InvalidParameter("window length must be >= 1".into()));
    }
    if series.len() <= p {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: p + 1,
        });
    }
    let rows = series.len() - p;
    let mut flat = Vec::with_capacity(rows * p);
    for j in 0..rows {
        flat.extend_from_slice(&series[j..j + p]);
    }
    Dataset::new(
        Matrix::from_flat(rows, p, flat)?,
        series[p..].to_vec(),
        DatasetMeta {
            provenance: Provenance::Windowed { p },
            seed: None,
        },
    )
}

/// Affine map of the training range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if values.is_empty() {
            return Err(Error::Empty("series"));
        }
        if max == min {
            return Err(Error::ZeroRange);
        }
        Ok(Self { min, max })
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Trained forecaster: window, backbone model and optional scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub spec: WindowSpec,
    pub model: IntervalPredictor,
    pub scaler: Option<MinMaxScaler>,
}

impl Forecaster {
    /// Interval for the value following the last `p` entries of `history`.
    pub fn predict_next(&self, history: &[f64]) -> Result<Interval> {
        let p = self.spec.p;
        if history.len() < p {
            return Err(Error::SeriesTooShort {
                len: history.len(),
                needed: p,
            });
        }
        let window = &history[history.len() - p..];
        match &self.scaler {
            None => self.model.predict_interval(window),
            Some(s) => {
                let scaled: Vec<f64> = window.iter().map(|&v| s.transform(v)).collect();
                let iv = self.model.predict_interval(&scaled)?;
                Ok(Interval {
                    lower: s.inverse(iv.lower),
                    upper: s.inverse(iv.upper),
                })
            }
        }
    }
}

/// Windowizes `series` and trains the backbone on the Tube loss.
pub fn train_forecaster(series: &[f64], spec: WindowSpec, params: TubeParams, backbone: &Backbone) -> Result<Forecaster> {
    let data = windowize(series, spec)?;
    Ok(Forecaster {
        spec,
        model: fit_interval(&data, params, backbone)?,
        scaler: None,
    })
}

/// As [`train_forecaster`], on the series min-max scaled to `[0, 1]`.
pub fn train_forecaster_scaled(series: &[f64], spec: WindowSpec, params: TubeParams, backbone: &Backbone) -> Result<Forecaster> {
    let scaler = MinMaxScaler::fit(series)?;
    let scaled: Vec<f64> = series.iter().map(|&v| scaler.transform(v)).collect();
    let data = windowize(&scaled, spec)?;
    Ok(Forecaster {
        spec,
        model: fit_interval(&data, params, backbone)?,
        scaler: Some(scaler),
    })
}

/// Per-step rolling forecasts over a test stretch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecast {
    /// Index into the test series of each forecast target.
    pub index: Vec<usize>,
    pub targets: Vec<f64>,
    pub lowers: Vec<f64>,
    pub uppers: Vec<f64>,
}

/// One-step forecasts for every `test_series[i]`, `i >= p`, each made from the
/// observed values before it.
pub fn rolling_forecast(forecaster: &Forecaster, test_series: &[f64]) -> Result<RollingForecast> {
    let p = forecaster.spec.p;
    if test_series.len() <= p {
        return Err(Error::SeriesTooShort {
            len: test_series.len(),
            needed: p + 1,
        });
    }
    let n = test_series.len() - p;
    let mut out = RollingForecast {
        index: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        lowers: Vec::with_capacity(n),
        uppers: Vec::with_capacity(n),
    };
    for i in p..test_series.len() {
        let iv = forecaster.predict_next(&test_series[i - p..i])?;
        out.index.push(i);
        out.targets.push(test_series[i]);
        out.lowers.push(iv.lower);
        out.uppers.push(iv.upper);
    }
    Ok(out)
}

/// Interval quality of the rolling one-step forecasts.
pub fn rolling_evaluate(forecaster: &Forecaster, test_series: &[f64]) -> Result<PIReport> {
    let f = rolling_forecast(forecaster, test_series)?;
    let r = match &forecaster.model {
        IntervalPredictor::Kernel(m) => m.params.r,
        IntervalPredictor::Net(_) => 0.5,
    };
    PIReport::evaluate(&f.targets, &f.lowers, &f.uppers, r, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{GDConfig, KernelSpec, PIKernelModel};
    use proptest::prelude::*;

    #[test]
    fn windowize_examples() {
        let d = windowize(&[1.0, 2.0, 3.0, 4.0, 5.0], WindowSpec::new(2).unwrap()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.features.row(0), &[1.0, 2.0]);
        assert_eq!(d.features.row(2), &[3.0, 4.0]);
        assert_eq!(d.targets, vec![3.0, 4.0, 5.0]);

        assert_eq!(windowize(&[1.0, 2.0, 3.0], WindowSpec::new(2).unwrap()).unwrap().len(), 1);
        let c = windowize(&[7.0; 6], WindowSpec::new(3).unwrap()).unwrap();
        assert!(c.targets.iter().all(|&v| v == 7.0));
        assert!(matches!(
            windowize(&[1.0, 2.0], WindowSpec::new(2).unwrap()),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(WindowSpec::new(0).is_err());
    }

    /// Forecaster whose interval is `last value ± 1`.
    fn last_value_stub(half_width: f64) -> Forecaster {
        let params = TubeParams::new(0.9, 0.5).unwrap();
        let mut m = PIKernelModel::intercepts_only(
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
            KernelSpec::Linear,
            params,
            -half_width,
            half_width,
        );
        m.alpha = vec![1.0];
        m.beta = vec![1.0];
        Forecaster {
            spec: WindowSpec::new(1).unwrap(),
            model: IntervalPredictor::Kernel(m),
            scaler: None,
        }
    }

    #[test]
    fn rolling_examples() {
        // a ramp makes the last value one below the target
        let ramp: Vec<f64> = (0..20).map(f64::from).collect();
        let rep = rolling_evaluate(&last_value_stub(1.0), &ramp).unwrap();
        assert_eq!(rep.n, 19);
        assert_eq!(rep.picp, 1.0);
        assert_eq!(rep.mpiw, 2.0);

        let flat = vec![3.0; 10];
        let rep = rolling_evaluate(&last_value_stub(0.0), &flat).unwrap();
        assert_eq!((rep.picp, rep.mpiw), (1.0, 0.0));
        assert!(rolling_evaluate(&last_value_stub(1.0), &[1.0]).is_err());
    }

    #[test]
    fn ramp_forecast_is_narrow() {
        let ramp: Vec<f64> = (0..300).map(|i| i as f64 * 0.01).collect();
        let backbone = Backbone::Kernel {
            kernel: KernelSpec::Linear,
            gd: GDConfig {
                learning_rate: 0.002,
                max_iters: 3000,
                ..GDConfig::default()
            },
        };
        let params = TubeParams::new(0.9, 0.5).unwrap();
        let f = train_forecaster_scaled(&ramp[..200], WindowSpec::new(2).unwrap(), params, &backbone).unwrap();
        let rep = rolling_evaluate(&f, &ramp[198..]).unwrap();
        assert!(rep.mpiw < 0.1 * 3.0, "mpiw {}", rep.mpiw);
    }

    #[test]
    fn scaler_round_trip() {
        let s = MinMaxScaler::fit(&[2.0, -1.0, 5.0]).unwrap();
        assert_eq!(s.transform(-1.0), 0.0);
        assert_eq!(s.transform(5.0), 1.0);
        assert!((s.inverse(s.transform(1.3)) - 1.3).abs() < 1e-12);
        assert!(matches!(MinMaxScaler::fit(&[1.0, 1.0]), Err(Error::ZeroRange)));
    }

    proptest! {
        #[test]
        fn windowize_reconstructs_series(series in prop::collection::vec(-100.0f64..100.0, 2..60), p in 1usize..10) {
            prop_assume!(p < series.len());
            let d = windowize(&series, WindowSpec::new(p).unwrap()).unwrap();
            prop_assert_eq!(d.len(), series.len() - p);
            let mut rebuilt = d.features.row(0).to_vec();
            rebuilt.extend_from_slice(&d.targets);
            prop_assert_eq!(rebuilt, series.clone());
            for j in 0..d.len() {
                prop_assert_eq!(d.features.row(j), &series[j..j + p]);
            }
        }
    }
}
