//! Split conformal calibration of interval and point models.
//!
//! Scores on a held-out calibration set give an offset `q_hat`; the
//! prediction set at `x` is `[lower(x) - q_hat, upper(x) + q_hat]`. With a
//! Tube-loss base this is TCR, with a paired-quantile base it is CQR, and with
//! a point model it is the absolute-residual method.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_gaussian_regression, Dataset};
use crate::error::{Error, Result};
use crate::loss::TubeParams;
use crate::metrics::{mpiw, picp};
use crate::model::{fit_interval, fit_quantile_bounds, Backbone};
use crate::{Interval, IntervalModel, PointModel};

/// Train/calibration/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_frac: f64,
    pub calib_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            calib_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.calib_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions {fracs:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }

    /// Shuffles with the plan's seed, then cuts in order. Test takes the remainder.
    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
        self.validate()?;
        let n = data.len();
        let n_train = (self.train_frac * n as f64).round() as usize;
        let n_calib = (self.calib_frac * n as f64).round() as usize;
        if n_train == 0 || n_calib == 0 || n_train + n_calib >= n {
            return Err(Error::InvalidParameter(format!("{n} rows are too few for the split")));
        }
        let shuffled = data.shuffled(self.seed);
        let (train, rest) = shuffled.split_at(n_train);
        let (calib, test) = rest.split_at(n_calib);
        Ok((train, calib, test))
    }
}

/// Calibrated offset; `Infinite` when the calibration set is too small for
/// the requested level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum QHat {
    Finite(f64),
    Infinite,
}

impl QHat {
    pub fn value(&self) -> f64 {
        match self {
            QHat::Finite(v) => *v,
            QHat::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, QHat::Infinite)
    }
}

/// The `ceil(t (n + 1))`-th smallest score.
pub fn conformal_quantile(scores: &[f64], t: f64) -> Result<QHat> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter(format!("t = {t} not in (0, 1)")));
    }
    let n = scores.len();
    let k = (t * (n + 1) as f64).ceil() as usize;
    if k > n {
        return Ok(QHat::Infinite);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(QHat::Finite(sorted[k.max(1) - 1]))
}

pub fn abs_residual_scores<M: PointModel>(model: &M, calib: &Dataset) -> Result<Vec<f64>> {
    calib
        .features
        .iter_rows()
        .zip(&calib.targets)
        .map(|(x, y)| Ok((y - model.predict_point(x)?).abs()))
        .collect()
}

/// `max(lower - y, y - upper)`; negative inside the interval.
pub fn cqr_scores<M: IntervalModel>(model: &M, calib: &Dataset) -> Result<Vec<f64>> {
    let (lowers, uppers) = model.predict_bounds(&calib.features)?;
    Ok(calib
        .targets
        .iter()
        .zip(lowers.iter().zip(&uppers))
        .map(|(y, (l, u))| (l - y).max(y - u))
        .collect())
}

/// A point model seen as a zero-width interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAsInterval<M>(pub M);

impl<M: PointModel> IntervalModel for PointAsInterval<M> {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        let f = self.0.predict_point(x)?;
        Ok(Interval { lower: f, upper: f })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConformalRule {
    AbsResidual,
    CqrStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalPredictor<M> {
    pub base: M,
    pub rule: ConformalRule,
    pub q_hat: QHat,
    pub calib_size: usize,
}

/// Calibrates an interval model on `calib` at level `t`.
pub fn conformalize<M: IntervalModel>(base: M, calib: &Dataset, t: f64) -> Result<ConformalPredictor<M>> {
    let scores = cqr_scores(&base, calib)?;
    Ok(ConformalPredictor {
        q_hat: conformal_quantile(&scores, t)?,
        base,
        rule: ConformalRule::CqrStyle,
        calib_size: calib.len(),
    })
}

/// Calibrates a point model with absolute residual scores.
pub fn conformalize_point<M: PointModel>(base: M, calib: &Dataset, t: f64) -> Result<ConformalPredictor<PointAsInterval<M>>> {
    let scores = abs_residual_scores(&base, calib)?;
    Ok(ConformalPredictor {
        q_hat: conformal_quantile(&scores, t)?,
        base: PointAsInterval(base),
        rule: ConformalRule::AbsResidual,
        calib_size: calib.len(),
    })
}

impl<M: IntervalModel> ConformalPredictor<M> {
    /// `[lower - q_hat, upper + q_hat]`; the whole line when `q_hat` is infinite.
    pub fn predict_set(&self, x: &[f64]) -> Result<Interval> {
        let iv = self.base.predict_interval(x)?;
        match self.q_hat {
            QHat::Finite(q) => Ok(Interval {
                lower: iv.lower - q,
                upper: iv.upper + q,
            }),
            QHat::Infinite => Ok(Interval {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            }),
        }
    }
}

impl<M: IntervalModel> IntervalModel for ConformalPredictor<M> {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        self.predict_set(x)
    }
}

/// Base model used in a conformal trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConformalMethod {
    /// One Tube-loss model.
    Tcr,
    /// Two pinball models at `(1 - t)/2` and `(1 + t)/2`.
    Cqr,
}

/// Synthetic trial protocol on [`gen_gaussian_regression`] data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub method: ConformalMethod,
    pub t: f64,
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub backbone: Backbone,
    pub seed: u64,
}

/// One row of the trial table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub picp: f64,
    pub mpiw: f64,
    pub q_hat: f64,
    /// Training, calibration and test prediction wall time.
    pub seconds: f64,
}

/// Runs `trials` independent trials; trial `i` draws data with seed `seed + i`.
pub fn run_trials(cfg: &TrialConfig, trials: usize) -> Result<Vec<TrialRecord>> {
    (0..trials).map(|i| run_trial(cfg, i)).collect()
}

fn run_trial(cfg: &TrialConfig, trial: usize) -> Result<TrialRecord> {
    let n = cfg.n_train + cfg.n_calib + cfg.n_test;
    let data = gen_gaussian_regression(n, cfg.dim, cfg.noise_std, cfg.seed.wrapping_add(trial as u64));
    let (train, rest) = data.split_at(cfg.n_train);
    let (calib, test) = rest.split_at(cfg.n_calib);

    let start = Instant::now();
    let (lowers, uppers, q_hat) = match cfg.method {
        ConformalMethod::Tcr => {
            let base = fit_interval(&train, TubeParams::new(cfg.t, 0.5)?, &cfg.backbone)?;
            let cp = conformalize(base, &calib, cfg.t)?;
            let (l, u) = cp.predict_bounds(&test.features)?;
            (l, u, cp.q_hat)
        }
        ConformalMethod::Cqr => {
            let base = fit_quantile_bounds(&train, (1.0 - cfg.t) / 2.0, (1.0 + cfg.t) / 2.0, &cfg.backbone)?;
            let cp = conformalize(base, &calib, cfg.t)?;
            let (l, u) = cp.predict_bounds(&test.features)?;
            (l, u, cp.q_hat)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok(TrialRecord {
        trial,
        picp: picp(&test.targets, &lowers, &uppers)?,
        mpiw: mpiw(&lowers, &uppers)?.value,
        q_hat: q_hat.value(),
        seconds,
    })
}
