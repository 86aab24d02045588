//! Prediction-interval estimation built around the Tube loss.
//!
//! The Tube loss is a four-branch piecewise-linear loss over a response `y`
//! and a pair of bounds `(lower, upper)`. Minimizing its empirical risk yields
//! both bounds of a prediction interval at once, with asymptotic coverage `t`.
//!
//! The crate is organised by role:
//!
//! - [`loss`]: Tube, pinball, QD and LUBE losses with their (sub)gradients.
//! - [`metrics`]: PICP, MPIW, SMSE and region partition diagnostics.
//! - [`oracle`]: brute-force scalar minimizer of the empirical Tube risk.
//! - [`kernel`]: Tube-loss kernel machine and the pinball quantile baseline.
//! - [`net`]: one-hidden-layer dense network trained with Adam.
//! - [`model`]: backbone selection shared by forecasting, tuning and conformal.
//! - [`forecast`]: sliding-window autoregressive interval forecasting.
//! - [`conformal`]: split conformal calibration (absolute residual, CQR, TCR).
//! - [`data`]: seeded synthetic generators, true intervals and CSV ingestion.
//! - [`tuning`]: `r` sweeps and the `delta` recalibration walk.

pub mod conformal;
pub mod data;
pub mod error;
pub mod forecast;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod net;
pub mod oracle;
pub mod tuning;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// A prediction interval `[lower, upper]`.
///
/// Bounds produced by a trained model are not forcibly ordered; a crossed
/// interval has `lower > upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// A model producing a two-sided interval for a feature vector.
pub trait IntervalModel {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval>;

    /// Predicts every row of `features`, returning the lower and upper bound vectors.
    fn predict_bounds(&self, features: &data::Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lowers = Vec::with_capacity(features.rows());
        let mut uppers = Vec::with_capacity(features.rows());
        for row in features.iter_rows() {
            let iv = self.predict_interval(row)?;
            lowers.push(iv.lower);
            uppers.push(iv.upper);
        }
        Ok((lowers, uppers))
    }
}

/// A model producing a single point estimate for a feature vector.
pub trait PointModel {
    fn predict_point(&self, x: &[f64]) -> Result<f64>;
}

impl<M: IntervalModel + ?Sized> IntervalModel for &M {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        (**self).predict_interval(x)
    }
}

impl<M: PointModel + ?Sized> PointModel for &M {
    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        (**self).predict_point(x)
    }
}
