//! Backbone selection: one entry point that trains either the kernel machine
//! or the dense network on the Tube loss or a single pinball quantile.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::kernel::{self, GDConfig, KernelSpec, PIKernelModel, QuantileKernelModel};
use crate::loss::TubeParams;
use crate::net::{self, AdamConfig, DenseNet, LossSpec, NetConfig};
use crate::{Interval, IntervalModel, PointModel};

/// Model family and its optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backbone", rename_all = "snake_case")]
pub enum Backbone {
    Kernel { kernel: KernelSpec, gd: GDConfig },
    /// `input_dim` and `outputs` of `net` are set from the data and the loss.
    Net { net: NetConfig, adam: AdamConfig },
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::Kernel { .. } => "kernel",
            Backbone::Net { .. } => "net",
        }
    }
}

/// A trained two-bound model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backbone", rename_all = "snake_case")]
pub enum IntervalPredictor {
    Kernel(PIKernelModel),
    Net(DenseNet),
}

impl IntervalModel for IntervalPredictor {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        match self {
            IntervalPredictor::Kernel(m) => m.predict(x),
            IntervalPredictor::Net(m) => m.predict_interval(x),
        }
    }
}

/// A trained single-quantile model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backbone", rename_all = "snake_case")]
pub enum QuantilePredictor {
    Kernel(QuantileKernelModel),
    Net(DenseNet),
}

impl PointModel for QuantilePredictor {
    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        match self {
            QuantilePredictor::Kernel(m) => m.predict(x),
            QuantilePredictor::Net(m) => m.predict_point(x),
        }
    }
}

fn net_config(net: &NetConfig, data: &Dataset, outputs: usize) -> NetConfig {
    NetConfig {
        input_dim: data.dim(),
        outputs,
        ..*net
    }
}

/// Trains a Tube-loss interval model.
pub fn fit_interval(data: &Dataset, params: TubeParams, backbone: &Backbone) -> Result<IntervalPredictor> {
    match backbone {
        Backbone::Kernel { kernel, gd } => Ok(IntervalPredictor::Kernel(kernel::train(data, params, *kernel, gd)?)),
        Backbone::Net { net, adam } => {
            let cfg = net_config(net, data, 2);
            Ok(IntervalPredictor::Net(net::mlp_train(data, LossSpec::Tube(params), &cfg, adam)?))
        }
    }
}

/// Trains a pinball-loss model of the `q` quantile. The kernel machine uses
/// no ridge term.
pub fn fit_quantile(data: &Dataset, q: f64, backbone: &Backbone) -> Result<QuantilePredictor> {
    match backbone {
        Backbone::Kernel { kernel, gd } => Ok(QuantilePredictor::Kernel(kernel::train_quantile(data, q, *kernel, 0.0, gd)?)),
        Backbone::Net { net, adam } => {
            let cfg = net_config(net, data, 1);
            Ok(QuantilePredictor::Net(net::mlp_train(data, LossSpec::Quantile { q }, &cfg, adam)?))
        }
    }
}

/// Two quantile models read as `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBounds {
    pub lower: QuantilePredictor,
    pub upper: QuantilePredictor,
}

impl IntervalModel for QuantileBounds {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        Ok(Interval {
            lower: self.lower.predict_point(x)?,
            upper: self.upper.predict_point(x)?,
        })
    }
}

/// Trains the `q_lower` and `q_upper` quantile models separately.
pub fn fit_quantile_bounds(data: &Dataset, q_lower: f64, q_upper: f64, backbone: &Backbone) -> Result<QuantileBounds> {
    Ok(QuantileBounds {
        lower: fit_quantile(data, q_lower, backbone)?,
        upper: fit_quantile(data, q_upper, backbone)?,
    })
}
