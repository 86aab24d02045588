//! One-hidden-layer ReLU network with interval heads, trained with Adam.
//!
//! Head 0 is the lower bound and head 1 the upper bound. A single-head
//! network serves as a plain quantile regressor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::kernel::empirical_quantile;
use crate::loss::{pinball_grad, pinball_loss, qd_loss_and_grad, tube_loss_and_grad_unordered, QdParams, TubeParams};
use crate::{Interval, IntervalModel, PointModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    /// Output heads: 2 for an interval, 1 for a single quantile.
    pub outputs: usize,
    /// Weights start uniform in `±init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    pub seed: u64,
}

impl NetConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_units: 100,
            activation: Activation::Relu,
            outputs: 2,
            init_scale: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::InvalidParameter("hidden_units must be >= 1".into()));
        }
        if !(1..=2).contains(&self.outputs) {
            return Err(Error::InvalidParameter(format!("outputs = {} must be 1 or 2", self.outputs)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("init_scale = {} must be >= 0", self.init_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 100,
            epochs: 500,
            seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::InvalidParameter("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter(
                "learning_rate, eps, batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss a network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// Tube loss plus `delta` times the mean width; `lambda` is weight decay.
    Tube(TubeParams),
    /// Independent pinball losses on the two heads.
    PinballPair { q_lower: f64, q_upper: f64 },
    /// Pinball loss on a single head.
    Quantile { q: f64 },
    Qd(QdParams),
}

impl LossSpec {
    pub fn outputs(&self) -> usize {
        match self {
            LossSpec::Quantile { .. } => 1,
            _ => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Tube(p) => p.validate(),
            LossSpec::PinballPair { q_lower, q_upper } => {
                pinball_loss(0.0, *q_lower)?;
                pinball_loss(0.0, *q_upper)?;
                if q_lower >= q_upper {
                    return Err(Error::InvalidParameter(format!("quantile levels {q_lower} >= {q_upper}")));
                }
                Ok(())
            }
            LossSpec::Quantile { q } => pinball_loss(0.0, *q).map(|_| ()),
            LossSpec::Qd(p) => p.validate(),
        }
    }

    fn weight_decay(&self) -> f64 {
        match self {
            LossSpec::Tube(p) => p.lambda,
            _ => 0.0,
        }
    }

    /// Target quantiles used to initialize the output biases.
    fn head_levels(&self) -> Vec<f64> {
        match *self {
            LossSpec::Tube(p) => vec![(1.0 - p.t) / 2.0, (1.0 + p.t) / 2.0],
            LossSpec::Qd(p) => vec![(1.0 - p.t) / 2.0, (1.0 + p.t) / 2.0],
            LossSpec::PinballPair { q_lower, q_upper } => vec![q_lower, q_upper],
            LossSpec::Quantile { q } => vec![q],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NetTrainStats {
    pub epochs: usize,
    /// Mean minibatch loss over the last epoch.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub config: NetConfig,
    /// `hidden x input`, row-major.
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    /// `outputs x hidden`, row-major.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub stats: NetTrainStats,
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl NetGradient {
    fn zeros_like(net: &DenseNet) -> Self {
        Self {
            w_hidden: vec![0.0; net.w_hidden.len()],
            b_hidden: vec![0.0; net.b_hidden.len()],
            w_out: vec![0.0; net.w_out.len()],
            b_out: vec![0.0; net.b_out.len()],
        }
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out]
    }
}

/// Draws weights from the seeded stream; output biases take `head_bias`.
pub fn mlp_init(cfg: &NetConfig, head_bias: &[f64]) -> Result<DenseNet> {
    cfg.validate()?;
    if head_bias.len() != cfg.outputs {
        return Err(Error::LengthMismatch {
            expected: cfg.outputs,
            found: head_bias.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
        let bound = cfg.init_scale / (fan_in.max(1) as f64).sqrt();
        (0..n)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
            .collect()
    };
    let h = cfg.hidden_units;
    let w_hidden = draw(h * cfg.input_dim, cfg.input_dim);
    let b_hidden = draw(h, cfg.input_dim);
    let w_out = draw(cfg.outputs * h, h);
    Ok(DenseNet {
        config: *cfg,
        w_hidden,
        b_hidden,
        w_out,
        b_out: head_bias.to_vec(),
        stats: NetTrainStats::default(),
    })
}

impl DenseNet {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations and raw head outputs.
    fn forward_into(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let d = self.config.input_dim;
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.w_hidden[j * d..(j + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b_hidden[j];
            *h = z.max(0.0);
        }
        let hn = hidden.len();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w_out[k * hn..(k + 1) * hn];
            *o = row.iter().zip(hidden.iter()).map(|(w, v)| w * v).sum::<f64>() + self.b_out[k];
        }
    }

    /// Raw head outputs.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut hidden = vec![0.0; self.config.hidden_units];
        let mut out = vec![0.0; self.config.outputs];
        self.forward_into(x, &mut hidden, &mut out);
        Ok(out)
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w_hidden, &mut self.b_hidden, &mut self.w_out, &mut self.b_out]
    }

    fn is_finite(&self) -> bool {
        [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// `(lower, upper)` from a two-head network.
pub fn mlp_forward(net: &DenseNet, x: &[f64]) -> Result<(f64, f64)> {
    if net.config.outputs != 2 {
        return Err(Error::InvalidParameter("network has a single head".into()));
    }
    let out = net.forward(x)?;
    Ok((out[0], out[1]))
}

impl IntervalModel for DenseNet {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        let (lower, upper) = mlp_forward(self, x)?;
        Ok(Interval { lower, upper })
    }
}

impl PointModel for DenseNet {
    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?[0])
    }
}

/// Heads-level loss and gradient of a batch; the gradient is per output.
fn head_loss(loss: &LossSpec, y: &[f64], outs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = y.len() as f64;
    match *loss {
        LossSpec::Tube(p) => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(y.len());
            for (yi, o) in y.iter().zip(outs) {
                let (l, g, _) = tube_loss_and_grad_unordered(*yi, o[0], o[1], &p);
                let width = o[1] - o[0];
                total += l + p.delta * width.abs();
                let sg = if width != 0.0 { p.delta * width.signum() } else { 0.0 };
                grads.push(vec![(g.d_lower - sg) / n, (g.d_upper + sg) / n]);
            }
            Ok((total / n, grads))
        }
        LossSpec::PinballPair { q_lower, q_upper } => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(y.len());
            for (yi, o) in y.iter().zip(outs) {
                total += pinball_loss(yi - o[0], q_lower)? + pinball_loss(yi - o[1], q_upper)?;
                grads.push(vec![
                    -pinball_grad(yi - o[0], q_lower)? / n,
                    -pinball_grad(yi - o[1], q_upper)? / n,
                ]);
            }
            Ok((total / n, grads))
        }
        LossSpec::Quantile { q } => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(y.len());
            for (yi, o) in y.iter().zip(outs) {
                total += pinball_loss(yi - o[0], q)?;
                grads.push(vec![-pinball_grad(yi - o[0], q)? / n]);
            }
            Ok((total / n, grads))
        }
        LossSpec::Qd(p) => {
            let lowers: Vec<f64> = outs.iter().map(|o| o[0]).collect();
            let uppers: Vec<f64> = outs.iter().map(|o| o[1]).collect();
            let (l, g) = qd_loss_and_grad(y, &lowers, &uppers, &p)?;
            Ok((l, g.into_iter().map(|g| vec![g.d_lower, g.d_upper]).collect()))
        }
    }
}

/// Loss of `net` on the listed rows and its gradient by backpropagation.
pub fn batch_loss_and_grad(
    net: &DenseNet,
    features: &Matrix,
    targets: &[f64],
    rows: &[usize],
    loss: &LossSpec,
) -> Result<(f64, NetGradient)> {
    let h = net.config.hidden_units;
    let d = net.config.input_dim;
    let k_out = net.config.outputs;
    let mut hiddens = Vec::with_capacity(rows.len());
    let mut outs = Vec::with_capacity(rows.len());
    for &i in rows {
        let mut hidden = vec![0.0; h];
        let mut out = vec![0.0; k_out];
        net.forward_into(features.row(i), &mut hidden, &mut out);
        hiddens.push(hidden);
        outs.push(out);
    }
    let y: Vec<f64> = rows.iter().map(|&i| targets[i]).collect();
    let (mut value, head_grads) = head_loss(loss, &y, &outs)?;

    let mut grad = NetGradient::zeros_like(net);
    let mut d_hidden = vec![0.0; h];
    for ((&i, hidden), g_out) in rows.iter().zip(&hiddens).zip(&head_grads) {
        d_hidden.iter_mut().for_each(|v| *v = 0.0);
        for (k, &go) in g_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad.b_out[k] += go;
            let w_row = &net.w_out[k * h..(k + 1) * h];
            let g_row = &mut grad.w_out[k * h..(k + 1) * h];
            for j in 0..h {
                g_row[j] += go * hidden[j];
                d_hidden[j] += go * w_row[j];
            }
        }
        let x = features.row(i);
        for j in 0..h {
            // ReLU passes gradient only where the unit is active
            if hidden[j] <= 0.0 || d_hidden[j] == 0.0 {
                continue;
            }
            let dz = d_hidden[j];
            grad.b_hidden[j] += dz;
            for (g, xv) in grad.w_hidden[j * d..(j + 1) * d].iter_mut().zip(x) {
                *g += dz * xv;
            }
        }
    }

    let decay = loss.weight_decay();
    if decay > 0.0 {
        value += 0.5 * decay * (norm_sq(&net.w_hidden) + norm_sq(&net.w_out));
        for (g, w) in grad.w_hidden.iter_mut().zip(&net.w_hidden) {
            *g += decay * w;
        }
        for (g, w) in grad.w_out.iter_mut().zip(&net.w_out) {
            *g += decay * w;
        }
    }
    Ok((value, grad))
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Trains a network with minibatch Adam.
///
/// The output biases start at empirical target quantiles matching the loss.
/// Each epoch visits the rows in an order drawn from the shuffle seed; the
/// final partial batch is kept.
pub fn mlp_train(data: &Dataset, loss: LossSpec, net_cfg: &NetConfig, opt: &AdamConfig) -> Result<DenseNet> {
    loss.validate()?;
    opt.validate()?;
    if net_cfg.input_dim != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: net_cfg.input_dim,
            found: data.dim(),
        });
    }
    if net_cfg.outputs != loss.outputs() {
        return Err(Error::InvalidParameter(format!(
            "loss needs {} heads, network has {}",
            loss.outputs(),
            net_cfg.outputs
        )));
    }
    if data.len() < opt.batch_size {
        return Err(Error::InvalidParameter(format!(
            "{} samples is fewer than the batch size {}",
            data.len(),
            opt.batch_size
        )));
    }
    let bias: Vec<f64> = loss
        .head_levels()
        .into_iter()
        .map(|q| empirical_quantile(&data.targets, q))
        .collect();
    let mut net = mlp_init(net_cfg, &bias)?;

    let mut first = NetGradient::zeros_like(&net);
    let mut second = NetGradient::zeros_like(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0i32;
    for epoch in 1..=opt.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for rows in order.chunks(opt.batch_size) {
            let (value, grad) = batch_loss_and_grad(&net, &data.features, &data.targets, rows, &loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iteration: epoch,
                    detail: format!("non-finite loss in epoch {epoch}"),
                });
            }
            epoch_loss += value;
            batches += 1;
            step += 1;
            let c1 = 1.0 - opt.beta1.powi(step);
            let c2 = 1.0 - opt.beta2.powi(step);
            let m_parts = [&mut first.w_hidden, &mut first.b_hidden, &mut first.w_out, &mut first.b_out];
            let v_parts = [&mut second.w_hidden, &mut second.b_hidden, &mut second.w_out, &mut second.b_out];
            for (((param, g), m), v) in net.params_mut().into_iter().zip(grad.slices()).zip(m_parts).zip(v_parts) {
                for idx in 0..param.len() {
                    m[idx] = opt.beta1 * m[idx] + (1.0 - opt.beta1) * g[idx];
                    v[idx] = opt.beta2 * v[idx] + (1.0 - opt.beta2) * g[idx] * g[idx];
                    param[idx] -= opt.learning_rate * (m[idx] / c1) / ((v[idx] / c2).sqrt() + opt.eps);
                }
            }
        }
        if !net.is_finite() {
            return Err(Error::Diverged {
                iteration: epoch,
                detail: format!("non-finite weights after epoch {epoch}"),
            });
        }
        net.stats = NetTrainStats {
            epochs: epoch,
            final_loss: epoch_loss / batches as f64,
        };
    }
    Ok(net)
}

/// Independently seeded networks whose bounds are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEnsemble {
    pub members: Vec<DenseNet>,
}

impl NetEnsemble {
    /// Trains `size` networks, member `i` using seeds offset by `i`.
    pub fn train(data: &Dataset, loss: LossSpec, net_cfg: &NetConfig, opt: &AdamConfig, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("ensemble size must be >= 1".into()));
        }
        let members = (0..size as u64)
            .map(|i| {
                let cfg = NetConfig {
                    seed: net_cfg.seed.wrapping_add(i),
                    ..*net_cfg
                };
                let adam = AdamConfig {
                    seed: opt.seed.wrapping_add(i),
                    ..*opt
                };
                mlp_train(data, loss, &cfg, &adam)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }
}

impl IntervalModel for NetEnsemble {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        let mut lower = 0.0;
        let mut upper = 0.0;
        for net in &self.members {
            let (l, u) = mlp_forward(net, x)?;
            lower += l;
            upper += u;
        }
        let n = self.members.len() as f64;
        Ok(Interval {
            lower: lower / n,
            upper: upper / n,
        })
    }
}
