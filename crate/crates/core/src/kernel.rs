//! Tube-loss kernel machine and the pinball-loss quantile kernel machine.
//!
//! Both bound functions share the training inputs as anchors:
//!
//! ```text
//! upper(x) = sum_j k(a_j, x) alpha_j + b_upper
//! lower(x) = sum_j k(a_j, x) beta_j  + b_lower
//! ```
//!
//! The training objective is
//!
//! ```text
//! lambda/2 (|alpha|^2 + |beta|^2) + mean_i tube(y_i, lower_i, upper_i)
//!     + delta * mean_i |upper_i - lower_i|
//! ```
//!
//! minimized by full-batch subgradient descent on `(alpha, b_upper, beta, b_lower)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::loss::{pinball_grad, pinball_loss, tube_loss_and_grad_unordered, TubeParams};
use crate::{Interval, IntervalModel, PointModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    /// `exp(-gamma |x1 - x2|^2)`
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::InvalidParameter(format!("rbf gamma = {gamma} must be > 0")))
            }
            _ => Ok(()),
        }
    }

    fn eval_unchecked(&self, x1: &[f64], x2: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => x1.iter().zip(x2).map(|(a, b)| a * b).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    Ok(spec.eval_unchecked(x1, x2))
}

/// Symmetric Gram matrix of the rows of `a`, row-major.
pub fn gram_matrix(spec: &KernelSpec, a: &Matrix) -> Vec<f64> {
    let m = a.rows();
    let mut k = vec![0.0; m * m];
    k.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let xi = a.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = spec.eval_unchecked(xi, a.row(j));
        }
    });
    k
}

/// Gram operator over the training inputs. The linear kernel is applied as
/// `X (X^T v)` so large featureless or low-dimensional problems stay cheap.
enum Gram<'a> {
    Dense(Vec<f64>),
    Linear(&'a Matrix),
}

impl<'a> Gram<'a> {
    fn new(spec: &KernelSpec, a: &'a Matrix) -> Self {
        match spec {
            KernelSpec::Linear if a.cols() < a.rows() => Gram::Linear(a),
            _ => Gram::Dense(gram_matrix(spec, a)),
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        match self {
            Gram::Dense(k) => k
                .par_chunks(m)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
            Gram::Linear(x) => {
                let mut w = vec![0.0; x.cols()];
                for (row, vi) in x.iter_rows().zip(v) {
                    for (wj, xj) in w.iter_mut().zip(row) {
                        *wj += xj * vi;
                    }
                }
                x.iter_rows().map(|row| dot(row, &w)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `eta / sqrt(k)` at iteration `k`, 1-based.
    InvSqrt,
}

impl LrSchedule {
    pub fn rate(&self, base: f64, iteration: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::InvSqrt => base / (iteration.max(1) as f64).sqrt(),
        }
    }
}

/// Gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GDConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the norm of a full parameter update falls below this.
    pub tol: f64,
    /// Iterations before the width penalty may switch on.
    pub width_penalty_warmup: usize,
    pub lr_schedule: LrSchedule,
}

impl Default for GDConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_iters: 3000,
            tol: 1e-9,
            width_penalty_warmup: 100,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl GDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(
                "learning_rate, max_iters and tol must be positive".into(),
            ));
        }
        if self.width_penalty_warmup >= self.max_iters {
            return Err(Error::InvalidParameter(format!(
                "width_penalty_warmup {} must be below max_iters {}",
                self.width_penalty_warmup, self.max_iters
            )));
        }
        Ok(())
    }
}

/// What happened during training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// Per-sample evaluations that found the bounds crossed.
    pub crossed_evaluations: usize,
    /// Iteration at which the width penalty switched on.
    pub width_penalty_from: Option<usize>,
}

/// Trained Tube-loss kernel machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PIKernelModel {
    /// Upper-bound coefficients.
    pub alpha: Vec<f64>,
    /// Lower-bound coefficients.
    pub beta: Vec<f64>,
    pub b_upper: f64,
    pub b_lower: f64,
    pub anchors: Matrix,
    pub kernel: KernelSpec,
    pub params: TubeParams,
    pub stats: TrainStats,
}

impl PIKernelModel {
    /// Model with zero coefficients and the given intercepts.
    pub fn intercepts_only(anchors: Matrix, kernel: KernelSpec, params: TubeParams, b_lower: f64, b_upper: f64) -> Self {
        let m = anchors.rows();
        Self {
            alpha: vec![0.0; m],
            beta: vec![0.0; m],
            b_upper,
            b_lower,
            anchors,
            kernel,
            params,
            stats: TrainStats::default(),
        }
    }

    fn kernel_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.anchors.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.anchors.cols(),
                found: x.len(),
            });
        }
        Ok(self.anchors.iter_rows().map(|a| self.kernel.eval_unchecked(a, x)).collect())
    }

    /// Bounds at `x`; they are not forced into order.
    pub fn predict(&self, x: &[f64]) -> Result<Interval> {
        let k = self.kernel_row(x)?;
        let upper = dot(&k, &self.alpha) + self.b_upper;
        let lower = dot(&k, &self.beta) + self.b_lower;
        Ok(Interval { lower, upper })
    }

    fn check_anchors(&self, data: &Dataset) -> Result<()> {
        if self.anchors != data.features {
            return Err(Error::InvalidParameter(
                "model anchors differ from the dataset features".into(),
            ));
        }
        Ok(())
    }

    /// Full training objective on `data`, whose features must be the anchors.
    pub fn objective(&self, data: &Dataset) -> Result<f64> {
        self.check_anchors(data)?;
        let gram = Gram::new(&self.kernel, &self.anchors);
        let state = self.state_view();
        Ok(evaluate(&gram, &data.targets, &state, &self.params, true).objective)
    }

    /// Gradient of [`objective`](Self::objective) with the width term included.
    pub fn objective_gradient(&self, data: &Dataset) -> Result<KernelGradient> {
        self.check_anchors(data)?;
        let gram = Gram::new(&self.kernel, &self.anchors);
        let state = self.state_view();
        Ok(evaluate(&gram, &data.targets, &state, &self.params, true).gradient)
    }

    fn state_view(&self) -> State<'_> {
        State {
            alpha: &self.alpha,
            beta: &self.beta,
            b_upper: self.b_upper,
            b_lower: self.b_lower,
        }
    }
}

impl IntervalModel for PIKernelModel {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        self.predict(x)
    }
}

/// Gradient with respect to every kernel-machine parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub b_upper: f64,
    pub b_lower: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

struct State<'a> {
    alpha: &'a [f64],
    beta: &'a [f64],
    b_upper: f64,
    b_lower: f64,
}

struct Evaluation {
    objective: f64,
    gradient: KernelGradient,
    crossed: usize,
    mean_width: f64,
}

fn evaluate(gram: &Gram<'_>, y: &[f64], s: &State<'_>, params: &TubeParams, width_active: bool) -> Evaluation {
    let m = y.len();
    let inv_m = 1.0 / m as f64;
    let ku = gram.apply(s.alpha);
    let kl = gram.apply(s.beta);

    let mut g_upper = vec![0.0; m];
    let mut g_lower = vec![0.0; m];
    let mut loss = 0.0;
    let mut width_sum = 0.0;
    let mut abs_width_sum = 0.0;
    let mut crossed = 0;
    for i in 0..m {
        let upper = ku[i] + s.b_upper;
        let lower = kl[i] + s.b_lower;
        let (l, g, swapped) = tube_loss_and_grad_unordered(y[i], lower, upper, params);
        crossed += usize::from(swapped);
        loss += l;
        let width = upper - lower;
        width_sum += width;
        abs_width_sum += width.abs();
        g_upper[i] = g.d_upper * inv_m;
        g_lower[i] = g.d_lower * inv_m;
        if width_active && params.delta > 0.0 && width != 0.0 {
            let sg = width.signum() * params.delta * inv_m;
            g_upper[i] += sg;
            g_lower[i] -= sg;
        }
    }

    let lambda = params.lambda;
    let mut objective = loss * inv_m + 0.5 * lambda * (norm_sq(s.alpha) + norm_sq(s.beta));
    if width_active {
        objective += params.delta * abs_width_sum * inv_m;
    }
    let mut alpha = gram.apply(&g_upper);
    let mut beta = gram.apply(&g_lower);
    for (g, a) in alpha.iter_mut().zip(s.alpha) {
        *g += lambda * a;
    }
    for (g, b) in beta.iter_mut().zip(s.beta) {
        *g += lambda * b;
    }
    Evaluation {
        objective,
        gradient: KernelGradient {
            alpha,
            beta,
            b_upper: g_upper.iter().sum(),
            b_lower: g_lower.iter().sum(),
        },
        crossed,
        mean_width: width_sum * inv_m,
    }
}

/// Empirical `q`-quantile by the nearest order statistic.
pub(crate) fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn check_training_data(data: &Dataset) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::InvalidParameter("training needs at least two samples".into()));
    }
    if data.features.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite feature value".into()));
    }
    Ok(())
}

/// Trains the Tube-loss kernel machine by full-batch subgradient descent.
///
/// Coefficients start at zero and the intercepts at the empirical
/// `(1 - t)/2` and `(1 + t)/2` quantiles of the targets. The width penalty
/// joins the gradient after `width_penalty_warmup` iterations, once the mean
/// training width is positive, and stays on from then.
pub fn train(data: &Dataset, params: TubeParams, kernel: KernelSpec, cfg: &GDConfig) -> Result<PIKernelModel> {
    params.validate()?;
    kernel.validate()?;
    cfg.validate()?;
    check_training_data(data)?;

    let gram = Gram::new(&kernel, &data.features);
    let y = &data.targets;
    let m = y.len();
    let mut alpha = vec![0.0; m];
    let mut beta = vec![0.0; m];
    let mut b_upper = empirical_quantile(y, (1.0 + params.t) / 2.0);
    let mut b_lower = empirical_quantile(y, (1.0 - params.t) / 2.0);

    let mut stats = TrainStats::default();
    let mut width_active = false;
    for k in 1..=cfg.max_iters {
        let state = State {
            alpha: &alpha,
            beta: &beta,
            b_upper,
            b_lower,
        };
        let eval = evaluate(&gram, y, &state, &params, width_active);
        stats.crossed_evaluations += eval.crossed;
        if !width_active && params.delta > 0.0 && k > cfg.width_penalty_warmup && eval.mean_width > 0.0 {
            width_active = true;
            stats.width_penalty_from = Some(k);
            continue;
        }
        let g = eval.gradient;
        let eta = cfg.lr_schedule.rate(cfg.learning_rate, k);
        let step_sq = eta * eta * (norm_sq(&g.alpha) + norm_sq(&g.beta) + g.b_upper * g.b_upper + g.b_lower * g.b_lower);
        if !step_sq.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                detail: format!("non-finite gradient (learning rate {eta:e})"),
            });
        }
        for (a, ga) in beta.iter_mut().zip(&g.beta) {
            *a -= eta * ga;
        }
        b_lower -= eta * g.b_lower;
        for (a, ga) in alpha.iter_mut().zip(&g.alpha) {
            *a -= eta * ga;
        }
        b_upper -= eta * g.b_upper;
        stats.iterations = k;
        if step_sq.sqrt() < cfg.tol {
            stats.converged = true;
            break;
        }
    }

    let state = State {
        alpha: &alpha,
        beta: &beta,
        b_upper,
        b_lower,
    };
    let final_eval = evaluate(&gram, y, &state, &params, true);
    if !final_eval.objective.is_finite() {
        return Err(Error::Diverged {
            iteration: stats.iterations,
            detail: "non-finite objective".into(),
        });
    }
    stats.final_objective = final_eval.objective;
    Ok(PIKernelModel {
        alpha,
        beta,
        b_upper,
        b_lower,
        anchors: data.features.clone(),
        kernel,
        params,
        stats,
    })
}

/// Single-quantile kernel machine trained with the pinball loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileKernelModel {
    pub coef: Vec<f64>,
    pub bias: f64,
    pub anchors: Matrix,
    pub kernel: KernelSpec,
    pub q: f64,
    pub lambda: f64,
    pub stats: TrainStats,
}

impl QuantileKernelModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.anchors.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.anchors.cols(),
                found: x.len(),
            });
        }
        Ok(self
            .anchors
            .iter_rows()
            .zip(&self.coef)
            .map(|(a, c)| self.kernel.eval_unchecked(a, x) * c)
            .sum::<f64>()
            + self.bias)
    }
}

impl PointModel for QuantileKernelModel {
    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        self.predict(x)
    }
}

/// Two independently trained quantile machines used as interval bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub lower: QuantileKernelModel,
    pub upper: QuantileKernelModel,
}

impl IntervalModel for QuantilePair {
    fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        Ok(Interval {
            lower: self.lower.predict(x)?,
            upper: self.upper.predict(x)?,
        })
    }
}

/// Minimizes `lambda/2 |coef|^2 + mean_i pinball_q(y_i - f(x_i))`.
pub fn train_quantile(data: &Dataset, q: f64, kernel: KernelSpec, lambda: f64, cfg: &GDConfig) -> Result<QuantileKernelModel> {
    pinball_loss(0.0, q)?;
    kernel.validate()?;
    cfg.validate()?;
    check_training_data(data)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be >= 0")));
    }

    let gram = Gram::new(&kernel, &data.features);
    let y = &data.targets;
    let m = y.len();
    let inv_m = 1.0 / m as f64;
    let mut coef = vec![0.0; m];
    let mut bias = empirical_quantile(y, q);
    let mut stats = TrainStats::default();
    let mut g_f = vec![0.0; m];
    for k in 1..=cfg.max_iters {
        let f = gram.apply(&coef);
        for i in 0..m {
            // d/df pinball(y - f) = -pinball'(y - f)
            g_f[i] = -pinball_grad(y[i] - f[i] - bias, q)? * inv_m;
        }
        let mut g_coef = gram.apply(&g_f);
        for (g, c) in g_coef.iter_mut().zip(&coef) {
            *g += lambda * c;
        }
        let g_bias: f64 = g_f.iter().sum();
        let eta = cfg.lr_schedule.rate(cfg.learning_rate, k);
        let step_sq = eta * eta * (norm_sq(&g_coef) + g_bias * g_bias);
        if !step_sq.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                detail: format!("non-finite gradient (learning rate {eta:e})"),
            });
        }
        for (c, g) in coef.iter_mut().zip(&g_coef) {
            *c -= eta * g;
        }
        bias -= eta * g_bias;
        stats.iterations = k;
        if step_sq.sqrt() < cfg.tol {
            stats.converged = true;
            break;
        }
    }
    let f = gram.apply(&coef);
    let risk = (0..m)
        .map(|i| pinball_loss(y[i] - f[i] - bias, q))
        .sum::<Result<f64>>()?
        * inv_m;
    stats.final_objective = risk + 0.5 * lambda * norm_sq(&coef);
    Ok(QuantileKernelModel {
        coef,
        bias,
        anchors: data.features.clone(),
        kernel,
        q,
        lambda,
        stats,
    })
}

/// Trains the `q` and `q + t` quantile machines of the paired-quantile baseline.
pub fn train_quantile_pair(
    data: &Dataset,
    q_lower: f64,
    q_upper: f64,
    kernel: KernelSpec,
    lambda: f64,
    cfg: &GDConfig,
) -> Result<QuantilePair> {
    if !(q_lower < q_upper) {
        return Err(Error::InvalidParameter(format!("quantile levels {q_lower} >= {q_upper}")));
    }
    Ok(QuantilePair {
        lower: train_quantile(data, q_lower, kernel, lambda, cfg)?,
        upper: train_quantile(data, q_upper, kernel, lambda, cfg)?,
    })
}
