//! Interval losses and their gradients with respect to the interval bounds.
//!
//! Every function here is pure. Bounds are always passed as `(lower, upper)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Parameters of one Tube-loss estimation problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    /// Target coverage in `(0, 1)`.
    pub t: f64,
    /// Placement of the internal r-line `r * upper + (1 - r) * lower`, in `(0, 1)`.
    pub r: f64,
    /// Weight on the mean interval width.
    pub delta: f64,
    /// Ridge weight on model coefficients.
    pub lambda: f64,
}

impl TubeParams {
    pub fn new(t: f64, r: f64) -> Result<Self> {
        let params = Self {
            t,
            r,
            delta: 0.0,
            lambda: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::InvalidParameter(format!("t = {} not in (0, 1)", self.t)));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidParameter(format!("r = {} not in (0, 1)", self.r)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta = {} must be >= 0", self.delta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }

    /// Point on the r-line between the two bounds.
    pub fn r_line(&self, lower: f64, upper: f64) -> f64 {
        self.r * upper + (1.0 - self.r) * lower
    }
}

/// Position of a response relative to a tube and its r-line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `y > upper`
    Above,
    /// `lower < y < upper` and `y` above the r-line.
    InsideUpper,
    /// `lower < y < upper` and `y` below the r-line.
    InsideLower,
    /// `y < lower`
    Below,
    OnUpper,
    OnLower,
    OnRline,
}

/// Partial derivatives of a per-sample loss with respect to the two bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundGradient {
    pub d_lower: f64,
    pub d_upper: f64,
}

fn check_order(lower: f64, upper: f64) -> Result<()> {
    if lower > upper {
        return Err(Error::CrossedBounds { lower, upper });
    }
    Ok(())
}

pub fn classify_region(y: f64, lower: f64, upper: f64, r: f64) -> Result<Region> {
    check_order(lower, upper)?;
    let region = if y > upper {
        Region::Above
    } else if y == upper {
        Region::OnUpper
    } else if y < lower {
        Region::Below
    } else if y == lower {
        Region::OnLower
    } else {
        let line = r * upper + (1.0 - r) * lower;
        if y > line {
            Region::InsideUpper
        } else if y < line {
            Region::InsideLower
        } else {
            Region::OnRline
        }
    };
    Ok(region)
}

/// Tube loss of `y` against the interval `[lower, upper]`.
///
/// Points on the r-line take the upper inside branch. Points on a bound give 0
/// under either adjacent branch.
pub fn tube_loss(y: f64, lower: f64, upper: f64, params: &TubeParams) -> Result<f64> {
    let t = params.t;
    let loss = match classify_region(y, lower, upper, params.r)? {
        Region::Above => t * (y - upper),
        Region::InsideUpper | Region::OnRline | Region::OnUpper => (1.0 - t) * (upper - y),
        Region::InsideLower | Region::OnLower => (1.0 - t) * (y - lower),
        Region::Below => t * (lower - y),
    };
    Ok(loss)
}

/// Branch coefficients of the Tube loss for a region tag.
///
/// Boundary tags take the inside-branch subgradient; the r-line takes the
/// upper inside branch.
pub fn region_gradient(region: Region, t: f64) -> BoundGradient {
    match region {
        Region::Above => BoundGradient {
            d_lower: 0.0,
            d_upper: -t,
        },
        Region::InsideUpper | Region::OnRline | Region::OnUpper => BoundGradient {
            d_lower: 0.0,
            d_upper: 1.0 - t,
        },
        Region::InsideLower | Region::OnLower => BoundGradient {
            d_lower: -(1.0 - t),
            d_upper: 0.0,
        },
        Region::Below => BoundGradient {
            d_lower: t,
            d_upper: 0.0,
        },
    }
}

pub fn tube_loss_grad(y: f64, lower: f64, upper: f64, params: &TubeParams) -> Result<BoundGradient> {
    let region = classify_region(y, lower, upper, params.r)?;
    Ok(region_gradient(region, params.t))
}

/// Tube loss and gradient for bounds that may have crossed.
///
/// Crossed bounds are swapped for evaluation and the gradient is mapped back
/// onto the original arguments. The flag reports whether a swap happened.
pub fn tube_loss_and_grad_unordered(
    y: f64,
    a: f64,
    b: f64,
    params: &TubeParams,
) -> (f64, BoundGradient, bool) {
    let (lower, upper, swapped) = if a <= b { (a, b, false) } else { (b, a, true) };
    let region = classify_region(y, lower, upper, params.r).expect("ordered bounds");
    let t = params.t;
    let loss = match region {
        Region::Above => t * (y - upper),
        Region::InsideUpper | Region::OnRline | Region::OnUpper => (1.0 - t) * (upper - y),
        Region::InsideLower | Region::OnLower => (1.0 - t) * (y - lower),
        Region::Below => t * (lower - y),
    };
    let g = region_gradient(region, t);
    let g = if swapped {
        BoundGradient {
            d_lower: g.d_upper,
            d_upper: g.d_lower,
        }
    } else {
        g
    };
    (loss, g, swapped)
}

fn check_quantile(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level {q} not in (0, 1)")));
    }
    Ok(())
}

/// Pinball loss of the residual `u = y - f`.
pub fn pinball_loss(u: f64, q: f64) -> Result<f64> {
    check_quantile(q)?;
    Ok(if u >= 0.0 { q * u } else { (q - 1.0) * u })
}

/// Subgradient of the pinball loss with respect to the residual; `q` at zero.
pub fn pinball_grad(u: f64, q: f64) -> Result<f64> {
    check_quantile(q)?;
    Ok(if u >= 0.0 { q } else { q - 1.0 })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Settings of the softened QD loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdParams {
    pub t: f64,
    /// Weight on the coverage penalty.
    pub lambda: f64,
    /// Sigmoid sharpness of the soft membership.
    pub soften: f64,
}

impl QdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::InvalidParameter(format!("t = {} not in (0, 1)", self.t)));
        }
        if !(self.soften > 0.0) {
            return Err(Error::InvalidParameter(format!("soften = {} must be > 0", self.soften)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

const QD_MIN_WEIGHT: f64 = 1e-12;

/// Softened QD loss over a batch.
///
/// Membership is `sigmoid(s (y - lower)) * sigmoid(s (upper - y))`; the
/// captured width is the membership-weighted mean width, defined as 0 when
/// the total membership falls below `1e-12`.
pub fn qd_loss(y: &[f64], lowers: &[f64], uppers: &[f64], params: &QdParams) -> Result<f64> {
    Ok(qd_loss_and_grad(y, lowers, uppers, params)?.0)
}

/// Softened QD loss and its gradient with respect to every bound.
pub fn qd_loss_and_grad(
    y: &[f64],
    lowers: &[f64],
    uppers: &[f64],
    params: &QdParams,
) -> Result<(f64, Vec<BoundGradient>)> {
    params.validate()?;
    if y.is_empty() {
        return Err(Error::Empty("qd_loss targets"));
    }
    check_len(y.len(), lowers.len())?;
    check_len(y.len(), uppers.len())?;
    let m = y.len() as f64;
    let s = params.soften;

    let mut a = Vec::with_capacity(y.len());
    let mut b = Vec::with_capacity(y.len());
    let mut weight_sum = 0.0;
    let mut width_sum = 0.0;
    for i in 0..y.len() {
        let ai = sigmoid(s * (y[i] - lowers[i]));
        let bi = sigmoid(s * (uppers[i] - y[i]));
        let k = ai * bi;
        weight_sum += k;
        width_sum += (uppers[i] - lowers[i]) * k;
        a.push(ai);
        b.push(bi);
    }

    let captured = weight_sum >= QD_MIN_WEIGHT;
    let mpiw_capt = if captured { width_sum / weight_sum } else { 0.0 };
    let coef = params.lambda * m / (params.t * (1.0 - params.t));
    let shortfall = (params.t - weight_sum / m).max(0.0);
    let loss = mpiw_capt + coef * shortfall * shortfall;

    // d penalty / d k_i
    let d_pen_dk = -2.0 * coef * shortfall / m;
    let grads = (0..y.len())
        .map(|i| {
            let k = a[i] * b[i];
            let dk_dl = -s * a[i] * (1.0 - a[i]) * b[i];
            let dk_du = s * b[i] * (1.0 - b[i]) * a[i];
            let mut g = BoundGradient {
                d_lower: d_pen_dk * dk_dl,
                d_upper: d_pen_dk * dk_du,
            };
            if captured {
                let w = uppers[i] - lowers[i];
                let inv = 1.0 / weight_sum;
                let ratio = width_sum * inv * inv;
                g.d_lower += (-k + w * dk_dl) * inv - ratio * dk_dl;
                g.d_upper += (k + w * dk_du) * inv - ratio * dk_du;
            }
            g
        })
        .collect();
    Ok((loss, grads))
}

/// LUBE loss, reported as a diagnostic only.
///
/// `NMPIW * (1 + gamma * exp(-eta (PICP - t)))` with `gamma = 1` only when
/// coverage falls short of `t`.
pub fn lube_loss(y: &[f64], lowers: &[f64], uppers: &[f64], t: f64, eta: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("lube_loss targets"));
    }
    check_len(y.len(), lowers.len())?;
    check_len(y.len(), uppers.len())?;
    let (min, max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if range == 0.0 {
        return Err(Error::ZeroRange);
    }
    let m = y.len() as f64;
    let mpiw = lowers.iter().zip(uppers).map(|(l, u)| u - l).sum::<f64>() / m;
    let covered = y
        .iter()
        .zip(lowers.iter().zip(uppers))
        .filter(|(&yi, (&l, &u))| l <= yi && yi <= u)
        .count();
    let picp = covered as f64 / m;
    let nmpiw = mpiw / range;
    let gamma = if picp >= t { 0.0 } else { 1.0 };
    Ok(nmpiw * (1.0 + gamma * (-eta * (picp - t)).exp()))
}
