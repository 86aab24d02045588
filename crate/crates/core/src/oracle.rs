//! Exhaustive grid minimizer of the empirical Tube risk over constant bounds.
//!
//! This is the assumption-free reference used to check coverage ratios and
//! the gradient trainers on featureless data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{tube_loss, TubeParams};
use crate::metrics::{partition_counts, Partition};

/// Uniform `(steps + 1)`-point grid on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

pub const DEFAULT_GRID_STEPS: usize = 400;

impl GridSpec {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        let grid = Self { lo, hi, steps };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid over the sample range padded by 5% on each side.
    pub fn covering(samples: &[f64], steps: usize) -> Result<Self> {
        let (min, max) = min_max(samples).ok_or(Error::Empty("samples"))?;
        let pad = if max > min { 0.05 * (max - min) } else { 1.0 };
        Self::new(min - pad, max + pad, steps)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidParameter(format!("grid needs lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.steps as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        let f = k as f64 / self.steps as f64;
        self.lo * (1.0 - f) + self.hi * f
    }

    pub fn values(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.value(k)).collect()
    }
}

fn min_max(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    Some(samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

/// Mean Tube loss of constant bounds, evaluated sample by sample.
pub fn mean_tube_loss(samples: &[f64], lower: f64, upper: f64, params: &TubeParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut sum = 0.0;
    for &y in samples {
        sum += tube_loss(y, lower, upper, params)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Sorted samples with prefix sums; evaluates the mean Tube loss of any
/// ordered constant pair in logarithmic time.
struct SortedSamples {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedSamples {
    fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in &sorted {
            acc += v;
            prefix.push(acc);
        }
        Self { sorted, prefix }
    }

    fn mean_loss(&self, lower: f64, upper: f64, params: &TubeParams) -> f64 {
        let t = params.t;
        let line = params.r_line(lower, upper);
        let m = self.sorted.len();
        let p = &self.prefix;
        // [0, a): below, [a, b): inside under the r-line,
        // [b, d): inside on or over the r-line, [d, m): above
        let a = self.sorted.partition_point(|&y| y < lower);
        let b = self.sorted.partition_point(|&y| y < line).max(a);
        let d = self.sorted.partition_point(|&y| y <= upper).max(b);
        let below = t * (lower * a as f64 - p[a]);
        let inside_lower = (1.0 - t) * (p[b] - p[a] - lower * (b - a) as f64);
        let inside_upper = (1.0 - t) * (upper * (d - b) as f64 - (p[d] - p[b]));
        let above = t * (p[m] - p[d] - upper * (m - d) as f64);
        (below + inside_lower + inside_upper + above) / m as f64
    }
}

/// Minimizing constant pair found on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarOptimum {
    pub lower: f64,
    pub upper: f64,
    pub loss: f64,
}

/// Evaluates every ordered grid pair `lower <= upper` and returns the
/// minimizer of the mean Tube loss, ties going to the lexicographically
/// smallest `(lower, upper)`. `delta` and `lambda` are ignored.
pub fn grid_minimize_tube(samples: &[f64], params: &TubeParams, grid: &GridSpec) -> Result<ScalarOptimum> {
    params.validate()?;
    grid.validate()?;
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let (min, max) = min_max(samples).expect("non-empty");
    if grid.lo > min || grid.hi < max {
        return Err(Error::GridCoverage {
            lo: grid.lo,
            hi: grid.hi,
            min,
            max,
        });
    }
    let sorted = SortedSamples::new(samples);
    let values = grid.values();

    // Each row is scanned sequentially; rows combine by (loss, i, j), so the
    // result does not depend on the parallel schedule.
    let best = (0..values.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, i, i);
            for j in i..values.len() {
                let loss = sorted.mean_loss(values[i], values[j], params);
                if loss < best.0 {
                    best = (loss, i, j);
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, usize::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) { b } else { a },
        );
    Ok(ScalarOptimum {
        lower: values[best.1],
        upper: values[best.2],
        loss: best.0,
    })
}

/// Observed region ratios at the grid optimum against the limit `(1 - t) / t`.
///
/// A ratio is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaRatios {
    pub ratio_12: Option<f64>,
    pub ratio_43: Option<f64>,
    pub ratio_out_in: Option<f64>,
    pub target: f64,
    pub partition: Partition,
    pub optimum: ScalarOptimum,
}

impl LemmaRatios {
    /// `|ratio_out_in - target|`, infinite when undefined.
    pub fn out_in_error(&self) -> f64 {
        self.ratio_out_in.map_or(f64::INFINITY, |v| (v - self.target).abs())
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn lemma_ratios(samples: &[f64], params: &TubeParams, grid: &GridSpec) -> Result<LemmaRatios> {
    let optimum = grid_minimize_tube(samples, params, grid)?;
    let n = samples.len();
    let partition = partition_counts(samples, &vec![optimum.lower; n], &vec![optimum.upper; n], params.r)?;
    Ok(LemmaRatios {
        ratio_12: ratio(partition.m1, partition.m2),
        ratio_43: ratio(partition.m4, partition.m3),
        ratio_out_in: ratio(partition.m1 + partition.m4, partition.m2 + partition.m3),
        target: (1.0 - params.t) / params.t,
        partition,
        optimum,
    })
}
