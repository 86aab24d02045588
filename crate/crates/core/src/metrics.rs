//! Interval quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::loss::{classify_region, Region};

fn check_vectors(y: &[f64], lowers: &[f64], uppers: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("targets"));
    }
    check_len(y.len(), lowers.len())?;
    check_len(y.len(), uppers.len())
}

/// Fraction of targets inside their closed interval.
pub fn picp(y: &[f64], lowers: &[f64], uppers: &[f64]) -> Result<f64> {
    check_vectors(y, lowers, uppers)?;
    let covered = y
        .iter()
        .zip(lowers.iter().zip(uppers))
        .filter(|(&yi, (&l, &u))| l <= yi && yi <= u)
        .count();
    Ok(covered as f64 / y.len() as f64)
}

/// Mean interval width together with a flag for any negative width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mpiw {
    pub value: f64,
    pub crossed: bool,
}

pub fn mpiw(lowers: &[f64], uppers: &[f64]) -> Result<Mpiw> {
    if lowers.is_empty() {
        return Err(Error::Empty("bounds"));
    }
    check_len(lowers.len(), uppers.len())?;
    let mut sum = 0.0;
    let mut crossed = false;
    for (l, u) in lowers.iter().zip(uppers) {
        let w = u - l;
        crossed |= w < 0.0;
        sum += w;
    }
    Ok(Mpiw {
        value: sum / lowers.len() as f64,
        crossed,
    })
}

/// Sum of the mean squared errors of both bounds against the true bounds.
pub fn smse(est_lo: &[f64], est_hi: &[f64], true_lo: &[f64], true_hi: &[f64]) -> Result<f64> {
    if est_lo.is_empty() {
        return Err(Error::Empty("bounds"));
    }
    let n = est_lo.len();
    check_len(n, est_hi.len())?;
    check_len(n, true_lo.len())?;
    check_len(n, true_hi.len())?;
    let mse = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    Ok(mse(est_lo, true_lo) + mse(est_hi, true_hi))
}

/// Counts of samples per region of the tube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    /// above the tube
    pub m1: usize,
    /// inside, above the r-line
    pub m2: usize,
    /// inside, below the r-line
    pub m3: usize,
    /// below the tube
    pub m4: usize,
    pub k_upper: usize,
    pub k_rline: usize,
    pub k_lower: usize,
}

impl Partition {
    pub fn total(&self) -> usize {
        self.m1 + self.m2 + self.m3 + self.m4 + self.k_upper + self.k_rline + self.k_lower
    }

    pub fn covered(&self) -> usize {
        self.m2 + self.m3 + self.k_upper + self.k_rline + self.k_lower
    }

    pub fn boundary(&self) -> usize {
        self.k_upper + self.k_rline + self.k_lower
    }

    pub fn record(&mut self, region: Region) {
        match region {
            Region::Above => self.m1 += 1,
            Region::InsideUpper => self.m2 += 1,
            Region::InsideLower => self.m3 += 1,
            Region::Below => self.m4 += 1,
            Region::OnUpper => self.k_upper += 1,
            Region::OnRline => self.k_rline += 1,
            Region::OnLower => self.k_lower += 1,
        }
    }
}

pub fn partition_counts(y: &[f64], lowers: &[f64], uppers: &[f64], r: f64) -> Result<Partition> {
    check_len(y.len(), lowers.len())?;
    check_len(y.len(), uppers.len())?;
    let mut partition = Partition::default();
    for ((&yi, &l), &u) in y.iter().zip(lowers).zip(uppers) {
        partition.record(classify_region(yi, l, u, r)?);
    }
    Ok(partition)
}

/// Fractions of targets strictly below the upper bound (`lq`) and strictly
/// below the lower bound (`uq`).
pub fn lq_uq(y: &[f64], lowers: &[f64], uppers: &[f64]) -> Result<(f64, f64)> {
    check_vectors(y, lowers, uppers)?;
    let n = y.len() as f64;
    let below_upper = y.iter().zip(uppers).filter(|(yi, u)| yi < u).count();
    let below_lower = y.iter().zip(lowers).filter(|(yi, l)| yi < l).count();
    Ok((below_upper as f64 / n, below_lower as f64 / n))
}

/// Summary of one set of interval predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PIReport {
    pub n: usize,
    pub picp: f64,
    pub mpiw: f64,
    /// Some bound pair had `lower > upper`.
    pub crossed: bool,
    pub smse: Option<f64>,
    /// Absent when bounds cross.
    pub partition: Option<Partition>,
    pub lq: f64,
    pub uq: f64,
}

impl PIReport {
    /// Evaluates predictions against targets; `truth` enables SMSE.
    pub fn evaluate(
        y: &[f64],
        lowers: &[f64],
        uppers: &[f64],
        r: f64,
        truth: Option<(&[f64], &[f64])>,
    ) -> Result<Self> {
        let picp = picp(y, lowers, uppers)?;
        let width = mpiw(lowers, uppers)?;
        let partition = if width.crossed {
            None
        } else {
            Some(partition_counts(y, lowers, uppers, r)?)
        };
        let (lq, uq) = lq_uq(y, lowers, uppers)?;
        let smse = truth
            .map(|(tl, th)| smse(lowers, uppers, tl, th))
            .transpose()?;
        Ok(Self {
            n: y.len(),
            picp,
            mpiw: width.value,
            crossed: width.crossed,
            smse,
            partition,
            lq,
            uq,
        })
    }
}
