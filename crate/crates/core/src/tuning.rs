//! Selection of `r` by validation sweep and the `delta` recalibration walk.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::TubeParams;
use crate::metrics::{mpiw, picp};
use crate::model::{fit_interval, Backbone};
use crate::IntervalModel;

pub const DEFAULT_COVERAGE_SLACK: f64 = 0.01;
pub const DEFAULT_R_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const DEFAULT_DELTA_SCHEDULE: [f64; 6] = [0.0, 0.001, 0.005, 0.1, 0.15, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Narrowest validation interval among values meeting coverage.
    MinWidthFeasible,
    /// Nothing met coverage; the best-covering value was taken.
    NoFeasible,
    /// Largest value reached before coverage dropped.
    LastFeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub val_picp: f64,
    pub val_mpiw: f64,
    pub test_picp: Option<f64>,
    pub test_mpiw: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `"r"` or `"delta"`.
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    pub chosen: f64,
    pub selection: Selection,
}

impl SweepResult {
    pub fn chosen_row(&self) -> &SweepRow {
        self.rows
            .iter()
            .find(|row| row.value == self.chosen)
            .expect("chosen value is in the table")
    }
}

fn evaluate_on(model: &impl IntervalModel, data: &Dataset) -> Result<(f64, f64)> {
    let (lo, hi) = model.predict_bounds(&data.features)?;
    Ok((picp(&data.targets, &lo, &hi)?, mpiw(&lo, &hi)?.value))
}

fn sweep_row(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    params: TubeParams,
    backbone: &Backbone,
    value: f64,
    required: f64,
) -> Result<SweepRow> {
    let model = fit_interval(train, params, backbone)?;
    let (val_picp, val_mpiw) = evaluate_on(&model, val)?;
    let test_eval = test.map(|d| evaluate_on(&model, d)).transpose()?;
    Ok(SweepRow {
        value,
        val_picp,
        val_mpiw,
        test_picp: test_eval.map(|e| e.0),
        test_mpiw: test_eval.map(|e| e.1),
        feasible: val_picp >= required,
    })
}

/// Trains one model per `r` and picks the narrowest validation interval
/// with validation PICP at least `t - slack`.
pub fn sweep_r(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    base: TubeParams,
    backbone: &Backbone,
    grid: &[f64],
    slack: f64,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty r grid".into()));
    }
    let required = base.t - slack;
    let params: Vec<TubeParams> = grid
        .iter()
        .map(|&r| {
            let mut p = base;
            p.r = r;
            p.validate().map(|_| p)
        })
        .collect::<Result<_>>()?;
    let rows = params
        .par_iter()
        .zip(grid)
        .map(|(p, &r)| sweep_row(train, val, test, *p, backbone, r, required))
        .collect::<Result<Vec<_>>>()?;

    let narrowest = rows
        .iter()
        .filter(|row| row.feasible)
        .min_by(|a, b| a.val_mpiw.total_cmp(&b.val_mpiw));
    let (chosen, selection) = match narrowest {
        Some(row) => (row.value, Selection::MinWidthFeasible),
        None => {
            let best = rows
                .iter()
                .max_by(|a, b| a.val_picp.total_cmp(&b.val_picp).then(b.value.total_cmp(&a.value)))
                .expect("non-empty grid");
            (best.value, Selection::NoFeasible)
        }
    };
    Ok(SweepResult {
        parameter: "r".into(),
        rows,
        chosen,
        selection,
    })
}

/// Walks `delta` up the schedule while validation PICP stays at least
/// `target - slack`, retraining from scratch at each step.
///
/// The schedule must start at 0 and increase. The table holds every
/// trained step, including the one that ended the walk.
#[allow(clippy::too_many_arguments)]
pub fn recalibrate_delta(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    base: TubeParams,
    backbone: &Backbone,
    schedule: &[f64],
    target: f64,
    slack: f64,
) -> Result<SweepResult> {
    if schedule.first() != Some(&0.0) {
        return Err(Error::InvalidParameter("delta schedule must start at 0".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("delta schedule must be increasing".into()));
    }
    let required = target - slack;
    let mut rows = Vec::new();
    let mut chosen = 0.0;
    for &delta in schedule {
        let params = base.with_delta(delta)?;
        let row = sweep_row(train, val, test, params, backbone, delta, required)?;
        rows.push(row);
        if !row.feasible && delta > 0.0 {
            break;
        }
        chosen = delta;
    }
    Ok(SweepResult {
        parameter: "delta".into(),
        rows,
        chosen,
        selection: Selection::LastFeasible,
    })
}
