//! Datasets, seeded synthetic generators and CSV ingestion.
//!
//! All generators draw from [`ChaCha8Rng`] (the ChaCha stream cipher reduced
//! to 8 rounds) seeded with `seed_from_u64`, so a `(generator, n, seed)` triple
//! always yields the same dataset.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::Interval;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Scale of the Gaussian noise in dataset A.
///
/// The generating distribution is written `N(0, 0.8)`; which moment the 0.8
/// refers to is a knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Dispersion {
    Variance(f64),
    StdDev(f64),
}

impl Dispersion {
    pub fn std_dev(&self) -> f64 {
        match *self {
            Dispersion::Variance(v) => v.sqrt(),
            Dispersion::StdDev(s) => s,
        }
    }
}

impl Default for Dispersion {
    fn default() -> Self {
        Dispersion::Variance(0.8)
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Provenance {
    /// `x ~ U(0,1)`, `y = sinc(x) + N(0, dispersion)`.
    DatasetA { dispersion: Dispersion },
    /// `x ~ U(0,1)`, `y = sinc(x) + chi2(3)`.
    DatasetB,
    /// `x ~ U(-2pi, 2pi)`, `y = sinc(x) + U(-1, 1)`.
    SincUniform,
    /// `x ~ U(-2, 2)`, `y = 0.3 sin(pi x) + N(0, x^4)`.
    HeteroSin,
    /// `x ~ U(-1,1)^dim`, `y = sum_j sin(pi x_j) / sqrt(dim) + N(0, noise_std^2)`.
    GaussianRegression { dim: usize, noise_std: f64 },
    /// Loaded from a file; no analytic truth.
    Csv { path: String },
    /// Lag windows cut from a series; no analytic truth.
    Windowed { p: usize },
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::DatasetA { .. } => "dataset_a",
            Provenance::DatasetB => "dataset_b",
            Provenance::SincUniform => "sinc_uniform",
            Provenance::HeteroSin => "hetero_sin",
            Provenance::GaussianRegression { .. } => "gaussian_regression",
            Provenance::Csv { .. } => "csv",
            Provenance::Windowed { .. } => "windowed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

/// Feature matrix plus targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>, meta: DatasetMeta) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                found: targets.len(),
            });
        }
        if features.as_flat().iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset contains non-finite values".into()));
        }
        Ok(Self {
            features,
            targets,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Splits into the first `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Random permutation of the rows.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.subset(&idx)
    }

    /// Analytic interval for row `i`, when the generator is known.
    pub fn true_interval(&self, i: usize, t: f64, r: f64) -> Result<Interval> {
        true_pi(&self.meta, self.features.row(i), t, r)
    }

    /// Analytic lower and upper bound vectors for every row.
    pub fn true_bounds(&self, t: f64, r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lo = Vec::with_capacity(self.len());
        let mut hi = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let iv = self.true_interval(i, t, r)?;
            lo.push(iv.lower);
            hi.push(iv.upper);
        }
        Ok((lo, hi))
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} rows x {} features)", self.meta.provenance.name(), self.len(), self.dim())
    }
}

/// `sin(x) / x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn assemble(xs: Vec<f64>, ys: Vec<f64>, provenance: Provenance, seed: u64) -> Dataset {
    Dataset {
        features: Matrix::column(xs),
        targets: ys,
        meta: DatasetMeta {
            provenance,
            seed: Some(seed),
        },
    }
}

pub fn gen_dataset_a(n: usize, seed: u64) -> Dataset {
    gen_dataset_a_with(n, seed, Dispersion::default())
}

pub fn gen_dataset_a_with(n: usize, seed: u64, dispersion: Dispersion) -> Dataset {
    let mut rng = rng(seed);
    let sd = dispersion.std_dev();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..1.0);
        let e: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(sinc(x) + sd * e);
    }
    assemble(xs, ys, Provenance::DatasetA { dispersion }, seed)
}

pub fn gen_dataset_b(n: usize, seed: u64) -> Dataset {
    let mut rng = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..1.0);
        let noise: f64 = (0..3)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * z
            })
            .sum();
        xs.push(x);
        ys.push(sinc(x) + noise);
    }
    assemble(xs, ys, Provenance::DatasetB, seed)
}

pub fn gen_sinc_uniform(n: usize, seed: u64) -> Dataset {
    let mut rng = rng(seed);
    let xdist = Uniform::new(-2.0 * PI, 2.0 * PI).expect("valid range");
    let edist = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = xdist.sample(&mut rng);
        xs.push(x);
        ys.push(sinc(x) + edist.sample(&mut rng));
    }
    assemble(xs, ys, Provenance::SincUniform, seed)
}

pub fn gen_hetero_sin(n: usize, seed: u64) -> Dataset {
    let mut rng = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-2.0..2.0);
        let z: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(0.3 * (PI * x).sin() + x * x * z);
    }
    assemble(xs, ys, Provenance::HeteroSin, seed)
}

/// IID `N(0, std^2)` series.
pub fn gen_white_noise(n: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect()
}

fn gaussian_regression_mean(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    x.iter().map(|v| (PI * v).sin()).sum::<f64>() / d.sqrt()
}

/// Homoscedastic regression with a smooth mean in `dim` features.
pub fn gen_gaussian_regression(n: usize, dim: usize, noise_std: f64, seed: u64) -> Dataset {
    let mut rng = rng(seed);
    let mut flat = Vec::with_capacity(n * dim);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let start = flat.len();
        for _ in 0..dim {
            flat.push(rng.random_range(-1.0..1.0));
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        ys.push(gaussian_regression_mean(&flat[start..]) + noise_std * z);
    }
    Dataset {
        features: Matrix::from_flat(n, dim, flat).expect("shape"),
        targets: ys,
        meta: DatasetMeta {
            provenance: Provenance::GaussianRegression { dim, noise_std },
            seed: Some(seed),
        },
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Analytic conditional interval `[F^-1(q), F^-1(q + t)]` with `q = (1 - t)(1 - r)`.
pub fn true_pi(meta: &DatasetMeta, x: &[f64], t: f64, r: f64) -> Result<Interval> {
    if !(t > 0.0 && t < 1.0 && r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!("t = {t}, r = {r} must lie in (0, 1)")));
    }
    let q_lo = (1.0 - t) * (1.0 - r);
    let q_hi = q_lo + t;
    let first = |x: &[f64]| -> Result<f64> {
        x.first().copied().ok_or(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        })
    };
    let iv = match &meta.provenance {
        Provenance::DatasetA { dispersion } => {
            let c = sinc(first(x)?);
            let n = std_normal();
            let sd = dispersion.std_dev();
            Interval::new(c + sd * n.inverse_cdf(q_lo), c + sd * n.inverse_cdf(q_hi))
        }
        Provenance::DatasetB => {
            let c = sinc(first(x)?);
            let chi = ChiSquared::new(3.0).expect("three degrees of freedom");
            Interval::new(c + chi.inverse_cdf(q_lo), c + chi.inverse_cdf(q_hi))
        }
        Provenance::SincUniform => {
            let c = sinc(first(x)?);
            // U(-1, 1) quantile
            Interval::new(c - 1.0 + 2.0 * q_lo, c - 1.0 + 2.0 * q_hi)
        }
        Provenance::HeteroSin => {
            let x0 = first(x)?;
            let c = 0.3 * (PI * x0).sin();
            let n = std_normal();
            let sd = x0 * x0;
            Interval::new(c + sd * n.inverse_cdf(q_lo), c + sd * n.inverse_cdf(q_hi))
        }
        Provenance::GaussianRegression { dim, noise_std } => {
            if x.len() != *dim {
                return Err(Error::DimensionMismatch {
                    expected: *dim,
                    found: x.len(),
                });
            }
            let c = gaussian_regression_mean(x);
            let n = std_normal();
            Interval::new(c + noise_std * n.inverse_cdf(q_lo), c + noise_std * n.inverse_cdf(q_hi))
        }
        other => return Err(Error::NoTruth(other.name().to_string())),
    };
    Ok(iv)
}

/// Reads a CSV with a header row; the last column is the target.
///
/// Lines starting with `#` are comments.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(Error::CsvFormat("file has no header or rows".into())),
    };
    if header.iter().all(|cell| cell.parse::<f64>().is_ok()) {
        return Err(Error::CsvFormat("missing header row".into()));
    }
    let ncols = header.len();
    if ncols < 2 {
        return Err(Error::CsvFormat("need at least one feature column and one target column".into()));
    }

    let mut flat = Vec::new();
    let mut targets = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != ncols {
            return Err(Error::Csv {
                line,
                column: record.len(),
                message: format!("expected {ncols} fields"),
            });
        }
        for (column, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                line,
                column: column + 1,
                message: format!("non-numeric value `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    column: column + 1,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            if column + 1 == ncols {
                targets.push(v);
            } else {
                flat.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::CsvFormat("file has a header but no rows".into()));
    }
    let features = Matrix::from_flat(targets.len(), ncols - 1, flat)?;
    Dataset::new(
        features,
        targets,
        DatasetMeta {
            provenance: Provenance::Csv {
                path: path.display().to_string(),
            },
            seed: None,
        },
    )
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Csv {
            line,
            column: 0,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes a dataset as CSV with `#` provenance comments and an `x1..xn,y` header.
pub fn write_csv(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    writeln!(out, "# generator={}", dataset.meta.provenance.name())?;
    if let Some(seed) = dataset.meta.seed {
        writeln!(out, "# seed={seed}")?;
    }
    writeln!(out, "# n={}", dataset.len())?;
    match &dataset.meta.provenance {
        Provenance::DatasetA { dispersion } => writeln!(out, "# dispersion={dispersion:?}")?,
        Provenance::GaussianRegression { dim, noise_std } => {
            writeln!(out, "# dim={dim} noise_std={noise_std}")?
        }
        _ => {}
    }
    let header: Vec<String> = (1..=dataset.dim()).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for (row, y) in dataset.features.iter_rows().zip(&dataset.targets) {
        let cells: Vec<String> = row.iter().chain(std::iter::once(y)).map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Reads a single-column series CSV. A non-numeric first line is taken as a header.
pub fn load_series(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = record.get(record.len().saturating_sub(1)).unwrap_or("");
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if i == 0 => continue,
            _ => {
                return Err(Error::Csv {
                    line,
                    column: record.len(),
                    message: format!("non-numeric value `{cell}`"),
                })
            }
        }
    }
    if values.is_empty() {
        return Err(Error::CsvFormat("series file has no values".into()));
    }
    Ok(values)
}
