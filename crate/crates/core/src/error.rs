use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("crossed bounds: lower {lower} > upper {upper}")]
    CrossedBounds { lower: f64, upper: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("targets have zero range")]
    ZeroRange,

    #[error("grid [{lo}, {hi}] does not cover sample range [{min}, {max}]")]
    GridCoverage { lo: f64, hi: f64, min: f64, max: f64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("series of length {len} too short, need more than {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("no analytic interval for dataset kind `{0}`")]
    NoTruth(String),

    #[error("csv line {line}, column {column}: {message}")]
    Csv { line: u64, column: usize, message: String },

    #[error("csv: {0}")]
    CsvFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch { expected, found });
    }
    Ok(())
}
