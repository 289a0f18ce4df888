use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty catalog")]
    EmptyCatalog,

    #[error("catalog row {row}: unknown group code \"{code}\"")]
    UnknownGroup { row: usize, code: String },

    #[error("catalog row {row}: duplicate column name \"{name}\"")]
    DuplicateColumn { row: usize, name: String },

    #[error("catalog row {row}: unknown value kind \"{kind}\"")]
    UnknownValueKind { row: usize, kind: String },

    #[error("{path}: schema error: {message}")]
    Schema { path: String, message: String },

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("duplicate snapshot for person {person} in year {year}")]
    DuplicateSnapshot { person: String, year: i32 },

    #[error("deceased flag not absorbing for person {person}: 1 in {dead_year}, 0 in {later_year}")]
    FlagNotAbsorbing {
        person: String,
        dead_year: i32,
        later_year: i32,
    },

    #[error("invalid snapshot for person {person} in {year}: {message}")]
    InvalidSnapshot {
        person: String,
        year: i32,
        message: String,
    },

    #[error("unknown person {0}")]
    UnknownPerson(String),

    #[error("no snapshot for person {person} at or before {year}")]
    NoSnapshot { person: String, year: i32 },

    #[error("{snapshots} snapshots infeasible for target year {target_year}: max feasible is {max_feasible}")]
    TooManySnapshots {
        target_year: i32,
        snapshots: usize,
        max_feasible: i64,
    },

    #[error("target year {0} outside the panel's year range")]
    TargetYearOutOfRange(i32),

    #[error("test year {year} is infeasible: {reason}")]
    InfeasibleYear { year: i32, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("design matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,

    #[error("degenerate DeLong variance with nonzero AUC difference {0}")]
    DegenerateVariance(f64),

    #[error("single-class target: {0}")]
    SingleClass(&'static str),

    #[error("column mismatch: model expects {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },

    #[error("unknown importance dimension \"{0}\"")]
    UnknownDimension(String),

    #[error("bad model file: {0}")]
    BadModelFile(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoPlain(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
