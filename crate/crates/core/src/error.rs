use thiserror::Error;

/// Problems with incoming score matrices, labels or evidence.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("score matrix has no rows")]
    Empty,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("row {row} has {found} columns, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("negative probability at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize },
    #[error("non-finite probability at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("row {row} sums to {sum}, outside 1 +/- 1e-3")]
    RowSumOutOfTolerance { row: usize, sum: f64 },
    #[error("{labels} labels for {rows} score rows")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("label {label} at row {row} is out of range for {k} classes")]
    LabelOutOfRange { row: usize, label: usize, k: usize },
    #[error("evidence for class {class} is {value}; must be finite and >= 0")]
    NegativeEvidence { class: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConformalError {
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("lambda must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("k_reg must be >= 1")]
    InvalidKReg,
    #[error("row has {found} classes, calibrator expects {expected}")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("corrupt calibrator record: {0}")]
    CorruptRecord(String),
    #[error("calibrator record version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: String },
    #[error(transparent)]
    Scores(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("sample stack is empty")]
    EmptyStack,
    #[error("evidence for class {class} is {value}; must be finite and >= 0")]
    NegativeEvidence { class: usize, value: f64 },
    #[error("probability vector touches the simplex boundary at class {0}")]
    BoundaryPoint(usize),
    #[error("probability vector does not sum to 1 (sum = {0})")]
    NotOnSimplex(f64),
    #[error("Dirichlet parameter {index} is {value}")]
    InvalidAlpha { index: usize, value: f64 },
    #[error("target is not a one-hot vector")]
    InvalidOneHot,
    #[error("kl_weight must be finite and >= 0, got {0}")]
    InvalidKlWeight(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid config: {param} = {value} ({reason})")]
    InvalidConfig {
        param: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error(transparent)]
    Scores(#[from] ScoreError),
}

impl SynthError {
    pub(crate) fn invalid(param: &'static str, value: impl ToString, reason: &'static str) -> Self {
        SynthError::InvalidConfig {
            param,
            value: value.to_string(),
            reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("length mismatch: {what} has {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("inputs not aligned: {0}")]
    AlignmentMismatch(String),
    #[error("value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("need at least one histogram bin")]
    NoBins,
    #[error("sweep grid must be strictly increasing (at position {0})")]
    GridNotIncreasing(usize),
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("pool of {pool} samples cannot hold {calib} calibration + {test} test samples")]
    InsufficientPool {
        pool: usize,
        calib: usize,
        test: usize,
    },
    #[error("need at least 2 resamples, got {0}")]
    TooFewResamples(usize),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}
