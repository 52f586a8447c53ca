use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, which exceeds 1")]
    RowSumExceedsOne { row: usize, sum: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },
    #[error("the state space is empty")]
    EmptyStateSpace,
    #[error("duplicate state label `{0}`")]
    DuplicateLabel(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid cyclic structure: {0}")]
    InvalidCyclicStructure(String),
    #[error("cyclic partition residual {residual} exceeds tolerance {tolerance}")]
    InvalidPartition { residual: f64, tolerance: f64 },
    #[error("the surviving transition graph is not strongly connected (state `{unreachable}` is not mutually reachable from `{root}`)")]
    NotStronglyConnected { root: String, unreachable: String },
    #[error("no state has a surviving transition; the period is undefined")]
    NoSurvivingTransition,
    #[error("second eigenvalue modulus {second} is within {tolerance} of the Perron eigenvalue {perron}")]
    PeripheralMultiplicity { perron: f64, second: f64, tolerance: f64 },
    #[error("the iterated kernel is identically zero")]
    ZeroKernel,
    #[error("mixing rate alpha = {0} is not below 1")]
    AlphaIsOne(f64),
    #[error("eigensolver failure: {0}")]
    OracleFailure(String),
    #[error("power iteration did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("the measure has zero one-step survival mass; conditioning is undefined")]
    ThetaZero,
    #[error("input is not a quasi-stationary distribution (residual {residual})")]
    NotAQsd { residual: f64 },
    #[error("the measure puts no mass on the class A_0")]
    ZeroMassOnA0,
    #[error("degenerate weights: {0}")]
    DegenerateWeight(String),
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("the test function is not in the class B_V")]
    NotInBV,
    #[error("zero survival mass at time {n}")]
    Extinct { n: usize },
    #[error("the initial measure is invisible to the eigenfunction profile")]
    EtaOrthogonal,
    #[error("no admissible theta_2 exists")]
    NoValidTheta2,
    #[error("no epsilon in the dyadic grid gives nu(K) >= 1/2")]
    KTooSmall,
    #[error("no n0 <= {0} satisfies the return condition on K")]
    NoReturnTime(usize),
    #[error("the surviving domain E' is empty")]
    EmptyDomain,
    #[error("eigenfunction value {value} at state {state} underflows")]
    UnderflowEta { state: usize, value: f64 },
    #[error("no path survives to time {n}")]
    NoSurvivors { n: usize },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NegativeEntry { .. } => "NegativeEntry",
            Error::RowSumExceedsOne { .. } => "RowSumExceedsOne",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFinite { .. } => "NonFinite",
            Error::EmptyStateSpace => "EmptyStateSpace",
            Error::DuplicateLabel(_) => "DuplicateLabel",
            Error::InvalidMeasure(_) => "InvalidMeasure",
            Error::InvalidCyclicStructure(_) => "InvalidCyclicStructure",
            Error::InvalidPartition { .. } => "InvalidPartition",
            Error::NotStronglyConnected { .. } => "NotStronglyConnected",
            Error::NoSurvivingTransition => "NoSurvivingTransition",
            Error::PeripheralMultiplicity { .. } => "PeripheralMultiplicity",
            Error::ZeroKernel => "ZeroKernel",
            Error::AlphaIsOne(_) => "AlphaIsOne",
            Error::OracleFailure(_) => "OracleFailure",
            Error::NonConvergence(_) => "NonConvergence",
            Error::ThetaZero => "ThetaZero",
            Error::NotAQsd { .. } => "NotAQSD",
            Error::ZeroMassOnA0 => "ZeroMassOnA0",
            Error::DegenerateWeight(_) => "DegenerateWeight",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NotInBV => "NotInBV",
            Error::Extinct { .. } => "Extinct",
            Error::EtaOrthogonal => "EtaOrthogonal",
            Error::NoValidTheta2 => "NoValidTheta2",
            Error::KTooSmall => "KTooSmall",
            Error::NoReturnTime(_) => "NoReturnTime",
            Error::EmptyDomain => "EmptyDomain",
            Error::UnderflowEta { .. } => "UnderflowEta",
            Error::NoSurvivors { .. } => "NoSurvivors",
            Error::Parse { .. } => "ParseError",
        }
    }

    /// Errors caused by the input chain rather than by a failed verification.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::OracleFailure(_) | Error::NonConvergence(_) | Error::NotAQsd { .. }
        )
    }
}
