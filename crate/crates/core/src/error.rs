use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Variants are grouped by the exit class the CLI maps them to: geometric
/// and configuration problems are input errors, the rest are numerical
/// aborts.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("Moebius coefficients have non-positive determinant {det}")]
    NonPositiveDeterminant { det: f64 },
    #[error("boundary triple has coinciding entries")]
    DegenerateTriple,
    #[error("boundary triples have opposite orientation")]
    OrientationMismatch,
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("ball of radius {radius} has {count} words, above the cap of {cap}")]
    CapacityExceeded { radius: usize, count: u128, cap: usize },
    #[error("point {point} lies within {distance:e} of the sampled limit set")]
    NearLimitSet { point: f64, distance: f64 },
    #[error("pole encountered for word {word}")]
    PoleEncountered { word: String },
    #[error("point coincides with an orbit point of the base point (word {word})")]
    ZeroDenominator { word: String },
    #[error("field denominator vanishes near {near}: |P2| = {magnitude:e}")]
    DenominatorVanishes { near: String, magnitude: f64 },
    #[error("linear system is singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("guard tripped at t = {t}: {reason}")]
    GuardTripped { t: f64, reason: String },
    #[error("triple entries collided at t = {t} (row {row})")]
    TripleCollision { t: f64, row: usize },
    #[error("seed was swallowed at t = {swallow_time}")]
    SeedSwallowed { swallow_time: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// True for aborts that come out of the numerics rather than the inputs.
    pub fn is_numerical_abort(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. }
                | Error::StepUnderflow { .. }
                | Error::GuardTripped { .. }
                | Error::TripleCollision { .. }
                | Error::DenominatorVanishes { .. }
                | Error::PoleEncountered { .. }
                | Error::ZeroDenominator { .. }
                | Error::NearLimitSet { .. }
                | Error::SeedSwallowed { .. }
        )
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositiveDeterminant { .. } => "NonPositiveDeterminant",
            Error::DegenerateTriple => "DegenerateTriple",
            Error::OrientationMismatch => "OrientationMismatch",
            Error::InvalidGroup(_) => "InvalidGroup",
            Error::CapacityExceeded { .. } => "CapacityExceeded",
            Error::NearLimitSet { .. } => "NearLimitSet",
            Error::PoleEncountered { .. } => "PoleEncountered",
            Error::ZeroDenominator { .. } => "ZeroDenominator",
            Error::DenominatorVanishes { .. } => "DenominatorVanishes",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::StepUnderflow { .. } => "StepUnderflow",
            Error::GuardTripped { .. } => "GuardTripped",
            Error::TripleCollision { .. } => "TripleCollision",
            Error::SeedSwallowed { .. } => "SeedSwallowed",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
