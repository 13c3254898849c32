//! Exact information theory on enumerable joint distributions.
//!
//! All quantities are in nats. Tables are small by construction (at most
//! six variables of at most sixteen states), so every quantity is computed by
//! full enumeration.

mod bounds;
mod joint;
mod measures;
pub mod random;

pub use bounds::{bayes_bounds, gaussian_linear_mi, threshold, BayesBoundReport};
pub use joint::{
    JointDistribution, Variable, MAX_CARDINALITY, MAX_VARIABLES, RENORMALIZE_TOLERANCE,
    SUM_TOLERANCE,
};
pub use measures::{
    conditional_mi, decompose_predictive_superfluous, entropy, interaction_info, mutual_info,
    sufficiency_check, DecompositionReport, SufficiencyReport, NEGATIVE_TOLERANCE,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfoError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("variable set is empty")]
    EmptySet,
    #[error("variable sets overlap on {0}")]
    OverlappingSets(String),
    #[error("duplicate variable {0:?}")]
    DuplicateVariable(String),
    #[error("variable {name:?} has cardinality {cardinality}; allowed range is 1..=16")]
    Cardinality { name: String, cardinality: usize },
    #[error("{0} variables exceed the limit of 6")]
    TooManyVariables(usize),
    #[error("table has {got} entries, expected {expected}")]
    TableLength { expected: usize, got: usize },
    #[error("probability {0} is negative or not finite")]
    NegativeProbability(f64),
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("{what} evaluated to {value}, below the roundoff tolerance")]
    NegativeInformation { what: &'static str, value: f64 },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
