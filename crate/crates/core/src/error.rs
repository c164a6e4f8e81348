use thiserror::Error;

use crate::diff::DiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("parameter `{name}` = {value} outside [{low}, {high}]")]
    OutOfBounds { name: String, value: f64, low: f64, high: f64 },
    #[error("parameter `{name}` = {value} must lie strictly inside ({low}, {high})")]
    OnBoundary { name: String, value: f64, low: f64, high: f64 },
    #[error("discrete parameter `{name}` = {value} has cardinality {cardinality}")]
    BadChoice { name: String, value: usize, cardinality: usize },
    #[error("expected {expected} {what}, got {got}")]
    Count { what: &'static str, expected: usize, got: usize },
    #[error("non-finite forward evaluation at theta_c = {theta_c:?}, theta_d = {theta_d:?}: {source}")]
    NonFiniteEvaluation { theta_c: Vec<f64>, theta_d: Vec<usize>, source: DiffError },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
