use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("no valid position: {0}")]
    NoValidPosition(&'static str),
    #[error("variable was not recorded on this tape")]
    Provenance,
    #[error("parameter {0} registered twice on the same tape")]
    DuplicateParam(usize),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("finite-difference epsilon {0} outside [1e-7, 1e-3]")]
    Epsilon(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("class {class} has {count} items, fewer than the {parts} requested parts")]
    Stratification { class: usize, count: usize, parts: usize },
    #[error("cannot place {needed} signal tokens plus separators in {len} positions")]
    Capacity { needed: usize, len: usize },
    #[error("label {label} outside [0, {classes})")]
    Label { label: usize, classes: usize },
    #[error("task mismatch: {0}")]
    TaskMismatch(&'static str),
    #[error("non-finite loss at document {index}: {detail}")]
    NonFiniteLoss { index: usize, detail: String },
    #[error("{count} configurations exceed the enumeration budget of {budget}")]
    Budget { count: u128, budget: u128 },
    #[error("degenerate protocol: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
