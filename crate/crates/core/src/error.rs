use thiserror::Error;

use crate::world::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid action: node {target} is not adjacent to node {node}")]
    InvalidAction { node: NodeId, target: NodeId },

    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: NodeId, to: NodeId },

    #[error("sampling exhausted after {attempts} attempts: {reason}")]
    SamplingExhausted { attempts: usize, reason: String },

    #[error(
        "join violation between episodes {former} and {latter}: endpoints {distance:.3} m apart (radius {radius} m)"
    )]
    JoinViolation {
        former: String,
        latter: String,
        distance: f64,
        radius: f64,
    },

    #[error("schema violation at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("no landmark visible along path chunk {start}..={end}")]
    NoLandmark { start: usize, end: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("infeasible alignment: path has {path_len} states but {steps} steps were requested")]
    Infeasible { path_len: usize, steps: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, printed by the CLI alongside the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidWorld(_) => "invalid_world",
            Error::InvalidState(_) => "invalid_state",
            Error::InvalidAction { .. } => "invalid_action",
            Error::Unreachable { .. } => "unreachable",
            Error::SamplingExhausted { .. } => "sampling_exhausted",
            Error::JoinViolation { .. } => "join_violation",
            Error::Schema { .. } => "schema_violation",
            Error::NoLandmark { .. } => "no_landmark",
            Error::DegenerateData(_) => "degenerate_data",
            Error::Infeasible { .. } => "infeasible",
            Error::Empty(_) => "empty_input",
            Error::VocabMismatch(_) => "vocab_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
