use thiserror::Error;

use crate::overlay_graph::Vertex;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("node {node} out of range (graph has {n} nodes)")]
    NodeOutOfRange { node: i64, n: usize },
    #[error("source_targets must be non-empty")]
    EmptySourceTargets,
    #[error("node {0} is not reachable from the source")]
    DisconnectedFromSource(usize),
    #[error("duplicate edge ({0},{1})")]
    DuplicateEdge(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("({0},{1}) is not an edge")]
    NotAnEdge(usize, usize),
    #[error("invalid delay override for observer {observer}, edge ({accused},{victim}): {reason}")]
    InvalidOverride {
        observer: Vertex,
        accused: usize,
        victim: usize,
        reason: String,
    },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("{what} is {size}, above the cap of {cap}")]
    TooLarge {
        what: &'static str,
        size: usize,
        cap: usize,
    },
    #[error("reduced probability {reduced} must be below the current value {current}")]
    InvalidReduction { reduced: f64, current: f64 },
    #[error("node {accused} cannot be punished for dropping {victim}: in-neighbor {observer} never learns of it")]
    UnpunishableNode {
        accused: usize,
        victim: usize,
        observer: Vertex,
    },
    #[error("durations do not enforce coordination for edge ({accused},{victim})")]
    NotCoordinated { accused: usize, victim: usize },
    #[error("punishment has no bite on edge ({0},{1}): q' <= q*")]
    NoBite(usize, usize),
    #[error("benefit {beta} does not exceed cost {cost}")]
    RatioTooSmall { beta: f64, cost: f64 },
    #[error("illegal deviation: {0}")]
    IllegalDeviation(String),
    #[error("wrong mode: {0}")]
    WrongMode(&'static str),
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TooLarge { .. } => 3,
            Error::UnpunishableNode { .. }
            | Error::NotCoordinated { .. }
            | Error::NoBite(..)
            | Error::RatioTooSmall { .. }
            | Error::IllegalDeviation(_)
            | Error::WrongMode(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
