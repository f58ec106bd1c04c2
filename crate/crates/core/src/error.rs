use thiserror::Error;

use crate::config::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_violations(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("config parse error: {0}")]
    Config(String),
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("replay buffer holds {have} experiences, need {need}")]
    UndersizedBuffer { have: usize, need: usize },
    #[error("E-node {node} was scheduled for {subslots} transmissions")]
    ENodeTransmitted { node: usize, subslots: usize },
    #[error("infeasible schedule {0:?}")]
    InfeasibleSchedule(Vec<Option<usize>>),
    #[error("slot protocol violated: {0}")]
    SlotOrder(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
