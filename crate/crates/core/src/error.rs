use thiserror::Error;

/// Errors produced by the simulation, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("episode is already done")]
    EpisodeDone,

    #[error("backward called twice on the same tape without reset")]
    DoubleBackward,

    #[error("operating point {0} is at or beyond a bound; fit infeasible")]
    FitInfeasible(f64),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("gains did not stabilize within {0} setpoint changes")]
    NonConvergence(usize),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
