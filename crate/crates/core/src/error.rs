use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("network model: {0}")]
    Network(String),

    #[error("integration failure: non-finite state at bus {bus} on step {step}")]
    Diverged { bus: usize, step: u64 },

    #[error("unknown bus id {0}")]
    UnknownBus(usize),

    #[error("insufficient frequency history: window spans {have:.3} s, need {need:.3} s")]
    InsufficientHistory { have: f64, need: f64 },

    #[error("nadir deviation {nadir:.4} Hz does not exceed the deadband {deadband:.4} Hz; damping is undefined")]
    UndefinedDamping { nadir: f64, deadband: f64 },

    #[error("nadir deviation {0:.4} Hz out of range for the tuning bound")]
    NadirOutOfRange(f64),

    #[error("probability {0} out of range (0, 0.5)")]
    RhoOutOfRange(f64),

    #[error("contingency weights sum to {0}, expected 1")]
    UnnormalizedWeights(f64),

    #[error("AGC series: {0}")]
    AgcSeries(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("config parse: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
