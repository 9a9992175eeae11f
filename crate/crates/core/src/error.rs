use thiserror::Error;

/// Errors surfaced by the solver, data, network, and training layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("spectral symmetry error: {0}")]
    Symmetry(String),

    #[error("singular symbol at mode ({kx}, {ky}): |s| = {magnitude:.3e}")]
    SingularSymbol { kx: i64, ky: i64, magnitude: f64 },

    #[error("unsupported system: {0}")]
    UnsupportedSystem(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("calibration did not converge after {iterations} iterations (best relative gap {best_gap:.3e})")]
    Calibration {
        iterations: usize,
        best_gap: f64,
        velocity: [f64; 2],
        psi_achieved: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("tape already consumed; forward must be re-run before another backward")]
    TapeConsumed,

    #[error("numeric abort: {0}")]
    NumericAbort(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
