use alloc::string::String;

/// Errors raised by the numerics core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid range: hi {hi} < lo {lo}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: alloc::boxed::Box<Error>,
    },
    #[error("test-time adaptation failed at step {step}: objective {objective}")]
    Adaptation { step: usize, objective: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn mismatch(expected: usize, actual: usize, context: &'static str) -> Error {
    Error::DimensionMismatch {
        expected,
        actual,
        context,
    }
}

/// Attaches the pipeline stage name to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: alloc::boxed::Box::new(e),
            },
        })
    }
}
