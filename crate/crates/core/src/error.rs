use alloc::string::String;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shape mismatch or other structural problem while building or running a model.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid parameters, missing entries, empty inputs.
    #[error("config error: {0}")]
    Config(String),
    /// Training produced a non-finite loss.
    #[error("training diverged in epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f32 },
    /// Bit attribution needs single-fault campaigns.
    #[error("bit attribution unavailable for k = {k} (requires k = 1)")]
    AttributionUnavailable { k: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
