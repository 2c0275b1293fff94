use risurconv_core::CoreError;
use risurconv_nn::NnError;
use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Geometry(#[from] CoreError),

    #[error(transparent)]
    Network(#[from] NnError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate cloud at layer {layer}: {source}")]
    DegenerateCloud {
        layer: usize,
        #[source]
        source: CoreError,
    },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (gradient norm {grad_norm:.3e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f32,
        grad_norm: f64,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
