//! A small dense-tensor engine with a reverse-mode gradient tape, and the
//! layers the RISurConv network is built from: shared MLPs with batch
//! normalization, single-head self-attention, a transformer encoder block,
//! max pooling, and the RISurConv operator itself.
//!
//! All learnable paths run in 32-bit floats.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Graph, Mode, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
