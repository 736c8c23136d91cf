//! Small reverse-mode automatic differentiation engine.
//!
//! Provides a [`Tape`] of tensor ops (strided 2-D convolution and its transpose,
//! batch normalization, dense layers, activations, dropout and the losses used
//! by the bevrep networks), an [`AdamState`] optimizer, parameter storage and a
//! binary checkpoint format. Everything is generic over `f32`/`f64`.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod params;
pub mod real;
pub mod session;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use error::{AutodiffError, CheckpointError};
pub use kernels::ConvGeom;
pub use params::{ParamId, ParamKind, ParamStore};
pub use real::{DType, Real};
pub use session::Session;
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;
