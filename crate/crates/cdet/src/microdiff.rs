//! Minimal reverse-mode differentiable operations for the fixed detector
//! topology: convolution, transposed convolution, pointwise nonlinearities,
//! L2 feature normalization, SGD with momentum, and checkpointing.
//!
//! All arithmetic runs in f64; parameter values are snapped to the f32 grid
//! at init and after every optimizer step so checkpoints (which store f32)
//! round-trip bit-exactly while finite-difference checks stay tight.

pub mod gradcheck;
pub mod ops;
pub mod store;
pub mod tensor;

pub use store::ParameterStore;
pub use tensor::Tensor;

/// Round an f64 through f32 storage precision.
#[inline]
pub fn snap_f32(x: f64) -> f64 {
    x as f32 as f64
}
