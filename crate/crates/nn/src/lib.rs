//! Small hand-rolled neural-network toolkit used by the obfuscation pipeline.
//!
//! Everything is `f64` and CPU-only. Layers cache what they need during
//! `forward` and return input gradients from `backward`; parameters carry
//! their own gradient and Adam moment buffers so checkpoints can capture the
//! full optimizer state. There is no autograd tape — networks wire their
//! layers explicitly, which keeps gradient flow auditable and makes the
//! finite-difference checks in the test suites straightforward.

pub mod act;
pub mod adam;
pub mod archive;
pub mod blocks;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod param;

pub use act::{Act, Activation, Sigmoid};
pub use adam::Adam;
pub use archive::TensorArchive;
pub use blocks::{ConvDownBlock, FcResBlock};
pub use conv::{Conv2d, Upsample2x};
pub use linear::Linear;
pub use param::{Net, Param};

/// Clamp a probability into the open unit interval before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// `ln` of a probability clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn log_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}
