//! Two-stage head-inpainting obfuscation pipeline.
//!
//! Stage I generates 68-point facial landmarks from a head-obfuscated body
//! crop; stage II inpaints a head conditioned on those landmarks and the
//! surrounding context. The crate also ships the synthetic person dataset
//! the desk-scale profile trains on and the full evaluation suite (landmark
//! error, SSIM / mask-SSIM, recognition rates, recognizer-attention head
//! contribution, and landmark-detection success ratio).

pub mod artifact;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod headgan;
pub mod img;
pub mod landmark;
pub mod lmgan;
pub mod pipeline;
pub mod run;

pub use error::{CoreError, Result};
