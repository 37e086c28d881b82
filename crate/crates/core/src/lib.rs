//! Refinement of pretrained neural networks against *unseen* spurious-correlation
//! (Clever Hans) strategies.
//!
//! The crate provides:
//!
//! * a minimal dense-tensor layer stack with forward, reverse-mode gradients,
//!   Adam training and a bit-exact binary container ([`model`]),
//! * layer-wise attribution methods (Gradient x Input, Integrated Gradients,
//!   LRP) whose scores decompose into per-edge messages ([`attribution`]),
//! * the refinement rules themselves: EGEM soft-pruning in closed form,
//!   PCA-EGEM pruning in a rotated activation basis, RGEM / Ridge last-layer
//!   refits and full fine-tuning ([`refine`]),
//! * hyper-parameter machinery: triangular per-layer pruning targets,
//!   exponential search for the regularizer, slack-based model selection
//!   ([`hypersearch`]),
//! * a desk-scale Clever Hans benchmark: procedural glyph datasets, artifact
//!   injection, poisoned evaluation and the associated metrics ([`chbench`]).

pub mod attribution;
pub mod chbench;
pub mod error;
pub mod hypersearch;
pub mod linalg;
pub mod model;
pub mod refine;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;
