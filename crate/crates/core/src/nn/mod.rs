//! Minimal dense 2-D convolution stack with reverse-mode gradients.
//!
//! Parameters live in a flat `f64` vector owned by the caller so that the
//! optimizer, the moving average and finite-difference checks all work on
//! the same buffer.

mod conv;

pub use conv::{ConvNet, ConvNetSpec};
