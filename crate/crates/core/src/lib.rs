//! Adversarial-training workbench for flow-based DDoS detection.

pub mod artifact;
pub mod augment;
pub mod autodiff;
pub mod detector;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gan;
pub mod perturb;
pub mod pipeline;
pub mod synth;
pub mod wire;

pub use error::{Error, Result};
