//! Adversarial image-to-frequency transform for unsupervised road defect
//! detection: a bidirectional image/spectrum generator trained against two
//! discriminators on defect-free pavement, with defects scored by the Jeffrey
//! divergence between an image and its regeneration.

pub mod checkpoint;
pub mod data;
pub mod detection;
pub mod error;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{AiftError, Result};
