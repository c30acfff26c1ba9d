//! Learning stack for self-supervised reposing: feature extractors,
//! the image-to-body regressor, the warping generator and discriminator,
//! the full loss set, evaluation metrics, and the training loop.

pub mod evalmetrics;
pub mod features;
pub mod gen;
pub mod losses;
pub mod regress;
pub mod rotvars;
pub mod trainer;
