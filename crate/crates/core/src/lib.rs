//! Geometry and data backbone for the reposing pipeline: rotation math,
//! a desk-scale parametric body, a deterministic software rasterizer,
//! keypoint fitting, and synthetic dataset generation.

pub mod bodymodel;
pub mod data;
pub mod fit;
pub mod imageio;
pub mod keypoints;
pub mod real;
pub mod render;
pub mod rotmath;
pub mod template_io;
