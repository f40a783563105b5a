//! Adversarial camouflage textures for a triangle mesh: a software
//! rasterizer with an exact texture adjoint, a small hand-differentiated
//! objectness detector, the two-stage texture trainer, differential
//! evolution over attacked-face subsets, and the evaluation metrics.

pub mod camera;
pub mod config;
pub mod dac;
pub mod dataset;
pub mod de;
pub mod detector;
pub mod error;
pub mod image;
pub mod losses;
pub mod mask;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod texture;

pub use error::{Error, Result};
pub use par::Exec;
