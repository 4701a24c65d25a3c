//! Motion fitting for static triangle meshes.
//!
//! A mesh is re-animated by optimizing per-frame pose parameters so that its
//! rasterized, reprojected reference-frame features match a dense feature
//! video. The crate bundles the geometry substrate, a small reverse-mode
//! differentiation engine, a differentiable feature rasterizer, the
//! animation models, the fitting loop and the pose-error metrics together
//! with a synthetic scenario generator used as a ground-truth oracle.

pub mod autodiff;
pub mod mesh;
pub mod anim;
pub mod features;
pub mod raster;
pub mod fitting;
pub mod eval;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
