//! Self-aligning implicit local-surface models.
//!
//! A signed-distance network conditioned on per-shape latent codes is
//! trained jointly with SE(3)+scale alignment codes so that local surfaces
//! extracted around a single demonstrated grasp line up in a shared frame.
//! The trained model then transfers the grasp to novel objects by fitting
//! shape and pose codes against point-cloud distance samples at candidate
//! frames and accepting fits whose residual clears a threshold.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`geometry`]: se(3) exponential map, affine warps, frame bookkeeping
//! - [`encoding`]: sinusoidal positional encoding with coarse-to-fine masks
//! - [`mesh`] / [`corpus`]: watertight procedural shapes and mesh I/O
//! - [`sampling`]: mesh SDF oracle and training/inference sample sets
//! - [`neural`]: SDF-Net + Hyper-Net forward pass and gradient engine
//! - [`training`]: joint auto-decoder optimization with Adam
//! - [`transfer`]: candidate fitting, acceptance, and baselines
//! - [`evaluation`]: Chamfer metrics, isosurface extraction, reports

pub mod corpus;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod isosurface;
mod mc_tables;
pub mod mesh;
pub mod neural;
pub mod training;
pub mod transfer;
pub mod sampling;

pub use error::{Error, Result};

/// Caps rayon worker threads; reads `SAIS_THREADS` when `n` is zero.
/// Call once at process start.
pub fn configure_threads(n: usize) {
    let n = if n == 0 {
        std::env::var("SAIS_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    } else {
        n
    };
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
