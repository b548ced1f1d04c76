//! Prototype-domain person re-identification.
//!
//! The crate is split along the pipeline:
//!
//! - [`pool`]: sample collections, manifests, source-balanced sampling,
//!   augmentation, toy feature extraction and synthetic data.
//! - [`net`]: a small feed-forward embedding network with hand-written
//!   gradients and the training procedures built on it.
//! - [`discovery`]: alternating k-means / embedding refinement that discovers
//!   prototype domains.
//! - [`reid`]: the deployment path (domain bank, gallery index, ranking).
//! - [`eval`]: open-set evaluation (IoU matching, AP, CMC, sweeps).

pub mod binio;
pub mod discovery;
pub mod error;
pub mod eval;
#[cfg(test)]
mod fixtures;
pub mod net;
pub mod pool;
pub mod reid;

pub use error::{Error, Result};

/// Deterministic generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
