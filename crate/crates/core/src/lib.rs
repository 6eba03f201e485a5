//! Distributed anomaly detection for sensor networks.
//!
//! Each simulated sensor runs a small single-hidden-layer autoencoder and flags
//! a reading as anomalous when its reconstruction residual leaves a `p`-sigma
//! envelope around the residual mean. Sensors never talk to each other: once a
//! day they upload their readings, reconstructions, residuals, and flags to a
//! cloud actor, which periodically retrains the model on the pooled uploads,
//! recomputes the residual statistics, and broadcasts fresh parameters back.
//!
//! The crate bundles:
//!
//! - [`autoencoder`]: the from-scratch network (forward pass, regularized
//!   reconstruction cost, backpropagation, batch training).
//! - [`detector`]: residuals, per-slot mean/sigma statistics, and the
//!   `p`-sigma decision rule.
//! - [`sensor`] / [`cloud`]: the two halves of the edge/cloud protocol.
//! - [`datagen`]: a seeded synthetic multi-sensor signal generator with
//!   spike/burst fault injection and ground-truth labels.
//! - [`sim`]: a deterministic day-clock simulator wiring everything together,
//!   with message/byte accounting.
//! - [`eval`]: ROC/AUC scoring and the experiment sweeps (magnitude heat map,
//!   frequency sweep, retraining-scheme adaptivity comparison).
//! - [`config`] / [`cli`]: TOML run configuration and the `aewatch` binary.
//!
//! Every run is a pure function of its configuration: all randomness flows
//! from per-module seeds derived via [`derive_seed`].
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability, and `docs/formats.md` for the on-disk file formats.

pub mod autoencoder;
pub mod cli;
pub mod cloud;
pub mod config;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod eval;
pub mod sensor;
pub mod sim;

pub use error::{Error, Result};

/// Derives a per-module seed from a master seed and a module tag.
///
/// The tag is hashed with FNV-1a, XORed into the master seed, and the result
/// is finalized with a splitmix64 round so that nearby master seeds produce
/// unrelated streams. This derivation is part of the documented run format:
/// changing it invalidates recorded manifests.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
