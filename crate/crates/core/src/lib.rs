//! Desk-scale clustered federated learning with one-shot EMD-based client
//! clustering.
//!
//! A server and a set of clients train tiny dense networks on synthetic
//! cluster-structured data. Clients are grouped by thresholding pairwise
//! Earth Mover's distances between their embedding distributions, computed
//! under shared random projections and calibrated by per-client reference
//! distances. Each pair of clients is measured exactly once.
//!
//! The crate is organised around the moving parts of that protocol:
//!
//! - [`transport`]: exact and entropically regularised discrete optimal
//!   transport solvers (the 1-Wasserstein backends).
//! - [`projection`]: seeded Gaussian random projections shared pairwise
//!   between clients.
//! - [`autonet`]: the trainable model family (dense embedding stack plus a
//!   softmax head) with manual backpropagation and SGD.
//! - [`synthdata`]: deterministic generators for rotated-cluster and
//!   backdoor-feature federated datasets.
//! - [`federation`]: the server/client orchestration loop and baselines.
//! - [`metrics`]: clustering and accuracy metrics plus distance diagnostics.
//! - [`config`] / [`artifacts`]: experiment configuration and deterministic
//!   artifact emission consumed by the CLI.

pub mod artifacts;
pub mod autonet;
pub mod config;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod projection;
pub mod seeds;
pub mod synthdata;
pub mod transport;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
