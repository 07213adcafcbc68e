//! Time-dependent density estimation with binary classifiers.
//!
//! A network `f(x, t)` is trained so that the classifier
//! `d(x, t, dt) = sigmoid(f(x, t) * dt)` separates samples of a stochastic
//! process at two neighbouring time knots. At the optimum `f * dt` is the log
//! density ratio between the knots, so the density at any knot is a base
//! density plus a telescoping sum of network evaluations:
//!
//! ```text
//! log rho_{t_k}(x) = log rho_0(x) + sum_{j=1..k} f(x, tbar_j) * dt_j
//! ```
//!
//! Static density estimation reuses the same machinery by bridging a latent
//! Gaussian (t = 0) and the data (t = 1) with the linear interpolant; the
//! exact input gradient of the sum is the score used by the Langevin and
//! Hamiltonian samplers.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command line live in the `tdde` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod batch;
pub mod classifier;
pub mod density;
pub mod error;
pub mod eval;
pub mod grid;
pub mod latent;
pub mod linalg;
pub mod loss;
pub mod math;
pub mod mlp;
pub mod paths;
pub mod rng;
pub mod samplers;
pub mod simdata;
pub mod train;

pub use adam::AdamState;
pub use classifier::{ClassifierModel, EmbeddingMode, TimeEmbedding};
pub use density::{Anchor, DensityModel};
pub use error::{Error, Result};
pub use grid::{GridKind, TimeGrid};
pub use latent::LatentDensity;
pub use linalg::Matrix;
pub use mlp::{Activation, MlpParams};
pub use paths::PathDataset;
pub use train::{ScoreRule, TrainConfig, TrainReport};
