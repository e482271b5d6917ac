//! Orthogonal low-rank embedding (OLÉ) loss, a from-scratch MLP to train it
//! with, and the geometric diagnostics used to check what it learns.
//!
//! The loss `Σ_c max(Δ, ‖X_c‖_*) − ‖X‖_*` collapses the deep features of each
//! class onto a low-dimensional subspace while pushing different classes'
//! subspaces toward mutual orthogonality. See [`ole_loss`] for the loss and
//! its subgradient, [`network`] and [`optim`] for training, and [`metrics`]
//! for the angle, spectrum, nearest-neighbour and novelty diagnostics.

pub mod data;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod ole_loss;
pub mod optim;
pub mod softmax;

pub use linalg::{Matrix, SvdResult};
pub use ole_loss::{ole_backward, ole_forward, ole_value_and_grad, FeatureBatch, OleConfig};
