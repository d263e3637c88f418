//! Joint training of small classifiers with learned data manipulation.
//!
//! The crate provides, bottom to top:
//!
//! - [`tensor`] / [`tape`]: dense `f64` tensors and a recorded computation
//!   graph with reverse-mode differentiation (including differentiable
//!   gradients for second-order use) plus finite-difference Hessian-vector
//!   products in [`hvp`].
//! - [`model`]: logistic-regression and one-hidden-layer MLP classifiers
//!   with per-example losses and gradients.
//! - [`data`]: synthetic dataset generators, CSV/IDX loading, and seeded
//!   low-data / class-imbalance subsampling protocols.
//! - [`reward`]: per-example weight tables with softmax-over-batch
//!   coefficients, plus the degenerate exact-match reward.
//! - [`augment`]: learnable augmentation networks — a continuous
//!   perturbation net and a gumbel-softmax token substitution table.
//! - [`trainer`]: the alternating training loop that updates the classifier
//!   under the current manipulation and the manipulation parameters from
//!   validation meta-gradients, along with reference baselines.

pub mod augment;
pub mod data;
mod error;
pub mod hvp;
pub mod model;
pub mod reward;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{ParamVector, Tensor};
