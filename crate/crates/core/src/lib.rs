//! Learning semidefinite-representable regularizers from data.
//!
//! A regularizer is specified by a linear map `L : ℝ^{q×q} → ℝ^d`; its unit
//! ball is the image of the nuclear-norm ball under `L`. The map is learned
//! from data `Y ∈ ℝ^{d×n}` by alternating between low-rank factor updates
//! (singular value projection or nuclear-norm proximal descent), a
//! least-squares map update, and Operator Sinkhorn normalization. A
//! dictionary-learning baseline learns polyhedral regularizers (images of the
//! ℓ₁ ball) the same way.
//!
//! Modules:
//! - [`linalg`]: SVD, rank truncation, tangent spaces, map application.
//! - [`scaling`]: matrix Sinkhorn and Operator Sinkhorn normalization.
//! - [`solvers`]: SVP, SVT, nuclear-norm and lasso proximal gradient, IHT.
//! - [`learning`]: the alternating learners.
//! - [`ensembles`]: random instances and isotropy diagnostics.
//! - [`eval`]: the probe-based map distance, denoising, representation cost.

pub mod ensembles;
pub mod error;
pub mod eval;
pub mod learning;
pub mod linalg;
pub mod rng;
pub mod scaling;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::{LinearMap, Matrix, Vector};
