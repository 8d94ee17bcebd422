//! Hierarchical compound Poisson factorization for extremely sparse matrices.
//!
//! The response model is a compound Poisson built from a pluggable additive
//! exponential-dispersion element distribution, so the probability that a
//! matrix entry is present (the sparsity model) and the distribution of a
//! present value (the response model) decouple while staying linked in
//! expectation. With the degenerate point-mass element the model collapses to
//! plain hierarchical Poisson factorization.
//!
//! Layout follows the pipeline:
//!
//! * [`edm`]: the seven element families, their densities, conversions, moments,
//!   sampling, maximum-likelihood fits, and per-family count weights.
//! * [`compound`]: compound Poisson and zero-truncated compound Poisson
//!   densities, sampling, and truncation selection.
//! * [`model`]: hyperparameters, the generative simulator, and the
//!   variational state with its persistence format.
//! * [`svi`]: stochastic variational inference, its local and global steps, and
//!   the fit loop with validation-based convergence.
//! * [`eval`]: held-out log-likelihoods and missingness AUC.
//! * [`data`]: triplet ingestion, dense ID remapping, and the
//!   train/validation/test split protocol.

pub mod compound;
pub mod data;
pub mod edm;
pub mod error;
pub mod eval;
pub mod model;
pub mod special;
pub mod svi;

pub use compound::CompoundSpec;
pub use data::{SparseDataset, SplitSet};
pub use edm::{EdmFamily, Element, ElementSpec, NativeParams};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{Hyperparams, LatentState, VariationalState};
pub use svi::{FitConfig, FitMode, LocalStep, TrainingSource};
