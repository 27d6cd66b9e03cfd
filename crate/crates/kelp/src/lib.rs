//! Knowledge-embedded latent projection (KELP) models for high-dimensional
//! binary matrices.
//!
//! An n x p binary matrix is modeled entrywise as
//! `P(y_ij = 1) = sigmoid(rho + alpha_i + <u_i, v_j>)` with low-rank row and
//! column embeddings. When external semantic embeddings of the column entities
//! are available, the column embeddings are constrained to the subspace
//! spanned by the leading kernel principal components of those embeddings,
//! which shares information across columns and stabilizes estimation when the
//! matrix is imbalanced (far more columns than rows). Everything is estimated
//! by projected gradient descent on a regularized Bernoulli log-likelihood.
//!
//! The pieces:
//!
//! - [`matrix`]: observation matrices, embedding tables, hold-out masks, and
//!   their text formats.
//! - [`kernel`]: Gram matrices, double centering, the kernel-PCA basis, and
//!   the Nystrom extension to unseen columns.
//! - [`model`]: parameters, logits, the masked likelihood, the balance
//!   penalty, and analytic gradients.
//! - [`optimizer`]: spectral initialization and the projected gradient loop.
//! - [`selection`]: data-driven kernel choice by hold-out likelihood,
//!   including an unconstrained baseline.
//! - [`simulation`]: seeded synthetic-data generators.
//! - [`evaluation`]: relative errors, Procrustes alignment, AuROC, and the
//!   masked completion protocol.
//!
//! The `kelp` binary wires these into a small command-line pipeline; the
//! `examples/` directory holds one runnable walkthrough per capability.

pub mod error;
pub mod evaluation;
pub mod kernel;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod optimizer;
pub mod selection;
pub mod simulation;
pub mod textio;

pub use error::{KelpError, Result};
pub use evaluation::{auroc, completion_eval, procrustes_error, relative_theta_error, MetricsReport};
pub use kernel::{double_center, gram, BasisSelector, KernelSpec, KpcaBasis};
pub use matrix::{sample_holdout_mask, BinaryMatrix, EmbeddingTable, EntryMask};
pub use model::{
    balance_penalty, extend_embedding, gradients, holdout_nll, nll, regularized_objective,
    sigmoid, ModelParams,
};
pub use optimizer::{
    initialize, pgd_fit, pgd_fit_from, project_centering, project_subspace, BoxBounds, FitConfig,
    FitResult, StepSizes,
};
pub use selection::{default_candidate_grid, select_kernel, select_kernel_and_refit, SelectionReport};
pub use simulation::{
    gen_ground_truth, gen_semantic_embeddings, sample_matrix, GroundTruth, Mapping, SimConfig,
};
