//! Matrix-free partial singular value decomposition.
//!
//! [`svds::svds_solve`] finds a few largest or smallest singular triplets of a
//! sparse or implicitly given matrix. It first iterates on `AᵀA`, which is
//! cheap and converges fast, and switches to the augmented matrix
//! `[0 Aᵀ; A 0]` only for triplets that need more accuracy than `AᵀA` can
//! deliver.

pub mod cli;
pub mod eigensolver;
pub mod error;
pub mod kernels;
pub mod matio;
pub mod operators;
pub mod svds;

pub use error::{Error, Result};
pub use kernels::DenseBlock;
pub use matio::{read_matrix_market, SparseMatrixCsr};
pub use operators::{JacobiPreconditioner, PrecondMode, Preconditioner, SvdOperator};
pub use svds::{estimate_condition_number, svds_solve, CondEstimate, Method, SvdTarget, SvdsConfig, SvdsResult};
