//! Deterministic numerical substrate: dense and sparse matrices, Xavier
//! initialization, Adam, and a finite-difference gradient oracle for tests.
//! Everything is 64-bit; nothing here allocates hidden global state.

mod adam;
mod dense;
mod gradcheck;
mod init;
mod sparse;

pub use adam::{adam_step, AdamState};
pub use dense::DenseMatrix;
pub use gradcheck::{finite_diff_grad, max_rel_err};
pub use init::xavier_init;
pub use sparse::SparseMatrix;
