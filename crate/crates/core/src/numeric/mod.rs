//! Dense linear algebra, seeded randomness, and numerical oracles shared by
//! every other module.

mod matrix;
mod oracle;
mod random;

pub use matrix::{matvec_ref, max_abs_diff, mean_abs_diff, rel_err_inf, Matrix};
pub use oracle::finite_diff_grad;
pub use random::{seeded_stream, RandomStream};
