//! Correlated sampling for the hypersimplex `{x in [0,1]^n : |x|_1 <= k}`.
//!
//! Every sampler maps a point `x` to a set of coordinates whose size is
//! `floor(|x|_1)` or `ceil(|x|_1)`, contains each coordinate `i` with
//! probability exactly `x_i`, and, for a shared seed, keeps the expected
//! symmetric difference between the outputs of two inputs within a constant
//! factor (the stretch) of their l1 distance.
//!
//! * [`simplex`]: exponential clocks (stretch 2) and the dummy-coordinate
//!   wrapper for sub-distributions (stretch 3).
//! * [`tree`]: coordinate-tree pivotal rounding, stretch `2 ceil(log2 n)`,
//!   in dense and input-sparsity form.
//! * [`composed`]: hashing, bucket compression and fallback, recursed into a
//!   ladder whose stretch does not depend on `n`.
//! * [`eval`]: Monte Carlo estimators for marginals, stretch and submodular
//!   dominance.
//! * [`paging`]: rounding a fractional paging cache online.
//!
//! All randomness is derived from a [`randomness::MasterSeed`] through
//! labeled draws; sampling functions are pure and can be called concurrently.

pub mod composed;
pub mod error;
pub mod eval;
pub mod paging;
pub mod randomness;
pub mod simplex;
pub mod tree;
pub mod vectors;

pub use error::{Error, Result};
pub use randomness::{MasterSeed, SeedContext};
pub use vectors::{SampleSet, SparseVector};
