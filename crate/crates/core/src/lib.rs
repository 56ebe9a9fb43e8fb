//! Scalable Bayesian regression for wide (`p ≫ n`) data drawn from several
//! covariate sources, each with its own shrinkage level.
//!
//! All estimation runs through `n × n` Gram matrices, so the cost in `p` is a
//! single pass over the data per source.

pub mod dataset;
pub mod error;
pub mod fit;
pub mod gram;
pub mod kv;
pub mod lasso;
pub mod matrix;
pub mod bench;
pub mod cli;
pub mod nelder_mead;
pub mod pipeline;
pub mod sim;
pub mod ssbr;
pub mod tuning;

pub use dataset::{ColumnStats, Estimator, MultiSourceDataset, ShrinkageVector, Source};
pub use error::{ErrorKind, Result, SbrError};
pub use fit::{posterior_mode, posterior_variances, SbrFit};
pub use gram::{compute_gram, core_solve, CoreSolve, GramCache};
pub use matrix::Matrix;
pub use ssbr::{Control, KlContext, Penalty, SparseSolution};
pub use tuning::{tune, TuneConfig, TuneResult};
