//! Dense and sparse linear algebra, reverse-mode gradients, Adam and the
//! seeded random source used throughout the crate.

mod dense;
mod norm;
mod optim;
mod rng;
mod sparse;
mod tape;

pub use dense::{top_k_indices, top_k_mean, DenseMatrix, NORM_EPS};
pub use norm::{batch_norm, BatchStats, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use rng::SeededRng;
pub use sparse::SparseAdjacency;
pub use tape::{Gradients, Tape, Var};
