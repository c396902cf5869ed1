//! Weighted CP tensor factorization for data with missing entries.
//!
//! The objective and gradient are evaluated either on dense tensors with a
//! binary weight tensor or directly on the known entries in coordinate form,
//! and minimized by nonlinear conjugate gradient over all factor matrices at
//! once. An EM-ALS baseline, evaluation scores and seeded problem generators
//! are included.

pub mod datagen;
pub mod em_als;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod fit;
pub mod kernels;
pub mod kruskal;
pub mod objective;
pub mod optimizer;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use kruskal::{FactorMatrix, KruskalModel};
pub use tensor::{DenseTensor, Shape, SparseSamples};
