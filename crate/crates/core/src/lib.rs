//! Numerical laboratory for almost hypercomplex manifolds with Hermitian-Norden
//! metric structure: tensor algebra, chart calculus, W-class membership,
//! quaternionic Kähler analysis and deterministic fixtures.

pub mod chart;
pub mod classifier;
pub mod error;
pub mod gallery;
pub mod linalg;
pub mod qk;
mod ser;
pub mod structures;
pub mod tensor;

pub use error::{Error, Result};
pub use structures::{Alpha, HTriple, EPSILON};
pub use tensor::{DenseTensor, MetricBundle, Variance};
