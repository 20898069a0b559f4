//! Low-rank matrix-covariate generalized linear models.
//!
//! A scalar response `Y` is modelled through a linear predictor
//! `γ + ξᵀZ + ⟨η, M⟩` where `M` is a `p × q` matrix covariate and `η = ABᵀ`
//! has rank at most `r`. The crate fits the model by alternating penalized
//! maximum likelihood, provides sandwich standard errors for the implied
//! coefficient vector, and tests `H₀: η = 0` with resampling p-values.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod inference;
pub mod model;
pub mod numkit;
pub mod testing;

pub use error::{Error, Result};
pub use estimator::{fit, CvGrid, FitResult};
pub use inference::SandwichCovariance;
pub use model::{CoefVector, FactorParams, Family, LambdaPolicy, MatrixDataset, ModelSpec};
pub use numkit::DenseMatrix;
