//! Separable dictionary learning with a certified global-optimality solver.
//!
//! A training set stacked as a 3-tensor `S` (one `G x V` slice per example)
//! is factorized as `S_t ~= Gamma * C_t * Psi^T`, with a first-mode
//! dictionary `Gamma`, a second-mode dictionary `Psi`, and a sparse
//! coefficient tensor `C`. The solver alternates proximal gradient descent
//! with a singular-value optimality certificate and appends new atoms until
//! the factorization is provably a global minimum of the regularized
//! objective. An exact slice-wise singular value shrinkage oracle provides
//! the global optimum of the matching convex problem for verification.
//!
//! All numerics are generic over the scalar type (`f32`/`f64`) via the
//! [`scalar::Scalar`] trait; the crate root exports `f64` aliases, which are
//! what the CLI and the binary file formats use.

pub mod certificate;
pub mod descent;
pub mod dmri;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod oracle;
pub mod scalar;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

/// Default scalar type used by the CLI and the binary file formats.
pub type Real = f64;

pub type Tensor3 = tensor::Tensor3<Real>;
pub type Matrix = tensor::Matrix<Real>;
pub type Model = objective::Model<Real>;
pub type StepConstants = objective::StepConstants<Real>;
pub type DescentConfig = descent::DescentConfig<Real>;
pub type DescentTrace = descent::DescentTrace<Real>;
pub type CertConfig = certificate::CertConfig<Real>;
pub type CertificateReport = certificate::CertificateReport<Real>;
pub type SolverConfig = solver::SolverConfig<Real>;
pub type RunRecord = solver::RunRecord<Real>;
pub type OracleSolution = oracle::OracleSolution<Real>;
pub type SyntheticSpec = synth::SyntheticSpec<Real>;
pub type VolumeSlice2D = dmri::VolumeSlice2D<Real>;
pub type PatchSet = dmri::PatchSet<Real>;
