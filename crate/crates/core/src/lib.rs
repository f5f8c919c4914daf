//! Time-delay dynamic mode decomposition with measurement reduction.
//!
//! Snapshots are delay-embedded into Hankel matrices and fitted either
//! directly or through a sketch `R X` built from sampled rows, Gaussian or
//! sparse (Achlioptas) random matrices, or a Krylov basis. Everything is
//! generic over the scalar ([`Real`], implemented for `f32` and `f64`);
//! the aliases below fix it to one of the two.
//!
//! ```
//! use delaydmd::{dmd_tdc, RankPolicy, SnapshotMatrix64};
//! use nalgebra::DMatrix;
//!
//! let x = DMatrix::from_fn(1, 20, |_, k| (0.3 * k as f64).cos());
//! let x = SnapshotMatrix64::new(x, 1.0).unwrap();
//! let model = dmd_tdc(&x, 2, RankPolicy::default()).unwrap();
//! assert!((model.eigenvalues[0].im - 0.3f64.sin()).abs() < 1e-8);
//! ```

// `!(x > 0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod dmd;
pub mod error;
pub mod numerics;
pub mod problems;
pub mod projections;
pub mod snapshots;

pub use analysis::{run_comparison, ExperimentConfig, ExperimentReport, Problem, VariantName};
pub use dmd::{
    dmd_classic, dmd_projected, dmd_projected_with, dmd_tdc, pod_modes, spectrum, RankPolicy,
};
pub use error::{DmdError, Result};
pub use numerics::Real;
pub use projections::{ProjectionKind, ProjectionOperator};
pub use snapshots::{GridMeta, SnapshotMatrix};

pub type DmdModel64 = dmd::DmdModel<f64>;
pub type DmdModel32 = dmd::DmdModel<f32>;
pub type SnapshotMatrix64 = SnapshotMatrix<f64>;
pub type SnapshotMatrix32 = SnapshotMatrix<f32>;
pub type ProjectionOperator64 = ProjectionOperator<f64>;
pub type ProjectionOperator32 = ProjectionOperator<f32>;
