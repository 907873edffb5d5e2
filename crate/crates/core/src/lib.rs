//! Two-scale finite element homogenization (FE²) for 2D neo-Hookean solids,
//! with a multilayer-perceptron surrogate that replaces the per-Gauss-point
//! RVE solve once trained.
//!
//! The crate is organized along the pipeline:
//!
//! * [`tensor`] — 2D tensor algebra and the neo-Hookean constitutive law.
//! * [`fe`] — total-Lagrangian quad4 finite element machinery (meshes,
//!   assembly, constraints, dense solve, Newton iteration).
//! * [`rve`] — the micro-scale half: imposing a macroscale deformation
//!   gradient on a unit cell, homogenized stress and tangent via static
//!   condensation.
//! * [`net`] — the MLP surrogate and its Levenberg-Marquardt trainer.
//! * [`pipeline`] — offline phase: deformation-gradient sampling and
//!   dataset generation.
//! * [`driver`] — the macroscale solver with direct or surrogate
//!   constitutive response, plus the comparison harness.

// `!(x > 0.0)` instead of `x <= 0.0` throughout: the negated form also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod fe;
pub mod io;
pub mod net;
pub mod pipeline;
pub mod rve;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{MaterialParams, Tensor2, Tensor4};
