//! Controlled Landau–Lifshitz–Gilbert dynamics under low-mode forcing.
//!
//! The magnetization on (0, 2π) with Neumann boundary conditions is
//! expanded in cosines and truncated at frequency `K`. On top of that
//! Galerkin system the crate provides Lie-bracket rank certification,
//! deterministic steering, Stratonovich simulation with Girsanov-weighted
//! small-ball estimates, and an independent finite-difference PDE solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod galerkin;
pub mod integrators;
pub mod lie;
pub mod pde;
pub mod schedule;
pub mod spectral;
pub mod steering;
pub mod stochastic;

pub use error::{LlgError, Result};
pub use galerkin::{control_field, drift, rhs, Convention, GalerkinModel, LinearField, LlgParams};
pub use schedule::ControlSchedule;
pub use spectral::{
    eigenvalue, evaluate_physical, project_to_modes, quad_product_coeff, triple_product_coeff,
    weighted_inner, ModeIndex, ModeState, PhysicalField,
};
