//! Simulation and inversion toolkit for the 1-D Westervelt equation with
//! fractional damping.
//!
//! The crate is organized along the pipeline:
//!
//! * [`fracops`] — Abel integrals and Caputo derivatives (L1 scheme) plus the
//!   coercivity check behind the fractional energy estimates.
//! * [`spectral`] — analytic eigensystem of -d²/dx² on (0,1), modal
//!   projection/synthesis, Ḣˢ norms.
//! * [`forward`] — Newmark/L1 Faedo-Galerkin solvers: general linear damped
//!   wave equation (CWCH and fractional Zener damping), the nonlinear
//!   Westervelt fixed point, its linearization, and point observation.
//! * [`poles`] — roots and residues of the modal relaxation symbols via
//!   companion-matrix seeding, Newton refinement, and argument-principle
//!   certification.
//! * [`inversion`] — residue-based linear recovery of the nonlinearity
//!   perturbation from a single-point time trace.
//! * [`recon`] — noisy-data smoothing, chapeau discretization, frozen Newton
//!   with Tikhonov regularization and discrepancy stopping, singular-value
//!   diagnostics.
//! * [`config`] / [`output`] — experiment configuration and CSV/JSON emission
//!   for the `fracwave` command-line driver.

pub mod config;
pub mod error;
pub mod forward;
pub mod fracops;
pub mod inversion;
pub mod output;
pub mod poles;
pub mod recon;
pub mod spectral;

pub use error::{Error, Result};
