//! Spectral-Galerkin laboratory for Gramian-based stabilization of the
//! bilinear Schrodinger control system on the unit interval.
//!
//! The system `i Psi_t = -lap Psi - u(t) mu(x) Psi` around the ground state
//! reduces, in the Dirichlet sine eigenbasis, to finite closed-form data: a
//! skew rotation per mode, a control functional with one coefficient per
//! mode, and a damped Gramian whose entries are Laplace transforms of
//! trigonometric products. Everything this crate certifies rests on that
//! exactness: the truncated model is not a discretization of the operator
//! statements, it satisfies them identically, so decay identities and
//! Lyapunov residuals are testable at roundoff precision.
//!
//! Modules:
//! - [`spectral`]: eigenbasis data, dipole couplings, coordinate layouts.
//! - [`gramian`]: closed-form Gramian assembly, factorization, gain scans.
//! - [`feedback`]: the linear closed loop, its exact co-state oracle, decay
//!   certificates, and the boundary-trace regularity diagnostic.
//! - [`bilinear`]: the full bilinear loop with a norm-preserving splitting.
//! - [`finite_time`]: staged gains driving the linear loop to zero at time T.
//! - [`cost`]: minimal-energy steering and the small-time cost scaling.
//! - [`export`]: deterministic CSV/JSON emission.

// validations use the negated form `!(x > 0.0)` on purpose: it rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bilinear;
pub mod cost;
pub mod error;
pub mod export;
pub mod feedback;
pub mod finite_time;
pub mod fit;
pub mod gramian;
pub mod quad;
pub mod spectral;

pub use error::{Error, Result};
