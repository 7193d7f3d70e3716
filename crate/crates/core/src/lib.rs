//! Multilevel Picard (MLP) approximations with Gauss–Legendre time quadrature
//! for semilinear heat equations
//!
//! ```text
//! ∂_t u + ½Δu + f(t, x, u, ∇u) = 0,   u(T, ·) = g
//! ```
//!
//! whose nonlinearity may depend on the spatial gradient. The estimator
//! returns joint (value, gradient) approximations, the gradient coming from
//! Bismut–Elworthy–Li weights `(1, ΔW/(t − s))`.
//!
//! Module map:
//! - [`quadrature`]: Gauss–Legendre rules on `(0, 1)`, interval scaling and the
//!   iterated-quadrature quantities used by the error analysis.
//! - [`randomness`]: keyed, counter-based Brownian increments.
//! - [`estimator`]: the recursive estimator, L² error studies and the
//!   discrete Feynman–Kac residual.
//! - [`analysis`]: closed-form error bounds, cost recursions, log-Γ.
//! - [`problems`]: test problems with known exact solutions.
//! - [`experiment`]: convergence tables and the self-check report.

// `!(a < b)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod problems;
pub mod quadrature;
pub mod randomness;

pub use error::{Error, Result};
pub use estimator::{mlp_estimate, CostCounters, Estimate, Guards};
pub use problems::Problem;
pub use quadrature::GaussLegendreRule;
pub use randomness::MultiIndex;
