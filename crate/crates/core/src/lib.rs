//! Matrix-free solvers for symmetric positive-definite linear complementarity
//! problems
//!
//! ```text
//! 0 <= A x + b  ⊥  x >= 0
//! ```
//!
//! which, for symmetric positive-definite `A`, is the optimality system of the
//! nonnegatively constrained quadratic program `min_{x >= 0} ½ xᵀAx + bᵀx`.
//!
//! `A` is only ever touched through matrix-vector products (MVPs), and the MVP
//! count is the cost metric every solver here is built around. The crate
//! provides:
//!
//! - [`operators`]: the matrix-free operator abstraction with exact MVP
//!   counting, plus dense and low-rank kernels.
//! - [`prox`]: the weighted proximal operator onto the nonnegative orthant
//!   under a diagonal-plus-low-rank metric, computed through a small dual
//!   root-finding problem with semi-smooth Newton.
//! - [`quasinewton`]: unrolled BFGS models and the secant cache reused across
//!   bifidelity subproblems.
//! - [`stepsize`]: the exact over-relaxation step for quadratics, the
//!   Barzilai–Borwein step and the cached-gradient advance.
//! - [`solvers`]: single- and bi-fidelity proximal quasi-Newton methods and the
//!   baseline methods they are compared against.
//! - [`fundamental`]: estimation of the fundamental quantity `c(A)` governing
//!   Lipschitz continuity of the LCP solution map.
//! - [`instances`]: synthetic contact-geometry problem generation and the
//!   `.lcp.json` instance format.
//! - [`oracle`]: a dense Lemke pivoting solver used as a reference solution.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fundamental;
pub mod instances;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod prox;
pub mod quasinewton;
pub mod solvers;
pub mod stepsize;

pub use error::{Error, Result};
pub use operators::{CountedOperator, DenseMatrix, Fidelity, LinearMap, MatVecOperator};
pub use solvers::{SolveOptions, SolverReport, Termination};
