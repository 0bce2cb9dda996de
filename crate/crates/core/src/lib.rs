//! Numerics for rough differential equations driven by fractional Brownian
//! motion with nilpotent vector fields.
//!
//! The crate is organised bottom-up:
//!
//! * [`fbm`]: exact Cholesky sampling of multidimensional fBm, covariance and
//!   the Volterra kernel `K_H`.
//! * [`increments`]: the `δ` operator on 1-, 2- and 3-increments, Hölder
//!   norms and the sewing map `Λ`.
//! * [`signature`]: exact truncated signatures of piecewise-linear paths and
//!   the Lévy area.
//! * [`controlled`]: controlled paths, the rough integral and a level-2
//!   Taylor (Davie) solver.
//! * [`liefields`]: exact polynomial vector fields, Lie brackets and the
//!   nilpotency / Hörmander checks.
//! * [`strichartz`]: the Chen–Strichartz representation `y_t = exp(Z_t)(a)`.
//! * [`flows`]: Jacobian flows, Malliavin derivatives and the `Z^U` processes.
//! * [`norris`]: fourth-variation block statistics, Hermite moments and a
//!   Monte-Carlo probe of the Norris dichotomy.
//! * [`densitylab`]: the Yamato example and kernel density estimation.
//! * [`cli`]: the experiment runner behind the `roughflow` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod controlled;
pub mod densitylab;
pub mod error;
pub mod fbm;
pub mod flows;
pub mod increments;
pub mod liefields;
pub mod norris;
pub mod signature;
pub mod strichartz;

pub use error::{Error, Result};
