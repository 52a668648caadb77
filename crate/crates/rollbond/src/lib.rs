//! Optimal consumption and rolling-bond portfolio selection under affine
//! factor models of the term structure.
//!
//! The library computes, for power-utility preferences on finite or infinite
//! horizons:
//!
//! - the value-function kernel `G(t, y)` and its logarithmic gradient
//!   ([`gfunction`]),
//! - the optimal consumption rate and the optimal portfolio measure over
//!   rolling bonds via the exposure-matching linear system ([`strategy`]),
//! - Monte Carlo simulation of factor, rolling-bond, and wealth dynamics under
//!   arbitrary policies with reproducible parallel path streams ([`simulate`]),
//! - independent validators: Feynman-Kac Monte Carlo estimates of `G`,
//!   finite-difference PDE residuals, and a numeric check of the
//!   Hamiltonian supremum ([`oracle`]).
//!
//! Supported model families: the one-factor Gaussian models (Merton and
//! Vasicek), the two-factor G2++ model, a generic Gaussian affine model, and
//! the square-root (CIR) model in its negative-alpha candidate regime.

pub mod error;
pub mod gfunction;
mod linalg;
pub mod models;
pub mod quad;

pub use error::{KernelError, ModelError, SimError, StrategyError};
pub use gfunction::{g_cir, g_finite, g_infinite, GValue, PolicyTable};
pub use models::{
    make_cir, make_g2pp, make_generic, make_vasicek, AffineModelSpec, Family, Horizon, UtilityParams,
};
