//! Error taxonomy shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument is outside the operation's domain (k = 0, T <= 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not match the coupling or Gramian they feed.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A caller-side contract was violated (non-normalized state, bad window, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The Gramian is not positive on the truncated H_{1,#}: the
    /// exact-controllability surrogate fails (some retained b_k vanishes).
    #[error("gramian positivity failure: sigma_min = {sigma_min:.3e} ({context})")]
    Positivity { sigma_min: f64, context: String },

    /// Finite-horizon Gramian too ill-conditioned for a certified solve.
    #[error(
        "steering gramian condition {cond:.3e} exceeds {limit:.1e}; \
         use a smaller mode count or a larger horizon"
    )]
    Conditioning { cond: f64, limit: f64 },

    /// Adaptive quadrature failed to converge for the entry (k, l).
    #[error("quadrature did not converge for (k, l) = ({k}, {l})")]
    Quadrature { k: usize, l: usize },

    /// Schedule knots or gains are not increasing as required.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// Trajectory sampled too coarsely for the requested diagnostic.
    #[error("aliasing: dt = {dt:.3e} exceeds the Nyquist-safe bound {dt_max:.3e}")]
    Aliasing { dt: f64, dt_max: f64 },

    /// The norm-preserving integrator detected an L2 drift beyond tolerance.
    #[error("integrator blow-up: L2 drift {drift:.3e}")]
    Blowup { drift: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
