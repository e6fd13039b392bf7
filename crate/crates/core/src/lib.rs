//! Differentiable annealed variational lower bounds on log-normalizers.
//!
//! The crate builds an annealed importance-sampling bound from Hamiltonian
//! transition kernels with the accept-reject step removed, which makes the
//! whole estimator a deterministic transform of parameter-free noise and
//! therefore trainable end to end with reparameterization gradients. The
//! corrected (accept-reject) bound, plain ELBO, and importance weighting are
//! provided as baselines, along with Adam-based tuning of every schedule
//! parameter, grid-search calibration for the corrected bound, and schedule
//! extrapolation across bridge counts.
//!
//! All numerical code is generic over [`scalar::Scalar`], whose two backends
//! are plain `f64` (evaluation) and [`autodiff::Var`] (a value recorded on a
//! reverse-mode tape). Write the math once; run it fast or differentiate it.

pub mod autodiff;
pub mod bounds;
pub mod dynamics;
pub mod rng;
pub mod scalar;
pub mod targets;
pub mod tuning;

pub use scalar::Scalar;

/// Concrete (plain-float) parameter set, the form that is stored, evaluated,
/// and persisted.
pub type Params = bounds::AnnealParams<f64>;

/// Concrete phase point.
pub type Phase = dynamics::PhasePoint<f64>;

/// Tape-recorded scalar; `AnnealParams<Value<'t>>` is the differentiable
/// counterpart of [`Params`].
pub type Value<'t> = autodiff::Var<'t>;
