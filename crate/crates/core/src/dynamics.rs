//! Momentum machinery and transition kernels: a volume-preserving,
//! self-inverting leapfrog simulator plus the corrected (Metropolis-adjusted)
//! and uncorrected forward/reversal kernels built on it.
//!
//! Conventions, fixed once here so the kernels compose without extra sign
//! bookkeeping:
//! - [`simulate`] is the operator `𝒯`: `n_steps` leapfrog steps followed by a
//!   momentum negation, so `𝒯 ∘ 𝒯 = id` and `|det J| = 1`.
//! - Kinetic energy is `ρᵀ Σ⁻¹ ρ / 2`, so the position update reads
//!   `z ← z + ε·Σ⁻¹ρ` and learning `Σ` acts as a preconditioner.
//! - Each forward kernel ends with its own momentum negation, which undoes
//!   the one inside `𝒯`; net effect: momentum persists across transitions.

use crate::rng::Rand;
use crate::scalar::Scalar;
use crate::targets::Target;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite gradient at leapfrog step {step}")]
    NonFiniteGradient { step: usize },
    #[error("coordinate exceeded 1e8 at leapfrog step {step}")]
    CoordinateOverflow { step: usize },
    #[error("damping coefficient {0} outside [0, 1]")]
    BadEta(f64),
}

/// Diagonal Gaussian momentum distribution `S(ρ) = N(0, Σ)` with
/// `Σ = diag(exp(2·log_sigma_diag))`. Zero mean makes `S` even, which the
/// kernels rely on.
#[derive(Debug, Clone)]
pub struct MomentumSpec<S> {
    pub log_sigma_diag: Vec<S>,
}

impl MomentumSpec<f64> {
    pub fn identity(dim: usize) -> Self {
        MomentumSpec {
            log_sigma_diag: vec![0.0; dim],
        }
    }
}

impl<S: Scalar> MomentumSpec<S> {
    pub fn dim(&self) -> usize {
        self.log_sigma_diag.len()
    }

    /// Caches the exponentials of `log_sigma_diag`; one prepared momentum is
    /// shared by all transitions of a draw.
    pub fn prepared(&self) -> PreparedMomentum<S> {
        PreparedMomentum {
            sigma: self.log_sigma_diag.iter().map(|&ls| ls.exp()).collect(),
            inv_sigma: self.log_sigma_diag.iter().map(|&ls| (-ls).exp()).collect(),
            inv_var: self
                .log_sigma_diag
                .iter()
                .map(|&ls| (ls * -2.0).exp())
                .collect(),
            log_sigma_diag: self.log_sigma_diag.clone(),
        }
    }
}

/// Momentum distribution with its scale exponentials precomputed.
#[derive(Debug, Clone)]
pub struct PreparedMomentum<S> {
    pub log_sigma_diag: Vec<S>,
    sigma: Vec<S>,
    inv_sigma: Vec<S>,
    /// Diagonal of `Σ⁻¹`.
    inv_var: Vec<S>,
}

impl<S: Scalar> PreparedMomentum<S> {
    pub fn dim(&self) -> usize {
        self.log_sigma_diag.len()
    }

    /// `log S(ρ) = Σ_i [ -log_sigma_i - ½·ln 2π - ½·(ρ_i/σ_i)² ]`.
    pub fn log_density(&self, rho: &[S]) -> S {
        assert_eq!(rho.len(), self.dim(), "dimension mismatch");
        let mut total = rho[0].lift(0.0);
        for i in 0..rho.len() {
            let standardized = rho[i] * self.inv_sigma[i];
            total = total
                - self.log_sigma_diag[i]
                - crate::targets::HALF_LN_2PI
                - standardized * standardized * 0.5;
        }
        total
    }

    /// `ρ = σ·ξ` for pre-drawn standard normal noise.
    pub fn reparameterize(&self, xi: &[f64]) -> Vec<S> {
        assert_eq!(xi.len(), self.dim(), "dimension mismatch");
        (0..xi.len()).map(|i| self.sigma[i] * xi[i]).collect()
    }

    pub fn sample<R: Rand>(&self, rng: &mut R) -> (Vec<S>, Vec<f64>) {
        let xi = rng.normals(self.dim());
        (self.reparameterize(&xi), xi)
    }
}

/// Position/momentum pair threaded through the kernels.
#[derive(Debug, Clone)]
pub struct PhasePoint<S> {
    pub z: Vec<S>,
    pub rho: Vec<S>,
}

impl<S: Scalar> PhasePoint<S> {
    pub fn new(z: Vec<S>, rho: Vec<S>) -> Self {
        assert_eq!(z.len(), rho.len(), "dimension mismatch");
        PhasePoint { z, rho }
    }

    fn negated_momentum(&self) -> PhasePoint<S> {
        PhasePoint {
            z: self.z.clone(),
            rho: self.rho.iter().map(|&r| -r).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeapfrogConfig<S> {
    pub step_size: S,
    pub n_steps: usize,
}

impl<S: Scalar> LeapfrogConfig<S> {
    pub fn single_step(step_size: S) -> Self {
        LeapfrogConfig {
            step_size,
            n_steps: 1,
        }
    }
}

/// Log-density (up to a constant) and position gradient of one bridging
/// distribution over `z`. The momentum part `S(ρ)` is handled by the kernels.
pub trait BridgeDensity<S: Scalar> {
    fn log_density(&self, z: &[S]) -> S;
    fn grad_log_density(&self, z: &[S]) -> Vec<S>;
}

/// A raw target viewed as a bridge (the β = 1 endpoint); used for plain
/// corrected-HMC reference runs.
pub struct TargetBridge<'a, T>(pub &'a T);

impl<S: Scalar, T: Target> BridgeDensity<S> for TargetBridge<'_, T> {
    fn log_density(&self, z: &[S]) -> S {
        self.0.log_density(z)
    }
    fn grad_log_density(&self, z: &[S]) -> Vec<S> {
        self.0.grad_log_density(z)
    }
}

const COORD_LIMIT: f64 = 1e8;

fn check_finite<S: Scalar>(xs: &[S], step: usize) -> Result<(), DynamicsError> {
    if xs.iter().all(|x| x.value().is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::NonFiniteGradient { step })
    }
}

fn check_bounded<S: Scalar>(xs: &[S], step: usize) -> Result<(), DynamicsError> {
    if xs.iter().all(|x| x.value().abs() <= COORD_LIMIT) {
        Ok(())
    } else {
        Err(DynamicsError::CoordinateOverflow { step })
    }
}

/// The simulator `𝒯`: leapfrog steps with kinetic energy `ρᵀΣ⁻¹ρ/2`, then a
/// momentum negation. Self-inverting with unit Jacobian. Raises on non-finite
/// gradients or coordinates beyond 1e8 rather than silently returning inf.
pub fn simulate<S: Scalar, B: BridgeDensity<S>>(
    p: &PhasePoint<S>,
    cfg: &LeapfrogConfig<S>,
    momentum: &PreparedMomentum<S>,
    bridge: &B,
) -> Result<PhasePoint<S>, DynamicsError> {
    let d = p.z.len();
    let eps = cfg.step_size;
    let inv_var = &momentum.inv_var;
    let mut z = p.z.clone();
    let mut rho = p.rho.clone();

    for step in 0..cfg.n_steps {
        let grad = bridge.grad_log_density(&z);
        check_finite(&grad, step)?;
        for i in 0..d {
            rho[i] = rho[i] + eps * grad[i] * 0.5;
        }
        for i in 0..d {
            z[i] = z[i] + eps * rho[i] * inv_var[i];
        }
        check_bounded(&z, step)?;
        let grad = bridge.grad_log_density(&z);
        check_finite(&grad, step)?;
        for i in 0..d {
            rho[i] = rho[i] + eps * grad[i] * 0.5;
        }
        check_bounded(&rho, step)?;
    }

    Ok(PhasePoint {
        z,
        rho: rho.into_iter().map(|r| -r).collect(),
    })
}

/// Partial momentum refresh `ρ' = η·ρ + √(1-η²)·σ·ξ`; holds `S` invariant and
/// satisfies detailed balance with respect to it, so its reversal has the
/// same functional form. Returns the noise for tape replay.
pub fn resample_momentum<S: Scalar, R: Rand>(
    rho: &[S],
    eta: S,
    momentum: &PreparedMomentum<S>,
    rng: &mut R,
) -> (Vec<S>, Vec<f64>) {
    let xi = rng.normals(rho.len());
    (resample_momentum_with(rho, eta, momentum, &xi), xi)
}

/// Deterministic part of the refresh, for replaying recorded noise.
pub fn resample_momentum_with<S: Scalar>(
    rho: &[S],
    eta: S,
    momentum: &PreparedMomentum<S>,
    xi: &[f64],
) -> Vec<S> {
    assert_eq!(rho.len(), momentum.dim(), "dimension mismatch");
    debug_assert!((0.0..=1.0).contains(&eta.value()));
    if eta.value() == 1.0 {
        // Degenerate no-refresh limit; kept exact (√(1-η²) would flag a
        // sqrt-domain error on a tape).
        return rho.to_vec();
    }
    let damp = (-(eta * eta) + 1.0).sqrt();
    (0..rho.len())
        .map(|i| rho[i] * eta + damp * momentum.sigma[i] * xi[i])
        .collect()
}

fn validate_eta(eta: f64) -> Result<(), DynamicsError> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(DynamicsError::BadEta(eta))
    }
}

/// Output of one corrected forward transition. The bridge log-densities at
/// the entry and exit positions are returned because the annealed estimator
/// needs exactly those values.
#[derive(Debug, Clone)]
pub struct CorrectedStep<S> {
    pub state: PhasePoint<S>,
    pub accepted: bool,
    /// `log π̃_m(z_m)` at the entry position.
    pub log_bridge_z_in: S,
    /// `log π̃_m(z_{m+1})` at the exit position.
    pub log_bridge_z_out: S,
}

/// Corrected forward kernel: resample momentum, simulate with a Metropolis
/// accept-reject against `π̃_m(z, ρ) = π̃_m(z)·S(ρ)`, negate momentum. Leaves
/// `π̃_m(z, ρ)` exactly invariant.
pub fn corrected_transition<S: Scalar, B: BridgeDensity<S>, R: Rand>(
    p: &PhasePoint<S>,
    bridge: &B,
    cfg: &LeapfrogConfig<S>,
    momentum: &PreparedMomentum<S>,
    eta: S,
    rng: &mut R,
) -> Result<CorrectedStep<S>, DynamicsError> {
    validate_eta(eta.value())?;
    // 1. refresh momentum, keep position
    let (rho1, _) = resample_momentum(&p.rho, eta, momentum, rng);
    let start = PhasePoint {
        z: p.z.clone(),
        rho: rho1,
    };
    // 2. simulate and accept/reject
    let prop = simulate(&start, cfg, momentum, bridge)?;
    let lz_old = bridge.log_density(&start.z);
    let lz_new = bridge.log_density(&prop.z);
    let log_old = lz_old + momentum.log_density(&start.rho);
    let log_new = lz_new + momentum.log_density(&prop.rho);
    let log_alpha = (log_new - log_old).value().min(0.0);
    let accepted = rng.uniform().ln() < log_alpha;
    let (kept, lz_out) = if accepted {
        (prop, lz_new)
    } else {
        (start, lz_old)
    };
    // 3. negate momentum
    Ok(CorrectedStep {
        state: kept.negated_momentum(),
        accepted,
        log_bridge_z_in: lz_old,
        log_bridge_z_out: lz_out,
    })
}

/// Reversal of [`corrected_transition`] with respect to `π̃_m`: the same three
/// steps in mirrored order (negate; simulate with accept-reject; refresh via
/// the reversal of `s`, which has the same Gaussian form).
pub fn corrected_reversal<S: Scalar, B: BridgeDensity<S>, R: Rand>(
    p: &PhasePoint<S>,
    bridge: &B,
    cfg: &LeapfrogConfig<S>,
    momentum: &PreparedMomentum<S>,
    eta: S,
    rng: &mut R,
) -> Result<PhasePoint<S>, DynamicsError> {
    validate_eta(eta.value())?;
    // 1. negate momentum
    let start = p.negated_momentum();
    // 2. simulate and accept/reject
    let prop = simulate(&start, cfg, momentum, bridge)?;
    let log_old = bridge.log_density(&start.z) + momentum.log_density(&start.rho);
    let log_new = bridge.log_density(&prop.z) + momentum.log_density(&prop.rho);
    let log_alpha = (log_new - log_old).value().min(0.0);
    let kept = if rng.uniform().ln() < log_alpha {
        prop
    } else {
        start
    };
    // 3. refresh momentum via s_rev
    let (rho, _) = resample_momentum(&kept.rho, eta, momentum, rng);
    Ok(PhasePoint { z: kept.z, rho })
}

/// Uncorrected forward kernel: the corrected one with the accept-reject
/// dropped. Returns the refreshed momentum `ρ'_m`, whose density ratio
/// against `ρ_{m+1}` is the estimator's per-bridge increment. Fully
/// differentiable when run on a tape.
pub fn uncorrected_transition<S: Scalar, B: BridgeDensity<S>, R: Rand>(
    p: &PhasePoint<S>,
    bridge: &B,
    cfg: &LeapfrogConfig<S>,
    momentum: &PreparedMomentum<S>,
    eta: S,
    rng: &mut R,
) -> Result<(PhasePoint<S>, Vec<S>), DynamicsError> {
    validate_eta(eta.value())?;
    let (rho_half, _) = resample_momentum(&p.rho, eta, momentum, rng);
    let start = PhasePoint {
        z: p.z.clone(),
        rho: rho_half.clone(),
    };
    let prop = simulate(&start, cfg, momentum, bridge)?;
    Ok((prop.negated_momentum(), rho_half))
}

/// Uncorrected reversal: negate, simulate, refresh via `s_rev`.
pub fn uncorrected_reversal<S: Scalar, B: BridgeDensity<S>, R: Rand>(
    p: &PhasePoint<S>,
    bridge: &B,
    cfg: &LeapfrogConfig<S>,
    momentum: &PreparedMomentum<S>,
    eta: S,
    rng: &mut R,
) -> Result<PhasePoint<S>, DynamicsError> {
    validate_eta(eta.value())?;
    let start = p.negated_momentum();
    let prop = simulate(&start, cfg, momentum, bridge)?;
    let (rho, _) = resample_momentum(&prop.rho, eta, momentum, rng);
    Ok(PhasePoint { z: prop.z, rho })
}
