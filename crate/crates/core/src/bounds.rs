//! Geometric bridging with learnable schedules and the four bound
//! generators: plain ELBO, importance weighting, corrected Hamiltonian
//! annealing, and the uncorrected (differentiable) variant.

use crate::dynamics::{
    corrected_transition, uncorrected_transition, BridgeDensity, DynamicsError, LeapfrogConfig,
    MomentumSpec, PhasePoint,
};
use crate::rng::{derive_seed, CounterRng, Rand};
use crate::scalar::{log_sum_exp, logit, sum_slice, Scalar};
use crate::targets::{MeanFieldGaussian, PreparedGaussian, Target};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

// ---------------------------------------------------------------------------
// Trainable parameter groups
// ---------------------------------------------------------------------------

/// One tunable parameter group of the annealed sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Q,
    Eps,
    Eta,
    Sigma,
    Beta,
    EpsOfBeta,
    PsiOfBeta,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Q,
        Group::Eps,
        Group::Eta,
        Group::Sigma,
        Group::Beta,
        Group::EpsOfBeta,
        Group::PsiOfBeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Q => "q",
            Group::Eps => "eps",
            Group::Eta => "eta",
            Group::Sigma => "sigma",
            Group::Beta => "beta",
            Group::EpsOfBeta => "eps_of_beta",
            Group::PsiOfBeta => "psi_of_beta",
        }
    }

    fn bit(self) -> u8 {
        match self {
            Group::Q => 1,
            Group::Eps => 2,
            Group::Eta => 4,
            Group::Sigma => 8,
            Group::Beta => 16,
            Group::EpsOfBeta => 32,
            Group::PsiOfBeta => 64,
        }
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Group::ALL
            .iter()
            .copied()
            .find(|g| g.name() == s)
            .ok_or_else(|| format!("unknown parameter group {s:?}"))
    }
}

/// Set of trainable groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GroupSet(u8);

impl GroupSet {
    pub fn empty() -> Self {
        GroupSet(0)
    }

    pub fn all() -> Self {
        Group::ALL.iter().copied().collect()
    }

    pub fn of(groups: &[Group]) -> Self {
        groups.iter().copied().collect()
    }

    pub fn contains(self, g: Group) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn insert(&mut self, g: Group) {
        self.0 |= g.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Group> {
        Group::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn names(self) -> Vec<&'static str> {
        self.iter().map(Group::name).collect()
    }

    pub fn from_names<I: IntoIterator<Item = impl AsRef<str>>>(names: I) -> Result<Self, String> {
        let mut set = GroupSet::empty();
        for n in names {
            set.insert(n.as_ref().parse()?);
        }
        Ok(set)
    }
}

impl FromIterator<Group> for GroupSet {
    fn from_iter<I: IntoIterator<Item = Group>>(iter: I) -> Self {
        let mut set = GroupSet::empty();
        for g in iter {
            set.insert(g);
        }
        set
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.names().join("+"))
    }
}

// ---------------------------------------------------------------------------
// Schedules and the full parameter set
// ---------------------------------------------------------------------------

/// Step size as an affine function of β, kept positive through softplus.
#[derive(Debug, Clone)]
pub struct AffineEps<S> {
    pub slope: S,
    pub intercept: S,
}

/// Bridge-family parameters ψ(β): per-coordinate affine maps for the
/// location and log-scale of the bridging Gaussian.
#[derive(Debug, Clone)]
pub struct AffinePsi<S> {
    pub loc_slope: Vec<S>,
    pub loc_intercept: Vec<S>,
    pub log_scale_slope: Vec<S>,
    pub log_scale_intercept: Vec<S>,
}

/// Learnable bridging path: unconstrained β increments plus the optional
/// affine ε(β) and ψ(β) refinements.
#[derive(Debug, Clone)]
pub struct BridgeSchedule<S> {
    /// Unconstrained vector of length M-1.
    pub raw_beta: Vec<S>,
    pub affine_eps: Option<AffineEps<S>>,
    pub affine_psi: Option<AffinePsi<S>>,
}

/// Realizes β from unconstrained increments: the cumulative sum of
/// `softmax(raw_beta ++ [0])` prefixed by 0 — strictly increasing from
/// exactly 0 to exactly 1, differentiable in `raw_beta`. Requires a
/// non-empty `raw_beta` (two or more states).
pub fn realize_beta<S: Scalar>(raw_beta: &[S]) -> Vec<S> {
    assert!(!raw_beta.is_empty(), "realize_beta needs at least one increment");
    // Shift by the max (including the appended 0) before exponentiating.
    let shift = raw_beta
        .iter()
        .map(|r| r.value())
        .fold(0.0f64, f64::max);
    let exps: Vec<S> = raw_beta.iter().map(|&r| (r - shift).exp()).collect();
    let appended = (-shift).exp();
    let total = sum_slice(&exps) + appended;

    let mut betas = Vec::with_capacity(raw_beta.len() + 2);
    betas.push(total.lift(0.0));
    let mut acc = exps[0] / total;
    betas.push(acc);
    for &e in &exps[1..] {
        acc = acc + e / total;
        betas.push(acc);
    }
    betas.push(total.lift(1.0));
    betas
}

/// The full tunable parameter set of the annealed sampler, in unconstrained
/// form. `M = raw_beta.len() + 1` states give `M - 1` bridging densities and
/// an oracle cost of `K = M` density evaluations per draw.
#[derive(Debug, Clone)]
pub struct AnnealParams<S> {
    pub q: MeanFieldGaussian<S>,
    pub momentum: MomentumSpec<S>,
    /// Realized ε = eps_max·sigmoid(raw_eps).
    pub raw_eps: S,
    /// Realized η = sigmoid(raw_eta), kept strictly inside (0, 1).
    pub raw_eta: S,
    pub schedule: BridgeSchedule<S>,
    pub eps_max: f64,
    pub n_leapfrog: usize,
    pub trainable: GroupSet,
}

impl<S: Scalar> AnnealParams<S> {
    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    /// Number of states M (bridging densities plus one).
    pub fn num_states(&self) -> usize {
        self.schedule.raw_beta.len() + 1
    }

    pub fn eta(&self) -> S {
        // The shrink keeps 1-η² positive even when the sigmoid saturates in
        // floating point.
        self.raw_eta.sigmoid() * (1.0 - 1e-9)
    }

    /// Step size for the bridge at `beta`: the affine schedule when present,
    /// otherwise the capped scalar.
    pub fn epsilon(&self, beta: S) -> S {
        match &self.schedule.affine_eps {
            Some(ae) => (ae.slope * beta + ae.intercept).softplus(),
            None => self.raw_eps.sigmoid() * self.eps_max,
        }
    }

    /// Realized β of length M+1 (endpoints exactly 0 and 1).
    pub fn betas(&self) -> Vec<S> {
        if self.schedule.raw_beta.is_empty() {
            vec![self.raw_eps.lift(0.0), self.raw_eps.lift(1.0)]
        } else {
            realize_beta(&self.schedule.raw_beta)
        }
    }

    /// The initial-family Gaussian used by the bridge at `beta`: ψ(β) when
    /// the affine family is active, otherwise `q` itself.
    pub fn bridge_q(&self, beta: S) -> MeanFieldGaussian<S> {
        match &self.schedule.affine_psi {
            Some(psi) => MeanFieldGaussian {
                loc: (0..self.dim())
                    .map(|i| psi.loc_slope[i] * beta + psi.loc_intercept[i])
                    .collect(),
                log_scale: (0..self.dim())
                    .map(|i| psi.log_scale_slope[i] * beta + psi.log_scale_intercept[i])
                    .collect(),
            },
            None => self.q.clone(),
        }
    }
}

impl AnnealParams<f64> {
    /// Default initialization: standard-normal q and momentum, ε = 0.1,
    /// η = 0.5, uniform β, no affine refinements.
    pub fn new(dim: usize, num_states: usize) -> Self {
        assert!(dim >= 1 && num_states >= 1);
        let eps_max = 0.5;
        AnnealParams {
            q: MeanFieldGaussian::standard(dim),
            momentum: MomentumSpec::identity(dim),
            raw_eps: logit(0.1 / eps_max),
            raw_eta: 0.0,
            schedule: BridgeSchedule {
                raw_beta: vec![0.0; num_states - 1],
                affine_eps: None,
                affine_psi: None,
            },
            eps_max,
            n_leapfrog: 1,
            trainable: GroupSet::empty(),
        }
    }

    /// The capped scalar step size, regardless of any affine ε(β) schedule.
    pub fn realized_epsilon(&self) -> f64 {
        crate::scalar::stable_sigmoid(self.raw_eps) * self.eps_max
    }

    pub fn realized_eta(&self) -> f64 {
        self.eta()
    }

    pub fn realized_betas(&self) -> Vec<f64> {
        self.betas()
    }

    /// Re-encodes a realized scalar step size through the sigmoid cap.
    pub fn set_epsilon(&mut self, eps: f64) {
        let ratio = (eps / self.eps_max).clamp(1e-12, 1.0 - 1e-12);
        self.raw_eps = logit(ratio);
    }

    pub fn set_eta(&mut self, eta: f64) {
        self.raw_eta = logit(eta.clamp(1e-12, 1.0 - 1e-12));
    }

    /// Re-encodes a realized β sequence (strictly increasing, endpoints 0
    /// and 1) back into unconstrained increments.
    pub fn set_betas(&mut self, betas: &[f64]) {
        let m = betas.len() - 1;
        assert!(m >= 1, "need at least two grid points");
        let incs: Vec<f64> = (1..=m).map(|i| betas[i] - betas[i - 1]).collect();
        assert!(incs.iter().all(|&x| x > 0.0), "betas must be strictly increasing");
        let last = incs[m - 1];
        self.schedule.raw_beta = incs[..m - 1].iter().map(|&x| (x / last).ln()).collect();
    }

    /// Makes sure the parameter vectors selected by `groups` exist, seeding
    /// affine schedules so that they initially reproduce the plain path:
    /// ε(β) starts constant at the realized ε, ψ(β) starts constant at q.
    pub fn ensure_groups(&mut self, groups: GroupSet) {
        if groups.contains(Group::EpsOfBeta) && self.schedule.affine_eps.is_none() {
            self.schedule.affine_eps = Some(AffineEps {
                slope: 0.0,
                intercept: crate::scalar::inverse_softplus(self.realized_epsilon()),
            });
        }
        if groups.contains(Group::PsiOfBeta) && self.schedule.affine_psi.is_none() {
            self.schedule.affine_psi = Some(AffinePsi {
                loc_slope: vec![0.0; self.dim()],
                loc_intercept: self.q.loc.clone(),
                log_scale_slope: vec![0.0; self.dim()],
                log_scale_intercept: self.q.log_scale.clone(),
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Geometric bridge
// ---------------------------------------------------------------------------

/// `π̃_m(z) ∝ q_•(z)^{1-β_m} · p̃(z)^{β_m}` for one fixed β.
pub struct GeometricBridge<'a, S, T> {
    q: PreparedGaussian<S>,
    target: &'a T,
    beta: S,
    one_minus_beta: S,
}

impl<'a, S: Scalar, T: Target> GeometricBridge<'a, S, T> {
    pub fn new(params: &AnnealParams<S>, target: &'a T, beta: S) -> Self {
        Self::with_prepared_q(params.bridge_q(beta).prepared(), target, beta)
    }

    /// Reuses an already-prepared initial family (only valid when ψ(β) is
    /// absent, so the family does not depend on β).
    pub fn with_prepared_q(q: PreparedGaussian<S>, target: &'a T, beta: S) -> Self {
        GeometricBridge {
            q,
            target,
            beta,
            one_minus_beta: -beta + 1.0,
        }
    }
}

impl<S: Scalar, T: Target> BridgeDensity<S> for GeometricBridge<'_, S, T> {
    fn log_density(&self, z: &[S]) -> S {
        self.one_minus_beta * self.q.log_density(z) + self.beta * self.target.log_density(z)
    }

    fn grad_log_density(&self, z: &[S]) -> Vec<S> {
        let gq = self.q.grad_log_density(z);
        let gt = self.target.grad_log_density(z);
        (0..z.len())
            .map(|i| self.one_minus_beta * gq[i] + self.beta * gt[i])
            .collect()
    }
}

/// `(1-β)·log q_•(z) + β·log p̃(z)`, differentiable in everything.
pub fn bridge_log_density<S: Scalar, T: Target>(
    z: &[S],
    beta: S,
    params: &AnnealParams<S>,
    target: &T,
) -> S {
    GeometricBridge::new(params, target, beta).log_density(z)
}

// ---------------------------------------------------------------------------
// Bound draws
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Uha,
    Hais,
    Iw,
}

/// One estimator draw in whatever scalar backend it was run with. `total` is
/// the root to differentiate when `S` is a tape value.
#[derive(Debug, Clone)]
pub struct BoundDraw<S> {
    pub kind: BoundKind,
    pub total: S,
    pub init_term: S,
    pub increments: Vec<S>,
    pub final_term: S,
    pub accept_flags: Option<Vec<bool>>,
    pub z_final: Vec<S>,
}

impl<S: Scalar> BoundDraw<S> {
    /// Plain-data record of this draw.
    pub fn into_run(self, seed: u64) -> BoundRun {
        BoundRun {
            kind: self.kind,
            value: self.total.value(),
            init_term: self.init_term.value(),
            increments: self.increments.iter().map(|x| x.value()).collect(),
            final_term: self.final_term.value(),
            accept_flags: self.accept_flags,
            seed,
        }
    }
}

/// One estimator draw: the bound value, the per-bridge log-ratio terms it was
/// assembled from, acceptance statistics (corrected kernels only), and the
/// seed that produced it.
#[derive(Debug, Clone)]
pub struct BoundRun {
    pub kind: BoundKind,
    pub value: f64,
    pub init_term: f64,
    pub increments: Vec<f64>,
    pub final_term: f64,
    pub accept_flags: Option<Vec<bool>>,
    pub seed: u64,
}

impl BoundRun {
    /// Rebuilds `value` from its parts, following the exact accumulation
    /// order of the sampler; bit-equal to `value` by construction.
    pub fn reconstruct(&self) -> f64 {
        match self.kind {
            BoundKind::Uha | BoundKind::Hais => {
                let mut total = self.init_term;
                for &inc in &self.increments {
                    total += inc;
                }
                total + self.final_term
            }
            BoundKind::Iw => {
                let k = self.increments.len();
                log_sum_exp(&self.increments) - (k as f64).ln()
            }
        }
    }

    pub fn rejection_rate(&self) -> Option<f64> {
        self.accept_flags.as_ref().map(|flags| {
            if flags.is_empty() {
                0.0
            } else {
                flags.iter().filter(|&&a| !a).count() as f64 / flags.len() as f64
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// One draw of the uncorrected annealed bound (differentiable when `S` is a
/// tape value): start at `-log q(z_1)`, add `log S(ρ_{m+1}) - log S(ρ'_m)`
/// per bridge, finish with `+log p̃(z_M)`. The momentum terms for the two
/// endpoints cancel analytically and never appear.
pub fn uha_bound<S: Scalar, T: Target, R: Rand>(
    params: &AnnealParams<S>,
    target: &T,
    rng: &mut R,
) -> Result<BoundDraw<S>, DynamicsError> {
    assert_eq!(params.dim(), target.dim(), "dimension mismatch");
    let m = params.num_states();
    let q = params.q.prepared();
    let momentum = params.momentum.prepared();

    let (z1, _) = q.sample(rng);
    let (rho1, _) = momentum.sample(rng);
    let init_term = -q.log_density(&z1);
    let mut total = init_term;

    let mut state = PhasePoint::new(z1, rho1);
    let mut increments = Vec::with_capacity(m - 1);
    if m > 1 {
        let betas = params.betas();
        let eta = params.eta();
        let shared_q = params.schedule.affine_psi.is_none().then(|| q.clone());
        for bridge_idx in 1..m {
            let beta = betas[bridge_idx];
            let cfg = LeapfrogConfig {
                step_size: params.epsilon(beta),
                n_steps: params.n_leapfrog,
            };
            let bridge = match &shared_q {
                Some(q) => GeometricBridge::with_prepared_q(q.clone(), target, beta),
                None => GeometricBridge::new(params, target, beta),
            };
            let (next, rho_half) =
                uncorrected_transition(&state, &bridge, &cfg, &momentum, eta, rng)?;
            let inc = momentum.log_density(&next.rho) - momentum.log_density(&rho_half);
            total = total + inc;
            increments.push(inc);
            state = next;
        }
    }

    let final_term = target.log_density(&state.z);
    total = total + final_term;
    Ok(BoundDraw {
        kind: BoundKind::Uha,
        total,
        init_term,
        increments,
        final_term,
        accept_flags: None,
        z_final: state.z,
    })
}

/// One draw of the corrected (accept-reject) annealed bound. Not
/// differentiable, so it only runs on plain floats.
pub fn hais_bound<T: Target, R: Rand>(
    params: &AnnealParams<f64>,
    target: &T,
    rng: &mut R,
) -> Result<BoundDraw<f64>, DynamicsError> {
    assert_eq!(params.dim(), target.dim(), "dimension mismatch");
    let m = params.num_states();
    let q = params.q.prepared();
    let momentum = params.momentum.prepared();

    let (z1, _) = q.sample(rng);
    let (rho1, _) = momentum.sample(rng);
    let init_term = -(q.log_density(&z1) + momentum.log_density(&rho1));
    let mut total = init_term;

    let mut state = PhasePoint::new(z1, rho1);
    let mut increments = Vec::with_capacity(m - 1);
    let mut accept_flags = Vec::with_capacity(m - 1);
    if m > 1 {
        let betas = params.betas();
        let eta = params.eta();
        let shared_q = params.schedule.affine_psi.is_none().then(|| q.clone());
        for bridge_idx in 1..m {
            let beta = betas[bridge_idx];
            let cfg = LeapfrogConfig {
                step_size: params.epsilon(beta),
                n_steps: params.n_leapfrog,
            };
            let bridge = match &shared_q {
                Some(q) => GeometricBridge::with_prepared_q(q.clone(), target, beta),
                None => GeometricBridge::new(params, target, beta),
            };
            let step = corrected_transition(&state, &bridge, &cfg, &momentum, eta, rng)?;
            let inc = (step.log_bridge_z_in + momentum.log_density(&state.rho))
                - (step.log_bridge_z_out + momentum.log_density(&step.state.rho));
            total += inc;
            increments.push(inc);
            accept_flags.push(step.accepted);
            state = step.state;
        }
    }

    let final_term = target.log_density(&state.z) + momentum.log_density(&state.rho);
    total += final_term;
    Ok(BoundDraw {
        kind: BoundKind::Hais,
        total,
        init_term,
        increments,
        final_term,
        accept_flags: Some(accept_flags),
        z_final: state.z,
    })
}

/// One draw of the importance-weighted bound: `log (1/K) Σ_k p̃(z_k)/q(z_k)`
/// over K reparameterized samples, aggregated with max-shifted log-sum-exp.
pub fn iw_bound<S: Scalar, T: Target, R: Rand>(
    q: &MeanFieldGaussian<S>,
    target: &T,
    k: usize,
    rng: &mut R,
) -> BoundDraw<S> {
    assert!(k >= 1);
    assert_eq!(q.dim(), target.dim(), "dimension mismatch");
    let q = q.prepared();
    let mut log_weights = Vec::with_capacity(k);
    let mut z_last = Vec::new();
    for _ in 0..k {
        let (z, _) = q.sample(rng);
        log_weights.push(target.log_density(&z) - q.log_density(&z));
        z_last = z;
    }
    let total = log_sum_exp(&log_weights) - (k as f64).ln();
    BoundDraw {
        kind: BoundKind::Iw,
        total,
        init_term: total.lift(0.0),
        increments: log_weights,
        final_term: total.lift(0.0),
        accept_flags: None,
        z_final: z_last,
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct BoundStats {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub diverged: usize,
    /// Set when more than 1% of draws diverged.
    pub unreliable: bool,
}

impl BoundStats {
    /// Pooled mean and standard error of several independent estimates.
    pub fn pool(stats: &[BoundStats]) -> BoundStats {
        assert!(!stats.is_empty());
        let s = stats.len() as f64;
        let mean = stats.iter().map(|x| x.mean).sum::<f64>() / s;
        let stderr = stats.iter().map(|x| x.stderr * x.stderr).sum::<f64>().sqrt() / s;
        BoundStats {
            mean,
            stderr,
            n: stats.iter().map(|x| x.n).sum(),
            diverged: stats.iter().map(|x| x.diverged).sum(),
            unreliable: stats.iter().any(|x| x.unreliable),
        }
    }
}

/// Runs `n_draws` independent draws of `sampler` on seeds derived from
/// `base_seed` and returns the sample mean and standard error. Draws fan out
/// across the rayon pool; the reduction is a sequential pass over the
/// seed-ordered values, so results do not depend on worker count. Diverged
/// draws are excluded and counted.
pub fn estimate_bound<F>(sampler: F, n_draws: usize, base_seed: u64) -> BoundStats
where
    F: Fn(u64) -> Result<BoundRun, DynamicsError> + Sync,
{
    assert!(n_draws >= 2, "need at least two draws for a standard error");
    let values: Vec<Option<f64>> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, &[("draw", i as u64)]);
            sampler(seed).ok().map(|run| run.value)
        })
        .collect();

    let mut n = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut diverged = 0usize;
    for v in values {
        match v {
            Some(x) => {
                n += 1;
                let delta = x - mean;
                mean += delta / n as f64;
                m2 += delta * (x - mean);
            }
            None => diverged += 1,
        }
    }
    let stderr = if n >= 2 {
        (m2 / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        f64::NAN
    };
    BoundStats {
        mean,
        stderr,
        n,
        diverged,
        unreliable: diverged * 100 > n_draws,
    }
}

/// Convenience wrapper: evaluates one of the bound samplers with per-draw
/// derived seeds.
pub fn evaluate_uha<T: Target>(
    params: &AnnealParams<f64>,
    target: &T,
    n_draws: usize,
    base_seed: u64,
) -> BoundStats {
    estimate_bound(
        |seed| {
            let mut rng = CounterRng::from_seed(seed);
            uha_bound(params, target, &mut rng).map(|d| d.into_run(seed))
        },
        n_draws,
        base_seed,
    )
}

pub fn evaluate_hais<T: Target>(
    params: &AnnealParams<f64>,
    target: &T,
    n_draws: usize,
    base_seed: u64,
) -> BoundStats {
    estimate_bound(
        |seed| {
            let mut rng = CounterRng::from_seed(seed);
            hais_bound(params, target, &mut rng).map(|d| d.into_run(seed))
        },
        n_draws,
        base_seed,
    )
}

pub fn evaluate_iw<T: Target>(
    q: &MeanFieldGaussian<f64>,
    target: &T,
    k: usize,
    n_draws: usize,
    base_seed: u64,
) -> BoundStats {
    estimate_bound(
        |seed| {
            let mut rng = CounterRng::from_seed(seed);
            Ok(iw_bound(q, target, k, &mut rng).into_run(seed))
        },
        n_draws,
        base_seed,
    )
}

/// Mean rejection rate across all bridges of `n_draws` corrected runs.
pub fn hais_rejection_rate<T: Target>(
    params: &AnnealParams<f64>,
    target: &T,
    n_draws: usize,
    base_seed: u64,
) -> Result<f64, DynamicsError> {
    let mut rejected = 0usize;
    let mut transitions = 0usize;
    for i in 0..n_draws {
        let seed = derive_seed(base_seed, &[("pilot", i as u64)]);
        let mut rng = CounterRng::from_seed(seed);
        let draw = hais_bound(params, target, &mut rng)?;
        if let Some(flags) = &draw.accept_flags {
            transitions += flags.len();
            rejected += flags.iter().filter(|&&a| !a).count();
        }
    }
    if transitions == 0 {
        return Ok(0.0);
    }
    Ok(rejected as f64 / transitions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::stable_softplus;
    use crate::targets::{DiagGaussian, StudentT, HALF_LN_2PI};

    #[test]
    fn realize_beta_uniform_and_softmax_cases() {
        // All-zero raw increments give the uniform grid.
        let betas = realize_beta(&[0.0, 0.0, 0.0]);
        let expected = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (b, e) in betas.iter().zip(expected) {
            assert!((b - e).abs() < 1e-15, "{betas:?}");
        }

        // softmax(ln 3, 0, 0) = (0.6, 0.2, 0.2).
        let betas = realize_beta(&[3.0f64.ln(), 0.0]);
        let expected = [0.0, 0.6, 0.8, 1.0];
        for (b, e) in betas.iter().zip(expected) {
            assert!((b - e).abs() < 1e-12, "{betas:?}");
        }
    }

    #[test]
    fn realize_beta_monotone_with_exact_endpoints() {
        let mut rng = CounterRng::from_seed(12);
        for _ in 0..50 {
            let m = 2 + (rng.next_u64() % 30) as usize;
            let raw: Vec<f64> = (0..m - 1).map(|_| 4.0 * rng.standard_normal()).collect();
            let betas = realize_beta(&raw);
            assert_eq!(betas.len(), m + 1);
            assert_eq!(betas[0], 0.0);
            assert_eq!(betas[m], 1.0);
            for w in betas.windows(2) {
                assert!(w[0] < w[1], "not strictly increasing: {betas:?}");
            }
        }
    }

    /// Unnormalized Gaussian bump `exp(-(z-1)²/2)` used by the bridge tests.
    struct Bump;
    impl Target for Bump {
        fn dim(&self) -> usize {
            1
        }
        fn log_density<S: Scalar>(&self, z: &[S]) -> S {
            let d = z[0] - 1.0;
            d * d * -0.5
        }
        fn grad_log_density<S: Scalar>(&self, z: &[S]) -> Vec<S> {
            vec![-(z[0] - 1.0)]
        }
    }

    #[test]
    fn bridge_endpoints_and_midpoint() {
        let params = AnnealParams::new(1, 4);
        let z = [0.0f64];
        let lq = params.q.log_density(&z);
        let lp = Bump.log_density(&z);
        assert_eq!(bridge_log_density(&z, 0.0, &params, &Bump), lq);
        assert_eq!(bridge_log_density(&z, 1.0, &params, &Bump), lp);

        let mid = bridge_log_density(&z, 0.5, &params, &Bump);
        assert!((mid - (-0.7094693)).abs() < 1e-7, "{mid}");
        assert!((mid - 0.5 * (lq + lp)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_affine_psi_matches_plain_path() {
        let mut with_psi = AnnealParams::new(3, 6);
        with_psi.q.loc = vec![0.3, -0.7, 1.1];
        with_psi.q.log_scale = vec![0.1, -0.2, 0.0];
        let plain = with_psi.clone();
        with_psi.ensure_groups(GroupSet::of(&[Group::PsiOfBeta]));

        let mut rng = CounterRng::from_seed(3);
        for _ in 0..20 {
            let beta = rng.uniform();
            let z: Vec<f64> = rng.normals(3);
            let a = bridge_log_density(&z, beta, &with_psi, &Bump);
            let b = bridge_log_density(&z, beta, &plain, &Bump);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_eps_schedule_is_softplus_of_affine() {
        let mut params = AnnealParams::new(1, 4);
        params.schedule.affine_eps = Some(AffineEps {
            slope: 0.8,
            intercept: -1.2,
        });
        for &beta in &[0.0, 0.3, 1.0] {
            let expected = stable_softplus(0.8 * beta - 1.2);
            assert!((params.epsilon(beta) - expected).abs() < 1e-15);
            assert!(params.epsilon(beta) > 0.0);
        }
        // ensure_groups seeds the schedule at the scalar ε.
        let mut p2 = AnnealParams::new(1, 4);
        let eps0 = p2.realized_epsilon();
        p2.ensure_groups(GroupSet::of(&[Group::EpsOfBeta]));
        assert!((p2.epsilon(0.37) - eps0).abs() < 1e-12);
    }

    #[test]
    fn single_state_bound_is_the_elbo_draw() {
        let params = AnnealParams::new(2, 1);
        let target = StudentT::new(2, 3.0).unwrap();
        let mut rng = CounterRng::from_seed(40);
        let draw = uha_bound(&params, &target, &mut rng).unwrap();
        assert!(draw.increments.is_empty());

        let mut rng = CounterRng::from_seed(40);
        let (z, _) = params.q.sample(&mut rng);
        let elbo = target.log_density(&z) - params.q.log_density(&z);
        assert!((draw.total - elbo).abs() < 1e-15);
    }

    #[test]
    fn bound_is_exactly_zero_when_q_equals_target() {
        let params = AnnealParams::new(3, 1);
        let target = DiagGaussian::standard(3);
        for seed in 0..50u64 {
            let mut rng = CounterRng::from_seed(seed);
            let draw = uha_bound(&params, &target, &mut rng).unwrap();
            assert_eq!(draw.total, 0.0);

            let mut rng = CounterRng::from_seed(seed);
            let draw = iw_bound(&params.q, &target, 7, &mut rng);
            assert_eq!(draw.total, 0.0);
        }
    }

    #[test]
    fn k1_collapse_across_methods() {
        let mut params = AnnealParams::new(5, 1);
        params.q.loc = vec![0.2, -0.1, 0.5, 0.0, 1.0];
        params.q.log_scale = vec![0.1, 0.0, -0.3, 0.2, 0.0];
        let target = StudentT::new(5, 3.0).unwrap();
        for seed in 0..20u64 {
            let mut r1 = CounterRng::from_seed(seed);
            let mut r2 = CounterRng::from_seed(seed);
            let mut r3 = CounterRng::from_seed(seed);
            let u = uha_bound(&params, &target, &mut r1).unwrap().total;
            let h = hais_bound(&params, &target, &mut r2).unwrap().total;
            let w = iw_bound(&params.q, &target, 1, &mut r3).total;
            assert_eq!(u.to_bits(), w.to_bits(), "uha vs iw");
            assert!((u - h).abs() < 1e-12, "uha {u} vs hais {h}");
        }
    }

    #[test]
    fn telescoping_identity_reconstructs_bit_exactly() {
        let mut params = AnnealParams::new(3, 8);
        params.set_eta(0.7);
        params.set_epsilon(0.15);
        let target = StudentT::new(3, 3.0).unwrap();
        for seed in 0..30u64 {
            let mut rng = CounterRng::from_seed(seed);
            let run = uha_bound(&params, &target, &mut rng)
                .unwrap()
                .into_run(seed);
            assert_eq!(run.value.to_bits(), run.reconstruct().to_bits());

            let mut rng = CounterRng::from_seed(seed);
            let run = hais_bound(&params, &target, &mut rng)
                .unwrap()
                .into_run(seed);
            assert_eq!(run.value.to_bits(), run.reconstruct().to_bits());

            let mut rng = CounterRng::from_seed(seed);
            let run = iw_bound(&params.q, &target, 9, &mut rng).into_run(seed);
            assert_eq!(run.value.to_bits(), run.reconstruct().to_bits());
        }
    }

    #[test]
    fn estimate_bound_on_constant_and_exact_samplers() {
        let stats = estimate_bound(
            |seed| {
                Ok(BoundRun {
                    kind: BoundKind::Uha,
                    value: 2.5,
                    init_term: 2.5,
                    increments: vec![],
                    final_term: 0.0,
                    accept_flags: None,
                    seed,
                })
            },
            100,
            0,
        );
        assert_eq!(stats.mean, 2.5);
        assert_eq!(stats.stderr, 0.0);
        assert_eq!(stats.n, 100);

        let params = AnnealParams::new(2, 1);
        let target = DiagGaussian::standard(2);
        let stats = evaluate_uha(&params, &target, 100, 7);
        assert_eq!(stats.mean, 0.0);
        assert_eq!(stats.stderr, 0.0);
    }

    #[test]
    fn estimate_bound_flags_unreliable_on_divergences() {
        let stats = estimate_bound(
            |seed| {
                if seed % 8 == 0 {
                    Err(DynamicsError::CoordinateOverflow { step: 0 })
                } else {
                    Ok(BoundRun {
                        kind: BoundKind::Uha,
                        value: 1.0,
                        init_term: 1.0,
                        increments: vec![],
                        final_term: 0.0,
                        accept_flags: None,
                        seed,
                    })
                }
            },
            200,
            3,
        );
        assert!(stats.diverged > 0);
        assert!(stats.unreliable);
        assert_eq!(stats.n + stats.diverged, 200);
    }

    #[test]
    fn stderr_shrinks_like_sqrt_n() {
        // Shifted q against a Gaussian target gives light-tailed draws, so
        // the sample stderr itself is stable enough to compare.
        let mut params = AnnealParams::new(2, 1);
        params.q.loc = vec![0.5, -0.5];
        let target = DiagGaussian::standard(2);
        let small = evaluate_uha(&params, &target, 500, 11);
        let large = evaluate_uha(&params, &target, 8000, 11);
        let ratio = small.stderr / large.stderr;
        let expected = (8000.0f64 / 500.0).sqrt();
        assert!(
            (ratio / expected - 1.0).abs() < 0.2,
            "ratio {ratio}, expected ~{expected}"
        );
    }

    #[test]
    fn group_set_round_trip() {
        let set = GroupSet::from_names(["q", "eps", "psi_of_beta"]).unwrap();
        assert!(set.contains(Group::Q));
        assert!(set.contains(Group::PsiOfBeta));
        assert!(!set.contains(Group::Beta));
        assert_eq!(set.to_string(), "q+eps+psi_of_beta");
        assert!(GroupSet::from_names(["nope"]).is_err());
        assert_eq!(GroupSet::all().iter().count(), 7);
    }

    #[test]
    fn set_betas_round_trips_realized_values() {
        let mut params = AnnealParams::new(1, 6);
        let betas = vec![0.0, 0.1, 0.35, 0.4, 0.8, 1.0];
        params.set_betas(&betas);
        let realized = params.realized_betas();
        for (r, b) in realized.iter().zip(&betas) {
            assert!((r - b).abs() < 1e-12, "{realized:?}");
        }
    }

    #[test]
    fn momentum_terms_cancel_against_explicit_form() {
        // Running the uncorrected chain but accounting momentum endpoints
        // explicitly (-log q(z,ρ) start, +log p̃(z,ρ) end with the S-ratio
        // increments) must give the same value as the analytic cancellation.
        let mut params = AnnealParams::new(2, 5);
        params.set_eta(0.3);
        let target = StudentT::new(2, 3.0).unwrap();
        let seed = 99;

        let mut rng = CounterRng::from_seed(seed);
        let streamlined = uha_bound(&params, &target, &mut rng).unwrap();

        // Explicit replay with endpoint momentum terms.
        let mut rng = CounterRng::from_seed(seed);
        let momentum = params.momentum.prepared();
        let (z1, _) = params.q.prepared().sample(&mut rng);
        let (rho1, _) = momentum.sample(&mut rng);
        let mut value = -(params.q.log_density(&z1) + momentum.log_density(&rho1));
        let betas = params.realized_betas();
        let eta = params.realized_eta();
        let mut state = PhasePoint::new(z1, rho1);
        for i in 1..params.num_states() {
            let bridge = GeometricBridge::new(&params, &target, betas[i]);
            let cfg = LeapfrogConfig {
                step_size: params.epsilon(betas[i]),
                n_steps: 1,
            };
            let (next, rho_half) =
                uncorrected_transition(&state, &bridge, &cfg, &momentum, eta, &mut rng)
                    .unwrap();
            // log S(ρ_m) - log S(ρ'_m): the reversal/forward refresh ratio.
            value += momentum.log_density(&state.rho) - momentum.log_density(&rho_half);
            state = next;
        }
        value += target.log_density(&state.z) + momentum.log_density(&state.rho);

        assert!(
            (value - streamlined.total).abs() < 1e-10,
            "explicit {value} vs streamlined {}",
            streamlined.total
        );
    }

    #[test]
    fn bridge_density_gaussian_value() {
        // Sanity pin for HALF_LN_2PI used across the module.
        assert!((HALF_LN_2PI - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }
}
