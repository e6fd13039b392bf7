//! Unnormalized target log-densities, the mean-field Gaussian variational
//! family, and dataset-backed logistic-regression posteriors.
//!
//! Densities are written once over [`Scalar`], and each target also exposes
//! its closed-form position gradient in the same generic form so transition
//! kernels can be unrolled onto a tape and differentiated end to end.

mod libsvm;

pub use libsvm::{parse_libsvm, serialize_libsvm, ParseError, SparseDataset, SparseRow};

use crate::rng::Rand;
use crate::scalar::Scalar;
use thiserror::Error;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("degrees of freedom must be positive, got {0}")]
    BadNu(f64),
    #[error("scale entries must be strictly positive")]
    BadScale,
    #[error("dimension must be at least 1")]
    ZeroDim,
}

/// Reference first and second moments of a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var_diag: Vec<f64>,
}

/// An unnormalized log-density over `R^dim` with an analytic position
/// gradient expressible in tape primitives.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn log_density<S: Scalar>(&self, z: &[S]) -> S;

    /// `∇_z log p̃(z)`, written in the same primitives as `log_density` so it
    /// stays differentiable with respect to anything feeding into `z`.
    fn grad_log_density<S: Scalar>(&self, z: &[S]) -> Vec<S>;

    /// `log Z` when known (normalized synthetic targets).
    fn known_log_z(&self) -> Option<f64> {
        None
    }

    fn known_moments(&self) -> Option<Moments> {
        None
    }
}

// ---------------------------------------------------------------------------
// Mean-field Gaussian variational family
// ---------------------------------------------------------------------------

/// Diagonal Gaussian parameterized by location and log-scale. Scales
/// `exp(log_scale)` are positive by construction, and sampling always goes
/// through the reparameterized path `z = loc + exp(log_scale)·ξ`.
#[derive(Debug, Clone)]
pub struct MeanFieldGaussian<S> {
    pub loc: Vec<S>,
    pub log_scale: Vec<S>,
}

impl MeanFieldGaussian<f64> {
    /// Standard normal of the given dimension.
    pub fn standard(dim: usize) -> Self {
        MeanFieldGaussian {
            loc: vec![0.0; dim],
            log_scale: vec![0.0; dim],
        }
    }
}

impl<S: Scalar> MeanFieldGaussian<S> {
    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn log_density(&self, z: &[S]) -> S {
        gaussian_log_density(z, self)
    }

    /// `∇_z log q(z) = -(z - loc)·exp(-2·log_scale)`.
    pub fn grad_log_density(&self, z: &[S]) -> Vec<S> {
        assert_eq!(z.len(), self.dim(), "dimension mismatch");
        (0..z.len())
            .map(|i| -((z[i] - self.loc[i]) * (self.log_scale[i] * -2.0).exp()))
            .collect()
    }

    /// Deterministic transform of pre-drawn standard normal noise.
    pub fn reparameterize(&self, xi: &[f64]) -> Vec<S> {
        assert_eq!(xi.len(), self.dim(), "dimension mismatch");
        (0..xi.len())
            .map(|i| self.loc[i] + self.log_scale[i].exp() * xi[i])
            .collect()
    }

    /// Draws `ξ ~ N(0, I)` and returns `(loc + exp(log_scale)·ξ, ξ)` so the
    /// same draw can be replayed on a tape.
    pub fn sample<R: Rand>(&self, rng: &mut R) -> (Vec<S>, Vec<f64>) {
        let xi = rng.normals(self.dim());
        (self.reparameterize(&xi), xi)
    }

    /// Caches the exponentials of `log_scale` so repeated density and
    /// sampling calls within one draw share those nodes instead of
    /// re-recording them. Values are bit-identical to the direct methods.
    pub fn prepared(&self) -> PreparedGaussian<S> {
        PreparedGaussian {
            scale: self.log_scale.iter().map(|&ls| ls.exp()).collect(),
            inv_scale: self.log_scale.iter().map(|&ls| (-ls).exp()).collect(),
            inv_var: self.log_scale.iter().map(|&ls| (ls * -2.0).exp()).collect(),
            loc: self.loc.clone(),
            log_scale: self.log_scale.clone(),
        }
    }
}

/// A mean-field Gaussian with its scale exponentials precomputed.
#[derive(Debug, Clone)]
pub struct PreparedGaussian<S> {
    pub loc: Vec<S>,
    pub log_scale: Vec<S>,
    scale: Vec<S>,
    inv_scale: Vec<S>,
    inv_var: Vec<S>,
}

impl<S: Scalar> PreparedGaussian<S> {
    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn log_density(&self, z: &[S]) -> S {
        assert_eq!(z.len(), self.dim(), "dimension mismatch");
        let mut total = z[0].lift(0.0);
        for i in 0..z.len() {
            let standardized = (z[i] - self.loc[i]) * self.inv_scale[i];
            total = total - self.log_scale[i] - HALF_LN_2PI - standardized * standardized * 0.5;
        }
        total
    }

    pub fn grad_log_density(&self, z: &[S]) -> Vec<S> {
        assert_eq!(z.len(), self.dim(), "dimension mismatch");
        (0..z.len())
            .map(|i| -((z[i] - self.loc[i]) * self.inv_var[i]))
            .collect()
    }

    pub fn reparameterize(&self, xi: &[f64]) -> Vec<S> {
        assert_eq!(xi.len(), self.dim(), "dimension mismatch");
        (0..xi.len())
            .map(|i| self.loc[i] + self.scale[i] * xi[i])
            .collect()
    }

    pub fn sample<R: Rand>(&self, rng: &mut R) -> (Vec<S>, Vec<f64>) {
        let xi = rng.normals(self.dim());
        (self.reparameterize(&xi), xi)
    }
}

/// `Σ_i [ -log_scale_i - ½·ln 2π - ½·((z_i - loc_i)/exp(log_scale_i))² ]`,
/// differentiable in `z`, `loc`, and `log_scale`.
pub fn gaussian_log_density<S: Scalar>(z: &[S], q: &MeanFieldGaussian<S>) -> S {
    assert_eq!(z.len(), q.dim(), "dimension mismatch");
    let mut total = z[0].lift(0.0);
    for i in 0..z.len() {
        let standardized = (z[i] - q.loc[i]) * (-q.log_scale[i]).exp();
        total = total - q.log_scale[i] - HALF_LN_2PI - standardized * standardized * 0.5;
    }
    total
}

// ---------------------------------------------------------------------------
// Factorized Student-t
// ---------------------------------------------------------------------------

/// Factorized Student-t with location 0 and scale 1. Normalized, so
/// `known_log_z = 0`.
#[derive(Debug, Clone)]
pub struct StudentT {
    dim: usize,
    nu: f64,
    /// Per-factor log normalizer `lgamma((ν+1)/2) - lgamma(ν/2) - ½·ln(νπ)`.
    log_norm: f64,
}

impl StudentT {
    pub fn new(dim: usize, nu: f64) -> Result<Self, TargetError> {
        if !(nu > 0.0) {
            return Err(TargetError::BadNu(nu));
        }
        if dim == 0 {
            return Err(TargetError::ZeroDim);
        }
        let log_norm = libm::lgamma((nu + 1.0) / 2.0)
            - libm::lgamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln();
        Ok(StudentT { dim, nu, log_norm })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// `Σ_i [ c(ν) - ((ν+1)/2)·ln(1 + z_i²/ν) ]` with the constant `c(ν)` kept
/// off the tape.
pub fn student_t_log_density<S: Scalar>(z: &[S], t: &StudentT) -> S {
    assert_eq!(z.len(), t.dim, "dimension mismatch");
    let scale = -(t.nu + 1.0) * 0.5;
    let mut total = (z[0] * z[0] / t.nu + 1.0).ln() * scale + t.log_norm;
    for zi in &z[1..] {
        total = total + (*zi * *zi / t.nu + 1.0).ln() * scale + t.log_norm;
    }
    total
}

impl Target for StudentT {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density<S: Scalar>(&self, z: &[S]) -> S {
        student_t_log_density(z, self)
    }

    /// Per coordinate: `-(ν+1)·z / (ν + z²)`.
    fn grad_log_density<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        assert_eq!(z.len(), self.dim, "dimension mismatch");
        z.iter()
            .map(|&zi| zi * (-(self.nu + 1.0)) / (zi * zi + self.nu))
            .collect()
    }

    fn known_log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn known_moments(&self) -> Option<Moments> {
        // Mean exists for ν > 1, variance ν/(ν-2) for ν > 2.
        if self.nu <= 2.0 {
            return None;
        }
        Some(Moments {
            mean: vec![0.0; self.dim],
            var_diag: vec![self.nu / (self.nu - 2.0); self.dim],
        })
    }
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian target (normalized; for synthetic checks)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(loc: Vec<f64>, scale: Vec<f64>) -> Result<Self, TargetError> {
        if loc.is_empty() {
            return Err(TargetError::ZeroDim);
        }
        assert_eq!(loc.len(), scale.len(), "dimension mismatch");
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(TargetError::BadScale);
        }
        Ok(DiagGaussian { loc, scale })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            loc: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }
}

impl Target for DiagGaussian {
    fn dim(&self) -> usize {
        self.loc.len()
    }

    fn log_density<S: Scalar>(&self, z: &[S]) -> S {
        assert_eq!(z.len(), self.dim(), "dimension mismatch");
        let mut total = z[0].lift(0.0);
        for i in 0..z.len() {
            let standardized = (z[i] - self.loc[i]) * (1.0 / self.scale[i]);
            total = total
                - (self.scale[i].ln() + HALF_LN_2PI)
                - standardized * standardized * 0.5;
        }
        total
    }

    fn grad_log_density<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        assert_eq!(z.len(), self.dim(), "dimension mismatch");
        (0..z.len())
            .map(|i| -((z[i] - self.loc[i]) * (1.0 / (self.scale[i] * self.scale[i]))))
            .collect()
    }

    fn known_log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn known_moments(&self) -> Option<Moments> {
        Some(Moments {
            mean: self.loc.clone(),
            var_diag: self.scale.iter().map(|s| s * s).collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Logistic regression posterior
// ---------------------------------------------------------------------------

/// Bayesian logistic regression with a standard normal prior on each weight
/// and no intercept. The prior choice is echoed in run metadata rather than
/// baked in silently.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    data: SparseDataset,
}

impl LogisticRegression {
    pub fn new(data: SparseDataset) -> Result<Self, TargetError> {
        if data.features == 0 {
            return Err(TargetError::ZeroDim);
        }
        Ok(LogisticRegression { data })
    }

    pub fn data(&self) -> &SparseDataset {
        &self.data
    }
}

/// `Σ_rows -softplus(-y·⟨x, w⟩) + Σ_i [ -½·w_i² - ½·ln 2π ]`.
pub fn logistic_posterior_log_density<S: Scalar>(w: &[S], data: &SparseDataset) -> S {
    assert_eq!(w.len(), data.features, "dimension mismatch");
    let mut total = (w[0] * w[0] + HALF_LN_2PI * 2.0) * -0.5;
    for wi in &w[1..] {
        total = total - (*wi * *wi + HALF_LN_2PI * 2.0) * 0.5;
    }
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        let mut margin = w[0].lift(0.0);
        for (&idx, &val) in row.indices.iter().zip(&row.values) {
            margin = margin + w[idx as usize] * val;
        }
        total = total - (margin * -(label as f64)).softplus();
    }
    total
}

impl Target for LogisticRegression {
    fn dim(&self) -> usize {
        self.data.features
    }

    fn log_density<S: Scalar>(&self, w: &[S]) -> S {
        logistic_posterior_log_density(w, &self.data)
    }

    /// `-w + Σ_rows σ(-y·⟨x, w⟩)·y·x`.
    fn grad_log_density<S: Scalar>(&self, w: &[S]) -> Vec<S> {
        assert_eq!(w.len(), self.data.features, "dimension mismatch");
        let mut grad: Vec<S> = w.iter().map(|&wi| -wi).collect();
        for (row, &label) in self.data.rows.iter().zip(&self.data.labels) {
            if row.indices.is_empty() {
                continue;
            }
            let y = label as f64;
            let mut margin = w[0].lift(0.0);
            for (&idx, &val) in row.indices.iter().zip(&row.values) {
                margin = margin + w[idx as usize] * val;
            }
            let coef = (margin * -y).sigmoid() * y;
            for (&idx, &val) in row.indices.iter().zip(&row.values) {
                grad[idx as usize] = grad[idx as usize] + coef * val;
            }
        }
        grad
    }
}

// ---------------------------------------------------------------------------
// Runtime-selected target
// ---------------------------------------------------------------------------

/// Target chosen at run time (harness configs dispatch through this).
#[derive(Debug, Clone)]
pub enum AnyTarget {
    StudentT(StudentT),
    Gaussian(DiagGaussian),
    Logistic(LogisticRegression),
}

impl Target for AnyTarget {
    fn dim(&self) -> usize {
        match self {
            AnyTarget::StudentT(t) => t.dim(),
            AnyTarget::Gaussian(t) => t.dim(),
            AnyTarget::Logistic(t) => t.dim(),
        }
    }

    fn log_density<S: Scalar>(&self, z: &[S]) -> S {
        match self {
            AnyTarget::StudentT(t) => t.log_density(z),
            AnyTarget::Gaussian(t) => t.log_density(z),
            AnyTarget::Logistic(t) => t.log_density(z),
        }
    }

    fn grad_log_density<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        match self {
            AnyTarget::StudentT(t) => t.grad_log_density(z),
            AnyTarget::Gaussian(t) => t.grad_log_density(z),
            AnyTarget::Logistic(t) => t.grad_log_density(z),
        }
    }

    fn known_log_z(&self) -> Option<f64> {
        match self {
            AnyTarget::StudentT(t) => t.known_log_z(),
            AnyTarget::Gaussian(t) => t.known_log_z(),
            AnyTarget::Logistic(t) => t.known_log_z(),
        }
    }

    fn known_moments(&self) -> Option<Moments> {
        match self {
            AnyTarget::StudentT(t) => t.known_moments(),
            AnyTarget::Gaussian(t) => t.known_moments(),
            AnyTarget::Logistic(t) => t.known_moments(),
        }
    }
}
