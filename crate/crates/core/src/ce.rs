//! Gaussian cross-entropy machinery shared by the batch and online solvers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::linalg;

/// Largest exponent fed to `exp`, keeping S finite.
pub const EXP_CLAMP: f64 = 700.0;
/// Diagonal jitter added to batch covariance estimates.
pub const SIGMA_JITTER: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussParam {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussParam {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let m = mu.len();
        if sigma.nrows() != m || sigma.ncols() != m {
            return Err(CoreError::DimensionMismatch { expected: m, got: sigma.nrows() });
        }
        let scale = sigma.amax().max(1.0);
        if (&sigma - sigma.transpose()).amax() > 1e-12 * scale {
            return Err(CoreError::InvalidParameter("covariance is not symmetric".into()));
        }
        linalg::sqrt_factor(&sigma)?;
        Ok(Self { mu, sigma })
    }

    /// N(μ, q I).
    pub fn isotropic(mu: DVector<f64>, q: f64) -> Self {
        let m = mu.len();
        Self { mu, sigma: DMatrix::identity(m, m) * q }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_fro(&self) -> f64 {
        self.sigma.norm()
    }
}

/// A Gaussian with its square-root factor cached for repeated sampling.
#[derive(Debug, Clone)]
pub struct GaussSampler {
    pub mu: DVector<f64>,
    pub factor: DMatrix<f64>,
}

impl GaussSampler {
    pub fn new(g: &GaussParam) -> Result<Self> {
        Ok(Self { mu: g.mu.clone(), factor: linalg::sqrt_factor(&g.sigma)? })
    }

    /// Writes a draw into `out`, using `noise` as scratch.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, noise: &mut DVector<f64>, out: &mut DVector<f64>) {
        for v in noise.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        out.copy_from(&self.mu);
        out.gemv(1.0, &self.factor, noise, 1.0);
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.mu.len();
        let mut noise = DVector::zeros(m);
        let mut out = DVector::zeros(m);
        self.sample_into(rng, &mut noise, &mut out);
        out
    }
}

/// (1 − λ) f_θ + λ f_θ₀.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParam {
    pub lambda: f64,
    pub base: GaussParam,
    pub current: GaussParam,
}

impl MixtureParam {
    pub fn new(lambda: f64, base: GaussParam, current: GaussParam) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CoreError::InvalidParameter(format!("lambda {lambda} outside [0,1]")));
        }
        if base.dim() != current.dim() {
            return Err(CoreError::DimensionMismatch { expected: base.dim(), got: current.dim() });
        }
        if base.sigma.clone().cholesky().is_none() {
            return Err(CoreError::InvalidParameter("base covariance must be positive definite".into()));
        }
        Ok(Self { lambda, base, current })
    }

    pub fn sampler(&self) -> Result<MixtureSampler> {
        Ok(MixtureSampler {
            lambda: self.lambda,
            base: GaussSampler::new(&self.base)?,
            current: GaussSampler::new(&self.current)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.sampler()?.sample(rng))
    }
}

#[derive(Debug, Clone)]
pub struct MixtureSampler {
    pub lambda: f64,
    pub base: GaussSampler,
    pub current: GaussSampler,
}

impl MixtureSampler {
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, noise: &mut DVector<f64>, out: &mut DVector<f64>) {
        let use_base = rng.random::<f64>() < self.lambda;
        let g = if use_base { &self.base } else { &self.current };
        g.sample_into(rng, noise, out);
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.base.mu.len();
        let mut noise = DVector::zeros(m);
        let mut out = DVector::zeros(m);
        self.sample_into(rng, &mut noise, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaping {
    pub r: f64,
    pub rho: f64,
}

impl Shaping {
    pub fn new(r: f64, rho: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("shaping rate {r} must be positive")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(CoreError::InvalidParameter(format!("quantile level {rho} outside (0,1)")));
        }
        Ok(Self { r, rho })
    }

    /// S(x) = exp(r x) with the exponent clamped to ±700.
    pub fn s(&self, x: f64) -> f64 {
        (self.r * x).clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    }
}

pub fn g0(h: f64, gamma: f64, sh: &Shaping) -> f64 {
    if h >= gamma {
        sh.s(h)
    } else {
        0.0
    }
}

pub fn g1(h: f64, x: &DVector<f64>, gamma: f64, sh: &Shaping) -> DVector<f64> {
    x * g0(h, gamma, sh)
}

pub fn g2(h: f64, x: &DVector<f64>, gamma: f64, mu: &DVector<f64>, sh: &Shaping) -> DMatrix<f64> {
    let d = x - mu;
    &d * d.transpose() * g0(h, gamma, sh)
}

/// Quantile check loss; both indicator branches fire at `h == y`.
pub fn psi(h: f64, y: f64, rho: f64) -> f64 {
    let mut v = 0.0;
    if h >= y {
        v += (1.0 - rho) * (h - y);
    }
    if h <= y {
        v += rho * (y - h);
    }
    v
}

/// 1-based rank ⌈(1 − ρ)N⌉, guarded against floating round-up.
pub fn quantile_rank(n: usize, rho: f64) -> usize {
    let x = (1.0 - rho) * n as f64;
    ((x - 1e-9).ceil() as usize).clamp(1, n)
}

/// The ⌈(1 − ρ)N⌉-th smallest value.
pub fn order_statistic_quantile(values: &[f64], rho: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::Empty);
    }
    let mut v = values.to_vec();
    let k = quantile_rank(v.len(), rho) - 1;
    let (_, x, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Ok(*x)
}

/// One iteration of batch Monte-Carlo CE maximizing `objective`.
///
/// `gamma_star` is the persisted threshold; pass `f64::NEG_INFINITY` on the
/// first call. The threshold only moves when the new sample quantile beats
/// it by at least `epsilon`. Weights are normalised in log space.
pub fn mc_ce_iterate<R, F>(
    theta: &GaussParam,
    gamma_star: f64,
    objective: F,
    n_samples: usize,
    sh: &Shaping,
    epsilon: f64,
    rng: &mut R,
) -> Result<(GaussParam, f64)>
where
    R: Rng + ?Sized,
    F: Fn(&DVector<f64>) -> f64,
{
    if n_samples == 0 {
        return Err(CoreError::Empty);
    }
    let sampler = GaussSampler::new(theta)?;
    let xs: Vec<DVector<f64>> = (0..n_samples).map(|_| sampler.sample(rng)).collect();
    let hs: Vec<f64> = xs.iter().map(&objective).collect();
    let q = order_statistic_quantile(&hs, sh.rho)?;
    let threshold = if q >= gamma_star + epsilon { q } else { gamma_star };

    let elite: Vec<usize> = (0..n_samples).filter(|&i| hs[i] >= threshold).collect();
    if elite.is_empty() {
        return Err(CoreError::DegenerateUpdate);
    }
    let top = elite.iter().map(|&i| hs[i]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = elite.iter().map(|&i| (sh.r * (hs[i] - top)).max(-EXP_CLAMP).exp()).collect();
    let total: f64 = weights.iter().sum();

    let m = theta.dim();
    let mut mu = DVector::zeros(m);
    for (&i, w) in elite.iter().zip(&weights) {
        mu.axpy(*w / total, &xs[i], 1.0);
    }
    let mut sigma = DMatrix::identity(m, m) * SIGMA_JITTER;
    for (&i, w) in elite.iter().zip(&weights) {
        let d = &xs[i] - &mu;
        sigma.ger(*w / total, &d, &d, 1.0);
    }
    Ok((GaussParam { mu, sigma: linalg::symmetrize(&sigma) }, threshold))
}
