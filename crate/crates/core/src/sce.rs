//! Online multi-timescale cross-entropy minimization of the projected
//! Bellman error from a single trajectory.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ce::{GaussParam, GaussSampler, MixtureSampler, Shaping, EXP_CLAMP};
use crate::error::{CoreError, Result};
use crate::features::FeatureMap;
use crate::linalg;
pub use crate::mrp::OmegaTriple;
use crate::mrp::Transition;

/// Eigenvalue floor applied when the model covariance loses definiteness.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Deterministic step-size sequence indexed from t = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Const(f64),
    /// scale · t^(−power)
    Power { scale: f64, power: f64 },
    /// c0 / (1 + t/tau)
    Decay { c0: f64, tau: f64 },
}

impl StepSize {
    pub fn at(&self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        match *self {
            StepSize::Const(c) => c,
            StepSize::Power { scale, power } => scale * t.powf(-power),
            StepSize::Decay { c0, tau } => c0 / (1.0 + t / tau),
        }
    }

    /// Whether Σa = ∞ and Σa² < ∞ hold for the family.
    pub fn robbins_monro(&self) -> bool {
        match *self {
            StepSize::Const(_) => false,
            StepSize::Power { power, .. } => power > 0.5 && power <= 1.0,
            StepSize::Decay { .. } => true,
        }
    }

    /// Asymptotic decay exponent (0 for constants).
    fn exponent(&self) -> f64 {
        match *self {
            StepSize::Const(_) => 0.0,
            StepSize::Power { power, .. } => power,
            StepSize::Decay { .. } => 1.0,
        }
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepSize::Const(c) => write!(f, "{c}"),
            StepSize::Power { scale, power } if scale == 1.0 => write!(f, "t^-{power}"),
            StepSize::Power { scale, power } => write!(f, "{scale}*t^-{power}"),
            StepSize::Decay { c0, tau } => write!(f, "{c0}/(1+t/{tau})"),
        }
    }
}

impl FromStr for StepSize {
    type Err = CoreError;

    /// Accepts `0.05`, `t^-0.6`, `2*t^-0.6` and `0.05/(1+t/1000)`.
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || CoreError::InvalidParameter(format!("cannot parse step size `{s}`"));
        let num = |x: &str| x.parse::<f64>().map_err(|_| bad());
        let out = if let Some((scale, rest)) = s.split_once("t^-") {
            let scale = match scale.strip_suffix('*') {
                Some(v) => num(v)?,
                None if scale.is_empty() => 1.0,
                None => return Err(bad()),
            };
            StepSize::Power { scale, power: num(rest)? }
        } else if let Some((c0, rest)) = s.split_once("/(1+t/") {
            StepSize::Decay { c0: num(c0)?, tau: num(rest.strip_suffix(')').ok_or_else(bad)?)? }
        } else {
            StepSize::Const(num(&s)?)
        };
        let ok = match out {
            StepSize::Const(c) => c > 0.0 && c.is_finite(),
            StepSize::Power { scale, power } => scale > 0.0 && power > 0.0,
            StepSize::Decay { c0, tau } => c0 > 0.0 && tau > 0.0,
        };
        if ok {
            Ok(out)
        } else {
            Err(bad())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// T keeps running across model updates; γᵖ is seeded from γ the first
    /// time the model moves and afterwards follows its own recursion.
    Persistent,
    /// T ← 0 and γᵖ ← γ after every model update.
    ResetOnUpdate,
}

impl FromStr for GateMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persistent" => Ok(GateMode::Persistent),
            "reset" => Ok(GateMode::ResetOnUpdate),
            _ => Err(CoreError::InvalidParameter(format!("unknown gate mode `{s}`"))),
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::Persistent => "persistent",
            GateMode::ResetOnUpdate => "reset",
        })
    }
}

/// How the elite weight S(J̄) enters the ξ recursions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// exp(r J̄) with the exponent clamped to ±700.
    Raw,
    /// exp(r (J̄ − γ_t)), capped so that β·weight ≤ 1. The ratio ξ tracks is
    /// unchanged because the factor exp(−r γ_t) cancels.
    Shifted,
}

impl FromStr for WeightMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(WeightMode::Raw),
            "shifted" => Ok(WeightMode::Shifted),
            _ => Err(CoreError::InvalidParameter(format!("unknown weight mode `{s}`"))),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Raw => "raw",
            WeightMode::Shifted => "shifted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub alpha: StepSize,
    pub beta: StepSize,
    pub c: StepSize,
    pub epsilon1: f64,
    pub lambda: f64,
    pub shaping: Shaping,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(CoreError::InvalidParameter(format!("{name}={v} must lie in (0,1)")))
            }
        };
        unit("epsilon1", self.epsilon1)?;
        unit("lambda", self.lambda)?;
        unit("c", self.c.at(1))?;
        if self.shaping.rho >= self.lambda {
            return Err(CoreError::InvalidParameter(format!(
                "rho={} must be below lambda={}",
                self.shaping.rho, self.lambda
            )));
        }
        Ok(())
    }

    /// True when both step sizes are square-summable but not summable and
    /// α_t/β_t → 0. Constant steps, as in the benchmark tables, are not.
    pub fn satisfies_timescale_conditions(&self) -> bool {
        self.alpha.robbins_monro() && self.beta.robbins_monro() && self.alpha.exponent() > self.beta.exponent()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceConfig {
    pub schedule: Schedule,
    pub gate: GateMode,
    pub weight: WeightMode,
}

/// ω ← ω + α Δω for one transition, in place.
pub fn update_omega(omega: &mut OmegaTriple, phi: &DVector<f64>, phi_next: &DVector<f64>, r: f64, alpha: f64, discount: f64) {
    let k = phi.len();
    omega.w0 *= 1.0 - alpha;
    omega.w0.axpy(alpha * r, phi, 1.0);

    let td = phi_next * discount - phi;
    omega.w1 *= 1.0 - alpha;
    omega.w1.ger(alpha, phi, &td, 1.0);

    // ω⁽²⁾ + α(I − φ φᵀ ω⁽²⁾)
    let u = omega.w2.tr_mul(phi);
    omega.w2.ger(-alpha, phi, &u, 1.0);
    for i in 0..k {
        omega.w2[(i, i)] += alpha;
    }
}

/// J̄(ω, z) = −(ω⁽⁰⁾ + ω⁽¹⁾z)ᵀ ω⁽²⁾ (ω⁽⁰⁾ + ω⁽¹⁾z).
pub fn jbar(omega: &OmegaTriple, z: &DVector<f64>) -> f64 {
    let mut e = omega.w0.clone();
    e.gemv(1.0, &omega.w1, z, 1.0);
    -e.dot(&(&omega.w2 * &e))
}

/// Δγ = −(1−ρ)1{J ≥ γ} + ρ1{J ≤ γ}.
pub fn gamma_increment(jval: f64, gamma: f64, rho: f64) -> f64 {
    let mut d = 0.0;
    if jval >= gamma {
        d -= 1.0 - rho;
    }
    if jval <= gamma {
        d += rho;
    }
    d
}

/// γ ← γ − β Δγ.
pub fn update_gamma(gamma: f64, jval: f64, beta: f64, rho: f64) -> f64 {
    gamma - beta * gamma_increment(jval, gamma, rho)
}

/// Elite weight g₀ under the chosen weighting.
pub fn elite_weight(jval: f64, gamma: f64, beta: f64, sh: &Shaping, mode: WeightMode) -> f64 {
    if jval < gamma {
        return 0.0;
    }
    match mode {
        WeightMode::Raw => sh.s(jval),
        WeightMode::Shifted => {
            let cap = (1.0 / beta).ln().min(EXP_CLAMP);
            (sh.r * (jval - gamma)).min(cap).exp()
        }
    }
}

/// ξ⁽⁰⁾, ξ⁽¹⁾ recursions with weight `w = g₀`, in place. The covariance
/// tracker is centred on the pre-update ξ⁽⁰⁾.
pub fn update_xi(xi0: &mut DVector<f64>, xi1: &mut DMatrix<f64>, z: &DVector<f64>, w: f64, beta: f64) {
    if w == 0.0 {
        return;
    }
    let bw = beta * w;
    let d = z - &*xi0;
    *xi1 *= 1.0 - bw;
    xi1.ger(bw, &d, &d, 1.0);
    *xi0 *= 1.0 - bw;
    xi0.axpy(bw, z, 1.0);
}

/// T ← T + c(1{γ > γᵖ} − 1{γ ≤ γᵖ} − T), kept strictly inside (−1, 1).
pub fn update_t(t: f64, gamma: f64, gamma_p: f64, c: f64) -> f64 {
    let sign = if gamma > gamma_p { 1.0 } else { -1.0 };
    let next = t + c * (sign - t);
    let edge = 1.0 - f64::EPSILON / 2.0;
    next.clamp(-edge, edge)
}

/// Covariance repair: symmetrize, then floor the spectrum if the matrix is
/// no longer comfortably positive definite.
pub fn repair_sigma(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::CovarianceRepair("non-finite covariance".into()));
    }
    let s = linalg::symmetrize(sigma);
    let healthy = s
        .clone()
        .cholesky()
        .map(|ch| ch.l().diagonal().iter().all(|d| d * d >= SIGMA_FLOOR))
        .unwrap_or(false);
    Ok(if healthy { s } else { linalg::floor_eigenvalues(&s, SIGMA_FLOOR) })
}

#[derive(Debug, Clone)]
pub struct SceState {
    pub t: u64,
    pub omega: OmegaTriple,
    pub gamma: f64,
    pub gamma_p: f64,
    pub xi0: DVector<f64>,
    pub xi1: DMatrix<f64>,
    pub gate: f64,
    pub theta: GaussParam,
    pub theta_p: Option<GaussParam>,
    pub c: f64,
    pub theta0: GaussParam,
    pub model_updates: u64,
    sampler: MixtureSampler,
    sampler_p: Option<MixtureSampler>,
    noise: DVector<f64>,
    z: DVector<f64>,
    zp: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceDiagnostics {
    pub t: u64,
    pub gamma: f64,
    pub gamma_p: f64,
    pub gate: f64,
    pub sigma_fro: f64,
    pub mu: DVector<f64>,
    pub model_updates: u64,
}

impl SceState {
    /// Starts from θ₀ = (μ₀, qI) with every tracker at zero and γᵖ = −∞.
    pub fn new(mu0: DVector<f64>, q: f64, cfg: &SceConfig) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("initial variance {q} must be positive")));
        }
        cfg.schedule.validate()?;
        let k = mu0.len();
        if k == 0 {
            return Err(CoreError::Empty);
        }
        let theta0 = GaussParam::isotropic(mu0, q);
        let base = GaussSampler::new(&theta0)?;
        let sampler = MixtureSampler { lambda: cfg.schedule.lambda, base: base.clone(), current: base };
        Ok(Self {
            t: 0,
            omega: OmegaTriple::zeros(k),
            gamma: 0.0,
            gamma_p: f64::NEG_INFINITY,
            xi0: DVector::zeros(k),
            xi1: DMatrix::zeros(k, k),
            gate: 0.0,
            theta: theta0.clone(),
            theta_p: None,
            c: cfg.schedule.c.at(1),
            theta0,
            model_updates: 0,
            sampler,
            sampler_p: None,
            noise: DVector::zeros(k),
            z: DVector::zeros(k),
            zp: DVector::zeros(k),
        })
    }

    pub fn k(&self) -> usize {
        self.theta.dim()
    }

    /// Replaces the current model, e.g. to freeze θ in tests.
    pub fn set_theta(&mut self, theta: GaussParam) -> Result<()> {
        self.sampler.current = GaussSampler::new(&theta)?;
        self.theta = theta;
        Ok(())
    }

    /// One step on a transition given as (φ(s), r, φ(s')).
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        phi: &DVector<f64>,
        r: f64,
        phi_next: &DVector<f64>,
        discount: f64,
        cfg: &SceConfig,
        rng: &mut R,
    ) -> Result<()> {
        let sched = &cfg.schedule;
        let t1 = self.t + 1;
        let alpha = sched.alpha.at(t1);
        let beta = sched.beta.at(t1);
        let rho = sched.shaping.rho;

        self.sampler.sample_into(rng, &mut self.noise, &mut self.z);
        let j = jbar(&self.omega, &self.z);
        let jp = match &self.sampler_p {
            Some(sp) => {
                sp.sample_into(rng, &mut self.noise, &mut self.zp);
                Some(jbar(&self.omega, &self.zp))
            }
            None => None,
        };

        update_omega(&mut self.omega, phi, phi_next, r, alpha, discount);

        let gamma_t = self.gamma;
        self.gamma = update_gamma(gamma_t, j, beta, rho);
        let w = elite_weight(j, gamma_t, beta, &sched.shaping, cfg.weight);
        update_xi(&mut self.xi0, &mut self.xi1, &self.z, w, beta);

        if let Some(jp) = jp {
            if self.gamma_p.is_finite() {
                self.gamma_p = update_gamma(self.gamma_p, jp, beta, rho);
            }
        }

        self.gate = update_t(self.gate, self.gamma, self.gamma_p, self.c);
        assert!(self.gate > -1.0 && self.gate < 1.0, "gate statistic left (-1,1): {}", self.gate);

        if self.gate > sched.epsilon1 {
            self.update_model(alpha, gamma_t, cfg, t1)?;
        }
        self.t = t1;
        Ok(())
    }

    fn update_model(&mut self, alpha: f64, gamma_t: f64, cfg: &SceConfig, t1: u64) -> Result<()> {
        let previous = std::mem::replace(&mut self.sampler.current, self.sampler.base.clone());
        self.sampler_p = Some(MixtureSampler {
            lambda: self.sampler.lambda,
            base: self.sampler.base.clone(),
            current: previous,
        });
        let mut mu = self.theta.mu.clone();
        mu *= 1.0 - alpha;
        mu.axpy(alpha, &self.xi0, 1.0);
        let sigma = &self.theta.sigma * (1.0 - alpha) + &self.xi1 * alpha;
        let sigma = repair_sigma(&sigma)?;
        let next = GaussParam { mu, sigma };
        self.sampler.current = GaussSampler::new(&next)?;
        self.theta_p = Some(std::mem::replace(&mut self.theta, next));
        match cfg.gate {
            GateMode::ResetOnUpdate => {
                self.gamma_p = gamma_t;
                self.gate = 0.0;
            }
            GateMode::Persistent => {
                if !self.gamma_p.is_finite() {
                    self.gamma_p = gamma_t;
                }
            }
        }
        self.c = cfg.schedule.c.at(t1);
        self.model_updates += 1;
        Ok(())
    }

    /// Step on a raw transition, evaluating features through `map`.
    pub fn step_transition<R: Rng + ?Sized>(
        &mut self,
        tr: &Transition,
        map: &FeatureMap,
        discount: f64,
        cfg: &SceConfig,
        rng: &mut R,
    ) -> Result<()> {
        let phi = map.evaluate(&tr.s)?;
        let phi_next = map.evaluate(&tr.s_next)?;
        self.step(&phi, tr.r, &phi_next, discount, cfg, rng)
    }

    pub fn diagnostics(&self) -> SceDiagnostics {
        SceDiagnostics {
            t: self.t,
            gamma: self.gamma,
            gamma_p: self.gamma_p,
            gate: self.gate,
            sigma_fro: self.theta.sigma_fro(),
            mu: self.theta.mu.clone(),
            model_updates: self.model_updates,
        }
    }
}
