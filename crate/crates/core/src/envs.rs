//! Benchmark problems: Baird's star, the 10-state ring, binomial random
//! chains, and the linearized cart-pole and 5-link pendulum systems.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::features::FeatureMap;
use crate::linalg;
use crate::mrp::{FiniteMrp, SamplingMode, State, Transition, TransitionSource};

const BAIRD_PERFECT: [[f64; 8]; 7] = [
    [1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0],
    [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
];

const BAIRD_IMPERFECT: [[f64; 8]; 7] = [
    [1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0],
    [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
];

fn rows_to_matrix<const K: usize>(rows: &[[f64; K]]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), K, |i, j| rows[i][j])
}

/// Baird's 7-state star: every state jumps to the last one, ν uniform.
/// The perfect variant pays reward 0, the imperfect one pays 2 and uses a
/// feature matrix whose span misses the value function.
pub fn make_baird(perfect: bool, gamma: f64) -> Result<(FiniteMrp, DMatrix<f64>)> {
    let n = 7;
    let mut p = DMatrix::zeros(n, n);
    p.column_mut(n - 1).fill(1.0);
    let reward = if perfect { 0.0 } else { 2.0 };
    let mrp = FiniteMrp::new(p, DMatrix::from_element(n, n, reward), gamma, DVector::from_element(n, 1.0 / n as f64))?;
    let phi = if perfect { rows_to_matrix(&BAIRD_PERFECT) } else { rows_to_matrix(&BAIRD_IMPERFECT) };
    Ok((mrp, phi))
}

/// Deterministic 10-cycle with unit reward and 8 features; the last two
/// states reuse the feature rows of states 8 and 6.
pub fn make_ring(gamma: f64) -> Result<(FiniteMrp, DMatrix<f64>)> {
    let n = 10;
    let p = DMatrix::from_fn(n, n, |i, j| if j == (i + 1) % n { 1.0 } else { 0.0 });
    let mrp = FiniteMrp::new(p, DMatrix::from_element(n, n, 1.0), gamma, DVector::from_element(n, 0.1))?;
    let active = [0usize, 1, 2, 3, 4, 5, 6, 7, 7, 5];
    let phi = DMatrix::from_fn(n, 8, |i, j| if active[i] == j { 1.0 } else { 0.0 });
    Ok((mrp, phi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinomialRandomMdpSpec {
    pub n: usize,
    pub b: Vec<f64>,
    pub g: Vec<f64>,
    pub seed: u64,
}

impl BinomialRandomMdpSpec {
    /// Draws b(s), G(s) ~ U(0,1) from `seed`.
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(CoreError::InvalidParameter("random chain needs at least 2 states".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = (0..n).map(|_| rng.random::<f64>()).collect();
        let g = (0..n).map(|_| rng.random::<f64>()).collect();
        Ok(Self { n, b, g, seed })
    }
}

fn ln_binomial_row(trials: usize, prob: f64) -> Vec<f64> {
    let mut ln_fact = vec![0.0; trials + 1];
    for i in 1..=trials {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    (0..=trials)
        .map(|k| {
            let c = ln_fact[trials] - ln_fact[k] - ln_fact[trials - k];
            let a = if k == 0 { 0.0 } else { k as f64 * prob.ln() };
            let b = if k == trials { 0.0 } else { (trials - k) as f64 * (1.0 - prob).ln() };
            c + a + b
        })
        .collect()
}

/// P(s,·) = Binomial(n−1, b(s)) over ids 0..n−1,
/// R(s,s') = G(s)G(s')/(1+s')^¼, ν = stationary distribution.
pub fn make_random_mdp(spec: &BinomialRandomMdpSpec, gamma: f64) -> Result<FiniteMrp> {
    let n = spec.n;
    if spec.b.len() != n || spec.g.len() != n {
        return Err(CoreError::DimensionMismatch { expected: n, got: spec.b.len().min(spec.g.len()) });
    }
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        let ln = ln_binomial_row(n - 1, spec.b[s]);
        let top = ln.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = ln.iter().map(|x| (x - top).exp()).collect();
        let total: f64 = w.iter().sum();
        for (t, v) in w.iter().enumerate() {
            p[(s, t)] = v / total;
        }
    }
    let r = DMatrix::from_fn(n, n, |s, t| spec.g[s] * spec.g[t] / (1.0 + t as f64).powf(0.25));
    let uniform = DVector::from_element(n, 1.0 / n as f64);
    let draft = FiniteMrp::new(p, r, gamma, uniform)?;
    let nu = draft.stationary_distribution()?;
    draft.with_nu(nu)
}

/// s' = F s + G a + w,  a = K s + σ₁ε,  reward −(sᵀQs + aᵀRa).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussSystem {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub policy_gain: DMatrix<f64>,
    pub policy_noise: f64,
    pub reward_q: DMatrix<f64>,
    pub reward_r: DMatrix<f64>,
    pub dt: f64,
}

impl LinearGaussSystem {
    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.f + &self.g * &self.policy_gain
    }

    pub fn reward(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        -(s.dot(&(&self.reward_q * s)) + a.dot(&(&self.reward_r * a)))
    }

    /// Next state for a given action and process-noise draw.
    pub fn propagate(&self, s: &DVector<f64>, a: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.f * s + &self.g * a + w
    }
}

/// Cart-pole parameters of the linearized benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub g: f64,
    pub m: f64,
    pub big_m: f64,
    pub l: f64,
    pub b: f64,
    pub dt: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub policy_noise: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self { g: 9.8, m: 0.5, big_m: 0.5, l: 0.6, b: 0.1, dt: 0.1, sigma2: 0.01, gamma: 0.95, policy_noise: 0.1 }
    }
}

/// Linearized cart-pole with state (ψ, ψ̇, x, ẋ) and the LQR policy for its
/// own reward. Noise enters the cart velocity only.
pub fn make_cartpole_with(p: &CartPoleParams) -> Result<(LinearGaussSystem, FeatureMap)> {
    let dt = p.dt;
    let pole = 4.0 * p.big_m * p.l - p.m * p.l;
    let cart = 4.0 * p.big_m - p.m;
    #[rustfmt::skip]
    let f = DMatrix::from_row_slice(4, 4, &[
        1.0, dt, 0.0, 0.0,
        dt * 3.0 * (p.big_m + p.m) / pole, 1.0 + dt * 3.0 * p.b / pole, 0.0, 0.0,
        0.0, 0.0, 1.0, dt,
        dt * 3.0 * p.m * p.g / cart, -dt * 4.0 * p.b / cart, 0.0, 1.0,
    ]);
    let g = DMatrix::from_column_slice(4, 1, &[0.0, -dt * 3.0 / pole, 0.0, dt * 4.0 / cart]);
    let mut noise_cov = DMatrix::zeros(4, 4);
    noise_cov[(3, 3)] = p.sigma2 * p.sigma2;
    let reward_q = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 0.0, 1.0, 0.0]));
    let reward_r = DMatrix::from_element(1, 1, 0.1);
    let lqr = solve_lqr(&f, &g, &reward_q, &reward_r, p.gamma)?;
    let sys = LinearGaussSystem {
        f,
        g,
        noise_cov,
        policy_gain: lqr.gain,
        policy_noise: p.policy_noise,
        reward_q,
        reward_r,
        dt,
    };
    Ok((sys, FeatureMap::Quadratic { d: 4, scale: 1.0 }))
}

pub fn make_cartpole() -> Result<(LinearGaussSystem, FeatureMap)> {
    make_cartpole_with(&CartPoleParams::default())
}

/// Mass matrix M_ij = l²(6 − max(i,j))m and gravity term U_ii = −gl(6 − i)m
/// (1-based i, j) of the 5-link pendulum.
pub fn pendulum_matrices(m: f64, l: f64, g: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mass = DMatrix::from_fn(5, 5, |i, j| l * l * (6.0 - (i.max(j) + 1) as f64) * m);
    let u = DMatrix::from_fn(5, 5, |i, j| if i == j { -g * l * (6.0 - (i + 1) as f64) * m } else { 0.0 });
    (mass, u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub g: f64,
    pub m: f64,
    pub l: f64,
    pub dt: f64,
    pub gamma: f64,
    pub noise_std: f64,
    pub policy_noise: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { g: 9.8, m: 1.0, l: 1.0, dt: 0.1, gamma: 0.95, noise_std: 0.01, policy_noise: 0.1 }
    }
}

/// 5-link pendulum with state (q, q̇) ∈ ℝ¹⁰, reward −qᵀq.
pub fn make_pendulum5_with(p: &PendulumParams) -> Result<(LinearGaussSystem, FeatureMap)> {
    let (mass, u) = pendulum_matrices(p.m, p.l, p.g);
    let minv = linalg::inverse(&mass)?;
    let mut f = DMatrix::identity(10, 10);
    let mut g = DMatrix::zeros(10, 5);
    let coupling = -(&minv * &u) * p.dt;
    for i in 0..5 {
        f[(i, 5 + i)] = p.dt;
        for j in 0..5 {
            f[(5 + i, j)] = coupling[(i, j)];
            g[(5 + i, j)] = p.dt * minv[(i, j)];
        }
    }
    let noise_cov = DMatrix::identity(10, 10) * (p.noise_std * p.noise_std);
    let mut reward_q = DMatrix::zeros(10, 10);
    for i in 0..5 {
        reward_q[(i, i)] = 1.0;
    }
    let reward_r = DMatrix::zeros(5, 5);
    let lqr = solve_lqr(&f, &g, &reward_q, &reward_r, p.gamma)?;
    let sys = LinearGaussSystem {
        f,
        g,
        noise_cov,
        policy_gain: lqr.gain,
        policy_noise: p.policy_noise,
        reward_q,
        reward_r,
        dt: p.dt,
    };
    Ok((sys, FeatureMap::Quadratic { d: 10, scale: 1.0 }))
}

pub fn make_pendulum5() -> Result<(LinearGaussSystem, FeatureMap)> {
    make_pendulum5_with(&PendulumParams::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// Feedback a = gain · s.
    pub gain: DMatrix<f64>,
    /// Cost-to-go quadratic of the noiseless problem.
    pub cost_to_go: DMatrix<f64>,
    pub iterations: usize,
}

const RICCATI_CAP: usize = 100_000;

/// Discounted LQR for cost Σγᵗ(sᵀQs + aᵀRa) by Riccati fixed-point
/// iteration. Iteration starts from Q + 10⁻⁶I so that R = 0 is allowed.
pub fn solve_lqr(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
) -> Result<LqrSolution> {
    let d = f.nrows();
    let mut p = q + DMatrix::identity(d, d) * 1e-6;
    for it in 1..=RICCATI_CAP {
        let (next, gain) = riccati_step(f, g, q, r, gamma, &p)?;
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-10 * p.amax().max(1.0) {
            let (_, gain_final) = riccati_step(f, g, q, r, gamma, &p).unwrap_or((p.clone(), gain));
            return Ok(LqrSolution { gain: gain_final, cost_to_go: p, iterations: it });
        }
        if !p.iter().all(|x| x.is_finite()) {
            break;
        }
    }
    Err(CoreError::NoConvergence(RICCATI_CAP))
}

/// One Riccati backup; returns (P', gain) with gain = −γ(R + γGᵀPG)⁻¹GᵀPF.
pub fn riccati_step(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = r + g.transpose() * p * g * gamma;
    let rhs = g.transpose() * p * f * gamma;
    let mut l = DMatrix::zeros(g.ncols(), f.ncols());
    for j in 0..f.ncols() {
        l.set_column(j, &linalg::solve(&h, &rhs.column(j).into_owned())?);
    }
    let gain = -l;
    let fcl = f + g * &gain;
    let next = q + gain.transpose() * r * &gain + fcl.transpose() * p * &fcl * gamma;
    Ok((linalg::symmetrize(&next), gain))
}

/// V(s) = −(sᵀ P_v s + c_v).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub p_v: DMatrix<f64>,
    pub c_v: f64,
}

impl QuadraticValue {
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        -(s.dot(&(&self.p_v * s)) + self.c_v)
    }

    /// Coefficients of V in the quadratic feature basis
    /// (1, s₁², …, s_d², s₁s₂, …).
    pub fn coefficients(&self) -> DVector<f64> {
        self.coefficients_scaled(1.0)
    }

    /// Coefficients for quadratic features of `scale · s`.
    pub fn coefficients_scaled(&self, scale: f64) -> DVector<f64> {
        let d = self.p_v.nrows();
        let c = 1.0 / (scale * scale);
        let mut z = vec![-self.c_v];
        z.extend((0..d).map(|i| -c * self.p_v[(i, i)]));
        for a in 0..d {
            for b in a + 1..d {
                z.push(-2.0 * c * self.p_v[(a, b)]);
            }
        }
        DVector::from_vec(z)
    }
}

/// Exact value of the system's stochastic policy.
///
/// P_v = Q + KᵀRK + γF_clᵀP_vF_cl (solved by fixed-point iteration) and
/// c_v = (σ₁²tr R + γ(σ₁²tr(GᵀP_vG) + tr(P_v W)))/(1 − γ).
pub fn exact_quadratic_value(sys: &LinearGaussSystem, gamma: f64) -> Result<QuadraticValue> {
    let fcl = sys.closed_loop();
    let rho = linalg::spectral_radius(&fcl);
    if rho * gamma.sqrt() >= 1.0 {
        return Err(CoreError::InvalidModel(format!("closed loop radius {rho} is not discount-contractive")));
    }
    let k = &sys.policy_gain;
    let stage = &sys.reward_q + k.transpose() * &sys.reward_r * k;
    let mut p = stage.clone();
    let mut converged = false;
    for _ in 0..RICCATI_CAP {
        let next = linalg::symmetrize(&(&stage + fcl.transpose() * &p * &fcl * gamma));
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-13 * p.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CoreError::NoConvergence(RICCATI_CAP));
    }
    let s2 = sys.policy_noise * sys.policy_noise;
    let gpg = (sys.g.transpose() * &p * &sys.g).trace();
    let c_v = (s2 * sys.reward_r.trace() + gamma * (s2 * gpg + (&p * &sys.noise_cov).trace())) / (1.0 - gamma);
    Ok(QuadraticValue { p_v: p, c_v })
}

/// Transition stream from a linear-Gaussian system. In i.i.d. mode states
/// are drawn from N(0, σ_ν² I).
#[derive(Debug, Clone)]
pub struct LinearGaussSampler {
    sys: Arc<LinearGaussSystem>,
    rng: ChaCha8Rng,
    mode: SamplingMode,
    nu_std: f64,
    noise_factor: DMatrix<f64>,
    current: Option<DVector<f64>>,
}

impl LinearGaussSampler {
    pub fn new(sys: Arc<LinearGaussSystem>, seed: u64, mode: SamplingMode, nu_std: f64) -> Result<Self> {
        let noise_factor = linalg::sqrt_factor(&sys.noise_cov)?;
        Ok(Self { sys, rng: ChaCha8Rng::seed_from_u64(seed), mode, nu_std, noise_factor, current: None })
    }

    fn gaussian(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.rng.sample(StandardNormal))
    }

    fn act(&mut self, s: &DVector<f64>) -> DVector<f64> {
        let eps = self.gaussian(self.sys.action_dim());
        &self.sys.policy_gain * s + eps * self.sys.policy_noise
    }

    fn advance(&mut self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let eps = self.gaussian(self.sys.state_dim());
        let w = &self.noise_factor * eps;
        self.sys.propagate(s, a, &w)
    }
}

impl TransitionSource for LinearGaussSampler {
    fn next_transition(&mut self) -> Transition {
        let d = self.sys.state_dim();
        let s = match (self.mode, self.current.take()) {
            (SamplingMode::Chain, Some(c)) => c,
            _ => self.gaussian(d) * self.nu_std,
        };
        let a = self.act(&s);
        let r = self.sys.reward(&s, &a);
        let next = self.advance(&s, &a);
        self.current = Some(next.clone());
        Transition { s: State::Point(s), r, s_next: State::Point(next) }
    }

    fn resample_next(&mut self, s: &State) -> Result<State> {
        match s {
            State::Point(v) => {
                let a = self.act(v);
                Ok(State::Point(self.advance(v, &a)))
            }
            State::Index(_) => Err(CoreError::DimensionMismatch { expected: self.sys.state_dim(), got: 1 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrp::MrpSampler;

    #[test]
    fn baird_layout() {
        let (m, phi) = make_baird(true, 0.9).unwrap();
        assert_eq!(phi.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(phi.row(6).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((0..7).all(|s| m.p[(s, 6)] == 1.0));
        assert_eq!(m.exact_value_function().unwrap(), DVector::zeros(7));
        assert!(matches!(m.stationary_distribution(), Err(CoreError::NonErgodic(_))));
        let mut src = MrpSampler::new(Arc::new(m), 1, SamplingMode::Iid);
        assert!((0..100).all(|_| src.next_transition().s_next == State::Index(6)));
        let (m1, phi1) = make_baird(false, 0.99).unwrap();
        assert_eq!(phi1.row(5).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert!(m1.r.iter().all(|r| *r == 2.0));
    }

    #[test]
    fn ring_layout() {
        let (m, phi) = make_ring(0.9).unwrap();
        assert_eq!(m.p[(9, 0)], 1.0);
        assert_eq!(phi.row(8), phi.row(7));
        assert_eq!(phi.row(9), phi.row(5));
        let pi = m.stationary_distribution().unwrap();
        assert!((pi - DVector::from_element(10, 0.1)).amax() < 1e-12);
        let v = m.exact_value_function().unwrap();
        assert!((v - DVector::from_element(10, 10.0)).amax() < 1e-10);
    }

    #[test]
    fn random_mdp_rows() {
        let spec = BinomialRandomMdpSpec { n: 3, b: vec![0.5, 0.2, 0.9], g: vec![1.0, 0.5, 0.5], seed: 0 };
        let m = make_random_mdp(&spec, 0.9).unwrap();
        assert!((m.p[(0, 0)] - 0.25).abs() < 1e-15 && (m.p[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(m.r[(0, 0)], 1.0);
        for seed in 0..5 {
            let m = make_random_mdp(&BinomialRandomMdpSpec::generate(200, seed).unwrap(), 0.9).unwrap();
            for row in m.p.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_mdp_stationary_matches_simulation() {
        let m = Arc::new(make_random_mdp(&BinomialRandomMdpSpec::generate(50, 3).unwrap(), 0.9).unwrap());
        let mut src = MrpSampler::new(m.clone(), 5, SamplingMode::Chain);
        let n = 10_000_000;
        let mut counts = vec![0usize; 50];
        for _ in 0..n {
            counts[src.next_transition().s.index().unwrap()] += 1;
        }
        let tv: f64 = (0..50).map(|i| (counts[i] as f64 / n as f64 - m.nu[i]).abs()).sum::<f64>() / 2.0;
        assert!(tv < 1e-2, "tv {tv}");
    }

    #[test]
    fn cartpole_basics() {
        let (sys, map) = make_cartpole().unwrap();
        assert_eq!(map.dim(), 11);
        let zero = DVector::zeros(4);
        assert_eq!(sys.propagate(&zero, &DVector::zeros(1), &zero), zero);
        let s = DVector::from_vec(vec![0.1, 0.0, 0.0, 0.0]);
        assert!((sys.reward(&s, &DVector::zeros(1)) + 1.0).abs() < 1e-12);
        assert!(linalg::spectral_radius(&sys.closed_loop()) < 1.0);
    }

    #[test]
    fn cartpole_one_step_by_hand() {
        let p = CartPoleParams::default();
        let (sys, _) = make_cartpole().unwrap();
        let (psi, dpsi, x, dx, a) = (0.05, -0.2, 0.3, 0.1, 0.7);
        let s = DVector::from_vec(vec![psi, dpsi, x, dx]);
        let next = sys.propagate(&s, &DVector::from_vec(vec![a]), &DVector::zeros(4));
        let (m, mm, l, b, g, dt) = (p.m, p.big_m, p.l, p.b, p.g, p.dt);
        let want = [
            psi + dt * dpsi,
            dpsi + dt * (3.0 * (mm + m) * psi - 3.0 * a + 3.0 * b * dpsi) / (4.0 * mm * l - m * l),
            x + dt * dx,
            dx + dt * (3.0 * m * g * psi + 4.0 * a - 4.0 * b * dpsi) / (4.0 * mm - m),
        ];
        for i in 0..4 {
            assert!((next[i] - want[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn pendulum_basics() {
        let (mass, u) = pendulum_matrices(1.0, 1.0, 9.8);
        assert_eq!(mass[(0, 0)], 5.0);
        assert!((u[(0, 0)] + 49.0).abs() < 1e-12);
        assert!(mass.clone().cholesky().is_some());
        let (sys, map) = make_pendulum5().unwrap();
        assert_eq!(map.dim(), 56);
        assert!(linalg::spectral_radius(&sys.closed_loop()) < 1.0);
    }

    #[test]
    fn lqr_zero_dynamics_gives_zero_gain() {
        let f = DMatrix::zeros(2, 2);
        let g = DMatrix::identity(2, 1);
        let q = DMatrix::identity(2, 2);
        let sol = solve_lqr(&f, &g, &q, &DMatrix::identity(1, 1), 0.9).unwrap();
        assert!(sol.gain.amax() < 1e-12);
    }

    #[test]
    fn scalar_riccati_matches_hand_iteration() {
        let (a, b, q, r, gm) = (1.2_f64, 0.5_f64, 1.0_f64, 0.3_f64, 0.9_f64);
        let f = DMatrix::from_element(1, 1, a);
        let g = DMatrix::from_element(1, 1, b);
        let qm = DMatrix::from_element(1, 1, q);
        let rm = DMatrix::from_element(1, 1, r);
        let mut p = 1.0_f64;
        let mut pm = DMatrix::from_element(1, 1, 1.0);
        for _ in 0..3 {
            let l = gm * b * p * a / (r + gm * b * b * p);
            let fcl = a - b * l;
            p = q + l * r * l + gm * fcl * p * fcl;
            pm = riccati_step(&f, &g, &qm, &rm, gm, &pm).unwrap().0;
        }
        assert!((pm[(0, 0)] - p).abs() < 1e-12);
    }

    #[test]
    fn quadratic_value_degenerate_cases() {
        let sys = LinearGaussSystem {
            f: DMatrix::zeros(2, 2),
            g: DMatrix::zeros(2, 1),
            noise_cov: DMatrix::zeros(2, 2),
            policy_gain: DMatrix::zeros(1, 2),
            policy_noise: 0.0,
            reward_q: DMatrix::zeros(2, 2),
            reward_r: DMatrix::zeros(1, 1),
            dt: 0.1,
        };
        let v = exact_quadratic_value(&sys, 0.9).unwrap();
        assert_eq!((v.p_v.amax(), v.c_v), (0.0, 0.0));
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let v = exact_quadratic_value(&LinearGaussSystem { reward_q: q.clone(), ..sys }, 0.9).unwrap();
        assert!((v.p_v - q).amax() < 1e-15);
    }

    #[test]
    fn quadratic_value_matches_rollouts() {
        let (sys, _) = make_cartpole().unwrap();
        let gamma = 0.95;
        let v = exact_quadratic_value(&sys, gamma).unwrap();
        let sys = Arc::new(sys);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..5 {
            let s0 = DVector::from_fn(4, |_, _| rng.random::<f64>() * 0.2 - 0.1);
            let mut src = LinearGaussSampler::new(sys.clone(), 100 + i, SamplingMode::Chain, 0.0).unwrap();
            let rollouts = 20_000;
            let horizon = 300;
            let mut total = 0.0;
            for _ in 0..rollouts {
                let mut s = s0.clone();
                let mut disc = 1.0;
                for _ in 0..horizon {
                    let a = src.act(&s);
                    total += disc * sys.reward(&s, &a);
                    s = src.advance(&s, &a);
                    disc *= gamma;
                }
            }
            let mc = total / rollouts as f64;
            let exact = v.value(&s0);
            assert!((mc - exact).abs() <= 0.02 * exact.abs(), "state {i}: mc {mc} exact {exact}");
        }
    }

    #[test]
    fn quadratic_coefficients_reproduce_value() {
        let (sys, map) = make_cartpole().unwrap();
        let v = exact_quadratic_value(&sys, 0.95).unwrap();
        let z = v.coefficients();
        let s = DVector::from_vec(vec![0.1, -0.3, 0.2, 0.05]);
        let phi = map.evaluate(&State::Point(s.clone())).unwrap();
        assert!((phi.dot(&z) - v.value(&s)).abs() < 1e-10);
    }
}
