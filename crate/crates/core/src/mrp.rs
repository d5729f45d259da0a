//! Finite Markov reward processes, trajectory sampling and exact solvers.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg;

/// A state is either an index into a finite MRP or a point in ℝᵈ.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Index(usize),
    Point(DVector<f64>),
}

impl State {
    pub fn index(&self) -> Option<usize> {
        match self {
            State::Index(i) => Some(*i),
            State::Point(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: State,
    pub r: f64,
    pub s_next: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Each `s_t` drawn independently from ν.
    Iid,
    /// `s_{t+1}` continues from the previous next-state.
    Chain,
}

/// Anything that produces a stream of transitions.
pub trait TransitionSource: Send {
    fn next_transition(&mut self) -> Transition;

    /// Draws a second next-state from `s`, independent of the one already
    /// returned. Sources that only replay a fixed trajectory cannot do this.
    fn resample_next(&mut self, s: &State) -> Result<State>;
}

/// Expectation statistics of the decoupled MSPBE form.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaTriple {
    pub w0: DVector<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
}

impl OmegaTriple {
    pub fn zeros(k: usize) -> Self {
        Self { w0: DVector::zeros(k), w1: DMatrix::zeros(k, k), w2: DMatrix::zeros(k, k) }
    }

    pub fn dim(&self) -> usize {
        self.w0.len()
    }
}

#[derive(Debug, Clone)]
pub struct FiniteMrp {
    pub n: usize,
    pub p: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
    pub nu: DVector<f64>,
    pub r_max: f64,
}

const STOCHASTIC_TOL: f64 = 1e-12;

impl FiniteMrp {
    pub fn new(p: DMatrix<f64>, r: DMatrix<f64>, gamma: f64, nu: DVector<f64>) -> Result<Self> {
        let n = p.nrows();
        if n == 0 {
            return Err(CoreError::Empty);
        }
        if p.ncols() != n {
            return Err(CoreError::DimensionMismatch { expected: n, got: p.ncols() });
        }
        if r.nrows() != n || r.ncols() != n {
            return Err(CoreError::DimensionMismatch { expected: n, got: r.nrows().min(r.ncols()) });
        }
        if nu.len() != n {
            return Err(CoreError::DimensionMismatch { expected: n, got: nu.len() });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(CoreError::InvalidModel(format!("discount {gamma} outside [0,1)")));
        }
        for (s, row) in p.row_iter().enumerate() {
            if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(CoreError::InvalidModel(format!("row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(CoreError::InvalidModel(format!("row {s} sums to {sum}")));
            }
        }
        if nu.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (nu.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(CoreError::InvalidModel("nu is not a probability vector".into()));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::InvalidModel("non-finite reward".into()));
        }
        let r_max = r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Ok(Self { n, p, r, gamma, nu, r_max })
    }

    pub fn with_nu(&self, nu: DVector<f64>) -> Result<Self> {
        Self::new(self.p.clone(), self.r.clone(), self.gamma, nu)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.p.clone(), self.r.clone(), gamma, self.nu.clone())
    }

    /// R̄(s) = Σ_{s'} P(s,s') R(s,s').
    pub fn expected_reward(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, (0..self.n).map(|s| self.p.row(s).dot(&self.r.row(s))))
    }

    pub fn nu_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.nu)
    }

    /// V = (I − γP)⁻¹ R̄.
    pub fn exact_value_function(&self) -> Result<DVector<f64>> {
        let a = DMatrix::identity(self.n, self.n) - &self.p * self.gamma;
        linalg::solve(&a, &self.expected_reward())
    }

    /// True when every state reaches every other state.
    pub fn is_irreducible(&self) -> bool {
        let reach = |forward: bool| {
            let mut seen = vec![false; self.n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..self.n {
                    let w = if forward { self.p[(u, v)] } else { self.p[(v, u)] };
                    if w > 0.0 && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|x| x)
        };
        reach(true) && reach(false)
    }

    /// Stationary distribution of an irreducible chain.
    ///
    /// Irreducibility is checked first; the distribution is then the unique
    /// solution of (I − Pᵀ + 11ᵀ)π = 1.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        if !self.is_irreducible() {
            return Err(CoreError::NonErgodic("transition graph is not strongly connected".into()));
        }
        let n = self.n;
        let a = DMatrix::identity(n, n) - self.p.transpose() + DMatrix::from_element(n, n, 1.0);
        let mut pi = linalg::solve(&a, &DVector::from_element(n, 1.0))?;
        pi.iter_mut().for_each(|x| *x = x.max(0.0));
        let total = pi.sum();
        Ok(pi / total)
    }

    /// ω⁽⁰⁾ = ΦᵀDR̄, ω⁽¹⁾ = ΦᵀD(γP − I)Φ, ω⁽²⁾ = (ΦᵀDΦ)⁻¹.
    pub fn exact_statistics(&self, phi: &DMatrix<f64>) -> Result<OmegaTriple> {
        let (w0, w1, gram) = self.moment_parts(phi)?;
        let w2 = linalg::inverse(&gram)?;
        Ok(OmegaTriple { w0, w1, w2 })
    }

    /// Same as [`Self::exact_statistics`] but with a pseudo-inverse Gram, for
    /// feature matrices that are rank deficient under ν.
    pub fn exact_statistics_pinv(&self, phi: &DMatrix<f64>) -> Result<OmegaTriple> {
        let (w0, w1, gram) = self.moment_parts(phi)?;
        Ok(OmegaTriple { w0, w1, w2: linalg::pinv_sym(&gram) })
    }

    fn moment_parts(&self, phi: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        if phi.nrows() != self.n {
            return Err(CoreError::DimensionMismatch { expected: self.n, got: phi.nrows() });
        }
        let dphi = self.nu_diag() * phi;
        let w0 = dphi.transpose() * self.expected_reward();
        let w1 = dphi.transpose() * (&self.p * phi * self.gamma - phi);
        let gram = linalg::symmetrize(&(phi.transpose() * &dphi));
        Ok((w0, w1, gram))
    }

    /// A = E[φ(φ − γφ')ᵀ], b = E[rφ]; the TD fixed point solves A z = b.
    pub fn td_system(&self, phi: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (w0, w1, _) = self.moment_parts(phi)?;
        Ok((-w1, w0))
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Seeded transition stream from a finite MRP.
#[derive(Debug, Clone)]
pub struct MrpSampler {
    mrp: Arc<FiniteMrp>,
    rng: ChaCha8Rng,
    mode: SamplingMode,
    rows: Vec<Vec<f64>>,
    start: Vec<f64>,
    current: Option<usize>,
}

impl MrpSampler {
    pub fn new(mrp: Arc<FiniteMrp>, seed: u64, mode: SamplingMode) -> Self {
        let rows = (0..mrp.n).map(|s| cumulative(mrp.p.row(s).iter().copied())).collect();
        let start = cumulative(mrp.nu.iter().copied());
        Self { mrp, rng: ChaCha8Rng::seed_from_u64(seed), mode, rows, start, current: None }
    }

    pub fn mrp(&self) -> &FiniteMrp {
        &self.mrp
    }

    fn next_from(&mut self, s: usize) -> usize {
        let u = self.rng.random::<f64>();
        draw(&self.rows[s], u)
    }
}

impl TransitionSource for MrpSampler {
    fn next_transition(&mut self) -> Transition {
        let s = match (self.mode, self.current) {
            (SamplingMode::Chain, Some(c)) => c,
            _ => {
                let u = self.rng.random::<f64>();
                draw(&self.start, u)
            }
        };
        let s_next = self.next_from(s);
        self.current = Some(s_next);
        Transition { s: State::Index(s), r: self.mrp.r[(s, s_next)], s_next: State::Index(s_next) }
    }

    fn resample_next(&mut self, s: &State) -> Result<State> {
        let i = s.index().ok_or(CoreError::DimensionMismatch { expected: 1, got: 0 })?;
        Ok(State::Index(self.next_from(i)))
    }
}

/// Replays a recorded trajectory; cannot double-sample.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    data: Vec<Transition>,
    pos: usize,
}

impl ReplaySource {
    pub fn new(data: Vec<Transition>) -> Result<Self> {
        if data.is_empty() {
            return Err(CoreError::Empty);
        }
        Ok(Self { data, pos: 0 })
    }
}

impl TransitionSource for ReplaySource {
    fn next_transition(&mut self) -> Transition {
        let t = self.data[self.pos].clone();
        self.pos = (self.pos + 1) % self.data.len();
        t
    }

    fn resample_next(&mut self, _s: &State) -> Result<State> {
        Err(CoreError::NoDoubleSampling)
    }
}
