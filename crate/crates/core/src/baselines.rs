//! Comparison predictors: TD(0), GTD2, residual gradient, LSTD, recursive
//! LSTD and LSPE. All consume (φ, r, φ') triples.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::sce::StepSize;

/// One transition in feature space. `phi_second` is an independent second
/// next-state sample, required only by residual gradient.
#[derive(Debug, Clone, Copy)]
pub struct FeatureStep<'a> {
    pub phi: &'a DVector<f64>,
    pub r: f64,
    pub phi_next: &'a DVector<f64>,
    pub phi_second: Option<&'a DVector<f64>>,
}

pub trait Predictor: Send {
    fn name(&self) -> &'static str;
    fn update(&mut self, step: &FeatureStep<'_>) -> Result<()>;
    /// Current prediction vector z.
    fn estimate(&self) -> Result<DVector<f64>>;
    fn needs_double_sample(&self) -> bool {
        false
    }

    /// Sets the starting iterate. Estimators that solve from accumulated
    /// sums have no iterate and ignore it.
    fn warm_start(&mut self, _z0: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

fn set_iterate(z: &mut DVector<f64>, z0: &DVector<f64>) -> Result<()> {
    if z0.len() != z.len() {
        return Err(CoreError::DimensionMismatch { expected: z.len(), got: z0.len() });
    }
    z.copy_from(z0);
    Ok(())
}

fn td_error(z: &DVector<f64>, s: &FeatureStep<'_>, gamma: f64) -> f64 {
    s.r + gamma * z.dot(s.phi_next) - z.dot(s.phi)
}

#[derive(Debug, Clone)]
pub struct Td0 {
    pub z: DVector<f64>,
    pub alpha: StepSize,
    pub gamma: f64,
    t: u64,
}

impl Td0 {
    pub fn new(k: usize, alpha: StepSize, gamma: f64) -> Self {
        Self { z: DVector::zeros(k), alpha, gamma, t: 0 }
    }
}

impl Predictor for Td0 {
    fn name(&self) -> &'static str {
        "td0"
    }

    fn update(&mut self, s: &FeatureStep<'_>) -> Result<()> {
        self.t += 1;
        let delta = td_error(&self.z, s, self.gamma);
        self.z.axpy(self.alpha.at(self.t) * delta, s.phi, 1.0);
        Ok(())
    }

    fn estimate(&self) -> Result<DVector<f64>> {
        Ok(self.z.clone())
    }

    fn warm_start(&mut self, z0: &DVector<f64>) -> Result<()> {
        set_iterate(&mut self.z, z0)
    }
}

#[derive(Debug, Clone)]
pub struct Gtd2 {
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub alpha: StepSize,
    pub eta: f64,
    pub gamma: f64,
    t: u64,
}

impl Gtd2 {
    pub fn new(k: usize, alpha: StepSize, eta: f64, gamma: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(CoreError::InvalidParameter(format!("eta={eta} must be positive")));
        }
        Ok(Self { z: DVector::zeros(k), v: DVector::zeros(k), alpha, eta, gamma, t: 0 })
    }
}

impl Predictor for Gtd2 {
    fn name(&self) -> &'static str {
        "gtd2"
    }

    fn update(&mut self, s: &FeatureStep<'_>) -> Result<()> {
        self.t += 1;
        let a = self.alpha.at(self.t);
        let b = self.eta * a;
        let delta = td_error(&self.z, s, self.gamma);
        let pv = s.phi.dot(&self.v);
        self.z.axpy(a * pv, s.phi, 1.0);
        self.z.axpy(-a * pv * self.gamma, s.phi_next, 1.0);
        self.v.axpy(b * (delta - pv), s.phi, 1.0);
        Ok(())
    }

    fn estimate(&self) -> Result<DVector<f64>> {
        Ok(self.z.clone())
    }

    fn warm_start(&mut self, z0: &DVector<f64>) -> Result<()> {
        set_iterate(&mut self.z, z0)
    }
}

#[derive(Debug, Clone)]
pub struct Rg {
    pub z: DVector<f64>,
    pub alpha: StepSize,
    pub gamma: f64,
    t: u64,
}

impl Rg {
    pub fn new(k: usize, alpha: StepSize, gamma: f64) -> Self {
        Self { z: DVector::zeros(k), alpha, gamma, t: 0 }
    }
}

impl Predictor for Rg {
    fn name(&self) -> &'static str {
        "rg"
    }

    fn update(&mut self, s: &FeatureStep<'_>) -> Result<()> {
        let second = s.phi_second.ok_or(CoreError::NoDoubleSampling)?;
        self.t += 1;
        let a = self.alpha.at(self.t) * td_error(&self.z, s, self.gamma);
        self.z.axpy(a, s.phi, 1.0);
        self.z.axpy(-a * self.gamma, second, 1.0);
        Ok(())
    }

    fn estimate(&self) -> Result<DVector<f64>> {
        Ok(self.z.clone())
    }

    fn needs_double_sample(&self) -> bool {
        true
    }

    fn warm_start(&mut self, z0: &DVector<f64>) -> Result<()> {
        set_iterate(&mut self.z, z0)
    }
}

/// Batch LSTD over running sums; solves on demand.
#[derive(Debug, Clone)]
pub struct Lstd {
    pub a_acc: DMatrix<f64>,
    pub b_acc: DVector<f64>,
    pub count: u64,
    pub gamma: f64,
    /// Ridge added to the averaged A before solving (0 = none).
    pub ridge: f64,
}

impl Lstd {
    pub fn new(k: usize, gamma: f64, ridge: f64) -> Self {
        Self { a_acc: DMatrix::zeros(k, k), b_acc: DVector::zeros(k), count: 0, gamma, ridge }
    }

    pub fn averaged(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.count.max(1) as f64;
        (&self.a_acc / n, &self.b_acc / n)
    }
}

impl Predictor for Lstd {
    fn name(&self) -> &'static str {
        "lstd"
    }

    fn update(&mut self, s: &FeatureStep<'_>) -> Result<()> {
        let d = s.phi - s.phi_next * self.gamma;
        self.a_acc.ger(1.0, s.phi, &d, 1.0);
        self.b_acc.axpy(s.r, s.phi, 1.0);
        self.count += 1;
        Ok(())
    }

    fn estimate(&self) -> Result<DVector<f64>> {
        let k = self.b_acc.len();
        if self.count == 0 {
            return Ok(DVector::zeros(k));
        }
        let (mut a, b) = self.averaged();
        for i in 0..k {
            a[(i, i)] += self.ridge;
        }
        linalg::solve(&a, &b)
    }
}

/// LSTD with a Sherman–Morrison update of (εI + Σφ(φ − γφ')ᵀ)⁻¹.
#[derive(Debug, Clone)]
pub struct Rlstd {
    pub inv: DMatrix<f64>,
    pub b_acc: DVector<f64>,
    pub z: DVector<f64>,
    pub gamma: f64,
    pub skipped: u64,
}

pub const RLSTD_EPS: f64 = 1e-2;

impl Rlstd {
    pub fn new(k: usize, gamma: f64) -> Self {
        Self::with_epsilon(k, gamma, RLSTD_EPS)
    }

    pub fn with_epsilon(k: usize, gamma: f64, eps: f64) -> Self {
        Self {
            inv: DMatrix::identity(k, k) / eps,
            b_acc: DVector::zeros(k),
            z: DVector::zeros(k),
            gamma,
            skipped: 0,
        }
    }
}

impl Predictor for Rlstd {
    fn name(&self) -> &'static str {
        "rlstd"
    }

    fn update(&mut self, s: &FeatureStep<'_>) -> Result<()> {
        let v = s.phi - s.phi_next * self.gamma;
        let bu = &self.inv * s.phi;
        let vb = self.inv.tr_mul(&v);
        let denom = 1.0 + v.dot(&bu);
        self.b_acc.axpy(s.r, s.phi, 1.0);
        if denom.abs() < 1e-12 || !denom.is_finite() {
            self.skipped += 1;
        } else {
            self.inv.ger(-1.0 / denom, &bu, &vb, 1.0);
        }
        self.z = &self.inv * &self.b_acc;
        Ok(())
    }

    fn estimate(&self) -> Result<DVector<f64>> {
        Ok(self.z.clone())
    }
}

pub const LSPE_REG: f64 = 1e-8;

/// LSPE in accumulator form: u = (Ĝ + δI)⁻¹(b̂ + γ Ĉ z), z ← z + α(u − z),
/// with Ĝ = mean φφᵀ, Ĉ = mean φφ'ᵀ and b̂ = mean rφ.
#[derive(Debug, Clone)]
pub struct Lspe {
    pub z: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub b_acc: DVector<f64>,
    pub count: u64,
    pub alpha: StepSize,
    pub gamma: f64,
}

impl Lspe {
    pub fn new(k: usize, alpha: StepSize, gamma: f64) -> Self {
        Self {
            z: DVector::zeros(k),
            gram: DMatrix::zeros(k, k),
            cross: DMatrix::zeros(k, k),
            b_acc: DVector::zeros(k),
            count: 0,
            alpha,
            gamma,
        }
    }

    /// Least-squares target from the current sums.
    pub fn target(&self) -> Result<DVector<f64>> {
        let n = self.count.max(1) as f64;
        let k = self.z.len();
        let mut g = &self.gram / n;
        for i in 0..k {
            g[(i, i)] += LSPE_REG;
        }
        let rhs = (&self.b_acc + &self.cross * &self.z * self.gamma) / n;
        match g.clone().cholesky() {
            Some(ch) => Ok(ch.solve(&rhs)),
            None => linalg::solve(&g, &rhs),
        }
    }
}

impl Predictor for Lspe {
    fn name(&self) -> &'static str {
        "lspe"
    }

    fn update(&mut self, s: &FeatureStep<'_>) -> Result<()> {
        self.gram.ger(1.0, s.phi, s.phi, 1.0);
        self.cross.ger(1.0, s.phi, s.phi_next, 1.0);
        self.b_acc.axpy(s.r, s.phi, 1.0);
        self.count += 1;
        let u = self.target()?;
        let a = self.alpha.at(self.count);
        self.z = &self.z * (1.0 - a) + u * a;
        Ok(())
    }

    fn estimate(&self) -> Result<DVector<f64>> {
        Ok(self.z.clone())
    }

    fn warm_start(&mut self, z0: &DVector<f64>) -> Result<()> {
        set_iterate(&mut self.z, z0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrp::tests::{random_mrp, swap_chain};
    use crate::mrp::{MrpSampler, SamplingMode, TransitionSource};
    use crate::objectives::ErrorOracle;
    use std::sync::Arc;

    fn e(k: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(k);
        v[i] = 1.0;
        v
    }

    fn step<'a>(phi: &'a DVector<f64>, r: f64, next: &'a DVector<f64>) -> FeatureStep<'a> {
        FeatureStep { phi, r, phi_next: next, phi_second: Some(next) }
    }

    fn drive(p: &mut dyn Predictor, m: &Arc<crate::mrp::FiniteMrp>, phi: &DMatrix<f64>, n: usize, seed: u64) {
        let mut src = MrpSampler::new(m.clone(), seed, SamplingMode::Iid);
        for _ in 0..n {
            let tr = src.next_transition();
            let f = phi.row(tr.s.index().unwrap()).transpose();
            let g = phi.row(tr.s_next.index().unwrap()).transpose();
            let h = if p.needs_double_sample() {
                let s2 = src.resample_next(&tr.s).unwrap();
                Some(phi.row(s2.index().unwrap()).transpose())
            } else {
                None
            };
            p.update(&FeatureStep { phi: &f, r: tr.r, phi_next: &g, phi_second: h.as_ref() }).unwrap();
        }
    }

    #[test]
    fn td0_examples() {
        let mut td = Td0::new(3, StepSize::Const(0.1), 0.5);
        let z0 = DVector::zeros(3);
        td.update(&step(&e(3, 0), 0.0, &e(3, 1))).unwrap();
        assert_eq!(td.z, z0);
        td.update(&step(&e(3, 0), 1.0, &e(3, 1))).unwrap();
        assert!((td.z[0] - 0.1).abs() < 1e-15 && td.z[1] == 0.0);
    }

    #[test]
    fn gtd2_hand_step() {
        let mut g = Gtd2::new(2, StepSize::Const(0.1), 2.0, 0.5).unwrap();
        g.update(&step(&e(2, 0), 0.0, &e(2, 1))).unwrap();
        assert_eq!(g.z, DVector::zeros(2));
        assert_eq!(g.v, DVector::zeros(2));
        g.z = DVector::from_vec(vec![1.0, 2.0]);
        g.v = DVector::from_vec(vec![0.5, 0.0]);
        let (f, n) = (DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![0.0, 1.0]));
        g.update(&step(&f, 1.0, &n)).unwrap();
        // δ = 1 + 0.5·2 − 3 = −1, φᵀv = 0.5
        let z = DVector::from_vec(vec![1.0 + 0.1 * 0.5, 2.0 + 0.1 * 0.5 - 0.1 * 0.5 * 0.5]);
        let v = DVector::from_vec(vec![0.5 + 0.2 * (-1.5), 0.2 * (-1.5)]);
        assert!((&g.z - z).amax() < 1e-15);
        assert!((&g.v - v).amax() < 1e-15);
        assert!(Gtd2::new(2, StepSize::Const(0.1), 0.0, 0.5).is_err());
    }

    #[test]
    fn rg_requires_second_sample() {
        let mut rg = Rg::new(2, StepSize::Const(0.1), 0.5);
        let f = e(2, 0);
        let s = FeatureStep { phi: &f, r: 1.0, phi_next: &f, phi_second: None };
        assert_eq!(rg.update(&s), Err(CoreError::NoDoubleSampling));
        rg.update(&step(&f, 0.0, &f)).unwrap();
        assert_eq!(rg.z, DVector::zeros(2));
    }

    #[test]
    fn lstd_exact_and_zero_reward() {
        let m = swap_chain(0.5);
        let (a, b) = m.td_system(&DMatrix::identity(2, 2)).unwrap();
        let z = linalg::solve(&a, &b).unwrap();
        assert!((z - DVector::from_element(2, 2.0)).amax() < 1e-14);
        let mut l = Lstd::new(2, 0.5, 0.0);
        l.update(&step(&e(2, 0), 0.0, &e(2, 1))).unwrap();
        l.update(&step(&e(2, 1), 0.0, &e(2, 0))).unwrap();
        assert_eq!(l.estimate().unwrap(), DVector::zeros(2));
        let mut s = Lstd::new(2, 0.5, 0.0);
        s.update(&step(&e(2, 0), 1.0, &e(2, 0))).unwrap();
        assert!(matches!(s.estimate(), Err(CoreError::Singular(_))));
    }

    #[test]
    fn rlstd_rank_one_hand_check() {
        let mut r = Rlstd::with_epsilon(2, 0.5, 1.0);
        let (f, n) = (e(2, 0), e(2, 1));
        r.update(&step(&f, 2.0, &n)).unwrap();
        let a = DMatrix::identity(2, 2) + &f * (&f - &n * 0.5).transpose();
        let want = linalg::inverse(&a).unwrap();
        assert!((&r.inv - &want).amax() < 1e-14);
        assert!((&r.z - want * (&f * 2.0)).amax() < 1e-14);
        let mut zero = Rlstd::new(2, 0.5);
        zero.update(&step(&f, 0.0, &n)).unwrap();
        assert_eq!(zero.z, DVector::zeros(2));
    }

    #[test]
    fn rlstd_agrees_with_lstd() {
        let m = Arc::new(random_mrp(6, 12));
        let phi = DMatrix::from_fn(6, 3, |i, j| ((i + 1) as f64 * (j + 1) as f64 * 0.37).cos());
        let mut l = Lstd::new(3, m.gamma, 0.0);
        let mut r = Rlstd::new(3, m.gamma);
        drive(&mut l, &m, &phi, 100_000, 4);
        drive(&mut r, &m, &phi, 100_000, 4);
        assert!((l.estimate().unwrap() - r.estimate().unwrap()).norm() <= 1e-3);
    }

    #[test]
    fn lspe_fixed_point_and_projection() {
        let m = swap_chain(0.5);
        let mut l = Lspe::new(2, StepSize::Const(1.0), 0.5);
        // Exact expectations: Ĝ = D, Ĉ = DP, b̂ = D R̄ with ν uniform.
        l.gram = DMatrix::identity(2, 2) * 0.5;
        l.cross = &m.p * 0.5;
        l.b_acc = m.expected_reward() * 0.5;
        l.count = 1;
        let z = DVector::from_vec(vec![0.3, -1.0]);
        l.z = z.clone();
        let o = ErrorOracle::new(&m, &DMatrix::identity(2, 2)).unwrap();
        let want = &o.proj.pi * o.bellman(&z);
        assert!((l.target().unwrap() - want).amax() < 1e-7);
        let mut fixed = l.clone();
        fixed.z = o.value.clone();
        assert!((fixed.target().unwrap() - &o.value).amax() < 1e-7);
    }

    #[test]
    fn gtd2_converges_on_swap_chain() {
        let m = Arc::new(swap_chain(0.5));
        let mut g = Gtd2::new(2, StepSize::Power { scale: 1.0, power: 0.75 }, 1.0, 0.5).unwrap();
        drive(&mut g, &m, &DMatrix::identity(2, 2), 1_000_000, 1);
        assert!((g.z.clone() - DVector::from_element(2, 2.0)).amax() < 0.05, "{}", g.z);
    }

    #[test]
    fn all_predictors_reach_value_with_perfect_features() {
        let base = random_mrp(5, 21);
        let shifted = base.r.add_scalar(1.0);
        let m = Arc::new(crate::mrp::FiniteMrp::new(base.p.clone(), shifted, base.gamma, base.nu.clone()).unwrap());
        let phi = DMatrix::identity(5, 5);
        let v = m.exact_value_function().unwrap();
        let o = ErrorOracle::new(&m, &phi).unwrap();
        let mut ps: Vec<Box<dyn Predictor>> = vec![
            Box::new(Td0::new(5, StepSize::Const(0.01), m.gamma)),
            Box::new(Gtd2::new(5, StepSize::Const(0.01), 1.0, m.gamma).unwrap()),
            Box::new(Rg::new(5, StepSize::Const(0.01), m.gamma)),
            Box::new(Lstd::new(5, m.gamma, 0.0)),
            Box::new(Rlstd::new(5, m.gamma)),
            Box::new(Lspe::new(5, StepSize::Const(0.1), m.gamma)),
        ];
        for p in ps.iter_mut() {
            drive(p.as_mut(), &m, &phi, 200_000, 7);
            let z = p.estimate().unwrap();
            let rel = o.mse(&z).sqrt() / o.norm_sq(&v).sqrt();
            assert!(rel < 0.05, "{} rel err {rel}", p.name());
        }
    }
}
