//! Exact error functionals on finite MRPs: MSPBE, MSBR, MSE and the
//! ν-weighted projection onto the feature span.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::mrp::{FiniteMrp, OmegaTriple};

#[derive(Debug, Clone)]
pub struct Projection {
    pub d_nu: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub gram_inv: DMatrix<f64>,
}

impl Projection {
    /// Π = Φ(ΦᵀDΦ)⁻¹ΦᵀD; errors if the Gram matrix is singular.
    pub fn new(phi: &DMatrix<f64>, nu: &DVector<f64>) -> Result<Self> {
        Self::build(phi, nu, |g| linalg::inverse(g))
    }

    /// Same projector built from the Gram pseudo-inverse, so linearly
    /// dependent feature columns are allowed.
    pub fn rank_aware(phi: &DMatrix<f64>, nu: &DVector<f64>) -> Result<Self> {
        Self::build(phi, nu, |g| Ok(linalg::pinv_sym(g)))
    }

    fn build(
        phi: &DMatrix<f64>,
        nu: &DVector<f64>,
        invert: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        if phi.nrows() != nu.len() {
            return Err(CoreError::DimensionMismatch { expected: nu.len(), got: phi.nrows() });
        }
        let d_nu = DMatrix::from_diagonal(nu);
        let gram = linalg::symmetrize(&(phi.transpose() * &d_nu * phi));
        let gram_inv = invert(&gram)?;
        let pi = phi * &gram_inv * phi.transpose() * &d_nu;
        Ok(Self { d_nu, pi, gram, gram_inv })
    }
}

/// Exact oracle bundle for one (MRP, Φ) pair.
#[derive(Debug, Clone)]
pub struct ErrorOracle {
    pub mrp: FiniteMrp,
    pub phi: DMatrix<f64>,
    pub proj: Projection,
    pub omega: OmegaTriple,
    pub value: DVector<f64>,
    rbar: DVector<f64>,
}

impl ErrorOracle {
    pub fn new(mrp: &FiniteMrp, phi: &DMatrix<f64>) -> Result<Self> {
        let proj = Projection::new(phi, &mrp.nu)?;
        Self::assemble(mrp, phi, proj)
    }

    pub fn rank_aware(mrp: &FiniteMrp, phi: &DMatrix<f64>) -> Result<Self> {
        let proj = Projection::rank_aware(phi, &mrp.nu)?;
        Self::assemble(mrp, phi, proj)
    }

    fn assemble(mrp: &FiniteMrp, phi: &DMatrix<f64>, proj: Projection) -> Result<Self> {
        let (a, b) = mrp.td_system(phi)?;
        let omega = OmegaTriple { w0: b, w1: -a, w2: proj.gram_inv.clone() };
        Ok(Self {
            mrp: mrp.clone(),
            phi: phi.clone(),
            value: mrp.exact_value_function()?,
            rbar: mrp.expected_reward(),
            proj,
            omega,
        })
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.iter().zip(self.mrp.nu.iter()).map(|(x, w)| w * x * x).sum()
    }

    /// TΦz = R̄ + γPΦz.
    pub fn bellman(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.rbar + &self.mrp.p * (&self.phi * z) * self.mrp.gamma
    }

    /// ‖Φz − ΠTΦz‖²_ν.
    pub fn mspbe(&self, z: &DVector<f64>) -> f64 {
        self.norm_sq(&(&self.phi * z - &self.proj.pi * self.bellman(z)))
    }

    /// (ω⁽⁰⁾ + ω⁽¹⁾z)ᵀ ω⁽²⁾ (ω⁽⁰⁾ + ω⁽¹⁾z).
    pub fn mspbe_omega(&self, z: &DVector<f64>) -> f64 {
        omega_mspbe(&self.omega, z)
    }

    /// ‖TΦz − Φz‖²_ν.
    pub fn msbr(&self, z: &DVector<f64>) -> f64 {
        self.norm_sq(&(self.bellman(z) - &self.phi * z))
    }

    /// ‖TΦz − ΠTΦz‖²_ν, the part of the Bellman residual outside the span.
    pub fn residual_outside_span(&self, z: &DVector<f64>) -> f64 {
        let t = self.bellman(z);
        self.norm_sq(&(&t - &self.proj.pi * &t))
    }

    /// ‖V − Φz‖²_ν.
    pub fn mse(&self, z: &DVector<f64>) -> f64 {
        self.norm_sq(&(&self.value - &self.phi * z))
    }

    /// 2 ω⁽¹⁾ᵀ ω⁽²⁾ (ω⁽⁰⁾ + ω⁽¹⁾z).
    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        omega_gradient(&self.omega, z)
    }

    /// 2 ω⁽¹⁾ᵀ ω⁽²⁾ ω⁽¹⁾.
    pub fn hessian(&self) -> DMatrix<f64> {
        self.omega.w1.transpose() * &self.omega.w2 * &self.omega.w1 * 2.0
    }

    /// TD fixed point, solving A z = b without regularization.
    pub fn td_fixed_point(&self) -> Result<DVector<f64>> {
        linalg::solve(&(-&self.omega.w1), &self.omega.w0)
    }

    /// Coefficients of the ν-projection of the true value function.
    pub fn projected_value_coeffs(&self) -> DVector<f64> {
        &self.proj.gram_inv * self.phi.transpose() * &self.proj.d_nu * &self.value
    }
}

pub fn omega_mspbe(om: &OmegaTriple, z: &DVector<f64>) -> f64 {
    let e = &om.w0 + &om.w1 * z;
    e.dot(&(&om.w2 * &e))
}

pub fn omega_gradient(om: &OmegaTriple, z: &DVector<f64>) -> DVector<f64> {
    let e = &om.w0 + &om.w1 * z;
    om.w1.transpose() * (&om.w2 * e) * 2.0
}

pub fn mspbe(m: &FiniteMrp, phi: &DMatrix<f64>, z: &DVector<f64>) -> Result<f64> {
    Ok(ErrorOracle::new(m, phi)?.mspbe(z))
}

pub fn msbr(m: &FiniteMrp, phi: &DMatrix<f64>, z: &DVector<f64>) -> Result<f64> {
    let v = &m.expected_reward() + &m.p * (phi * z) * m.gamma - phi * z;
    Ok(v.iter().zip(m.nu.iter()).map(|(x, w)| w * x * x).sum())
}

pub fn mse(m: &FiniteMrp, phi: &DMatrix<f64>, z: &DVector<f64>) -> Result<f64> {
    let v = m.exact_value_function()? - phi * z;
    Ok(v.iter().zip(m.nu.iter()).map(|(x, w)| w * x * x).sum())
}

/// Returns C(ν) = max P(s,s')/ν(s) and √C(ν)/(1 − γ).
pub fn error_bound_constants(m: &FiniteMrp, nu: &DVector<f64>) -> Result<(f64, f64)> {
    if nu.len() != m.n {
        return Err(CoreError::DimensionMismatch { expected: m.n, got: nu.len() });
    }
    let mut c = 0.0_f64;
    for s in 0..m.n {
        if nu[s] <= 0.0 {
            return Err(CoreError::ZeroWeight(s));
        }
        c = c.max(m.p.row(s).max() / nu[s]);
    }
    Ok((c, c.sqrt() / (1.0 - m.gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrp::tests::{random_mrp, swap_chain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_phi(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn identity_features_project_to_identity() {
        let p = Projection::new(&DMatrix::identity(4, 4), &DVector::from_element(4, 0.25)).unwrap();
        assert!((p.pi - DMatrix::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn projection_properties() {
        let phi = random_phi(6, 3, 1);
        let nu = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.15, 0.05, 0.2]);
        let p = Projection::new(&phi, &nu).unwrap();
        assert!((&p.pi * &p.pi - &p.pi).amax() < 1e-10);
        assert!((&p.pi * &phi - &phi).amax() < 1e-10);
        assert!((&p.d_nu * &p.pi - p.pi.transpose() * &p.d_nu).amax() < 1e-10);
    }

    #[test]
    fn singular_gram_errors_unless_rank_aware() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let nu = DVector::from_element(3, 1.0 / 3.0);
        assert!(matches!(Projection::new(&phi, &nu), Err(CoreError::Singular(_))));
        let p = Projection::rank_aware(&phi, &nu).unwrap();
        assert!((&p.pi * &p.pi - &p.pi).amax() < 1e-10);
    }

    #[test]
    fn swap_chain_errors_at_zero() {
        let o = ErrorOracle::new(&swap_chain(0.5), &DMatrix::identity(2, 2)).unwrap();
        let z = DVector::zeros(2);
        assert!((o.mspbe(&z) - 1.0).abs() < 1e-14);
        assert!((o.msbr(&z) - 1.0).abs() < 1e-14);
        assert!((o.mse(&z) - 4.0).abs() < 1e-14);
        let v = o.value.clone();
        assert!(o.mse(&v) < 1e-28 && o.msbr(&v) < 1e-28);
    }

    #[test]
    fn mspbe_vanishes_at_fixed_point() {
        let m = random_mrp(5, 2);
        let o = ErrorOracle::new(&m, &random_phi(5, 3, 2)).unwrap();
        let z = o.td_fixed_point().unwrap();
        assert!(o.mspbe(&z) < 1e-20);
    }

    #[test]
    fn decomposition_and_forms_agree() {
        for seed in 0..20 {
            let m = random_mrp(7, seed);
            let o = ErrorOracle::new(&m, &random_phi(7, 3, seed + 100)).unwrap();
            let z = random_phi(3, 1, seed + 200).column(0).into_owned() * 3.0;
            assert!((o.msbr(&z) - o.mspbe(&z) - o.residual_outside_span(&z)).abs() < 1e-9);
            assert!((o.mspbe(&z) - o.mspbe_omega(&z)).abs() < 1e-9);
            assert!((msbr(&m, &o.phi, &z).unwrap() - o.msbr(&z)).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_constants() {
        let (c, f) = error_bound_constants(&swap_chain(0.5), &DVector::from_element(2, 0.5)).unwrap();
        assert_eq!(c, 2.0);
        assert!((f - 2.0_f64.sqrt() / 0.5).abs() < 1e-15);
        let n = 4;
        let m = FiniteMrp::new(
            DMatrix::from_element(n, n, 0.25),
            DMatrix::zeros(n, n),
            0.5,
            DVector::from_element(n, 0.25),
        )
        .unwrap();
        assert!((error_bound_constants(&m, &m.nu).unwrap().0 - 1.0).abs() < 1e-15);
        let mut nu = DVector::from_element(n, 1.0 / 3.0);
        nu[2] = 0.0;
        assert_eq!(error_bound_constants(&m, &nu), Err(CoreError::ZeroWeight(2)));
    }

    #[test]
    fn hessian_positive_for_full_rank() {
        let m = random_mrp(6, 8);
        let o = ErrorOracle::new(&m, &random_phi(6, 3, 8)).unwrap();
        let eig = linalg::symmetrize(&o.hessian()).symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }
}

/// Moment estimates of the error functionals from a held-out transition
/// stream, for problems without a finite state space.
#[derive(Debug, Clone)]
pub struct SampledOracle {
    pub omega: OmegaTriple,
    pub gram: DMatrix<f64>,
    /// E[V φ] and E[V²], present when a value function was supplied.
    value_moments: Option<(DVector<f64>, f64)>,
}

impl SampledOracle {
    /// Averages rφ, φ(γφ' − φ)ᵀ and φφᵀ over `n` transitions from `src`.
    pub fn estimate<S, V>(
        src: &mut S,
        map: &crate::features::FeatureMap,
        discount: f64,
        n: usize,
        value: Option<V>,
    ) -> Result<Self>
    where
        S: crate::mrp::TransitionSource + ?Sized,
        V: Fn(&crate::mrp::State) -> f64,
    {
        if n == 0 {
            return Err(CoreError::Empty);
        }
        let k = map.dim();
        let mut w0 = DVector::zeros(k);
        let mut w1 = DMatrix::zeros(k, k);
        let mut gram = DMatrix::zeros(k, k);
        let mut vphi = DVector::zeros(k);
        let mut vv = 0.0;
        let mut phi = DVector::zeros(k);
        let mut next = DVector::zeros(k);
        for _ in 0..n {
            let tr = src.next_transition();
            map.evaluate_into(&tr.s, &mut phi)?;
            map.evaluate_into(&tr.s_next, &mut next)?;
            w0.axpy(tr.r, &phi, 1.0);
            let d = &next * discount - &phi;
            w1.ger(1.0, &phi, &d, 1.0);
            gram.ger(1.0, &phi, &phi, 1.0);
            if let Some(v) = &value {
                let x = v(&tr.s);
                vphi.axpy(x, &phi, 1.0);
                vv += x * x;
            }
        }
        let inv_n = 1.0 / n as f64;
        let gram = linalg::symmetrize(&(gram * inv_n));
        let w2 = linalg::inverse(&gram)?;
        Ok(Self {
            omega: OmegaTriple { w0: w0 * inv_n, w1: w1 * inv_n, w2 },
            gram,
            value_moments: value.map(|_| (vphi * inv_n, vv * inv_n)),
        })
    }

    pub fn mspbe(&self, z: &DVector<f64>) -> f64 {
        omega_mspbe(&self.omega, z).max(0.0)
    }

    /// (E[V φ], E[V²]) when a value function was supplied.
    pub fn value_moments(&self) -> Option<(&DVector<f64>, f64)> {
        self.value_moments.as_ref().map(|(v, vv)| (v, *vv))
    }

    /// E[(V − φᵀz)²] from the stored moments.
    pub fn mse(&self, z: &DVector<f64>) -> Option<f64> {
        self.value_moments
            .as_ref()
            .map(|(vphi, vv)| (vv - 2.0 * z.dot(vphi) + z.dot(&(&self.gram * z))).max(0.0))
    }
}
