//! Concrete problem instances built from a config, with the moment
//! oracle used to score prediction vectors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::{EnvKind, ExperimentConfig, FeatureKind};
use crate::envs::{self, LinearGaussSampler, LinearGaussSystem};
use crate::error::Result;
use crate::features::FeatureMap;
use crate::mrp::{FiniteMrp, MrpSampler, OmegaTriple, SamplingMode, State, TransitionSource};
use crate::objectives::{omega_mspbe, ErrorOracle, SampledOracle};

/// Second moments that make MSPBE and MSE quadratic forms in z.
#[derive(Debug, Clone)]
pub struct Moments {
    pub omega: OmegaTriple,
    pub gram: DMatrix<f64>,
    /// E[V φ] and E[V²] under the sampling distribution.
    pub value: Option<(DVector<f64>, f64)>,
}

impl Moments {
    pub fn from_oracle(o: &ErrorOracle) -> Self {
        let weighted = o.proj.d_nu.diagonal().component_mul(&o.value);
        let vphi = o.phi.transpose() * &weighted;
        Self { omega: o.omega.clone(), gram: o.proj.gram.clone(), value: Some((vphi, o.value.dot(&weighted))) }
    }

    pub fn from_sampled(o: &SampledOracle) -> Self {
        Self { omega: o.omega.clone(), gram: o.gram.clone(), value: o.value_moments().map(|(v, vv)| (v.clone(), vv)) }
    }

    pub fn mspbe(&self, z: &DVector<f64>) -> f64 {
        omega_mspbe(&self.omega, z).max(0.0)
    }

    pub fn mse(&self, z: &DVector<f64>) -> Option<f64> {
        self.value.as_ref().map(|(vphi, vv)| (vv - 2.0 * z.dot(vphi) + z.dot(&(&self.gram * z))).max(0.0))
    }
}

#[derive(Debug, Clone)]
pub enum ProblemKind {
    Finite { mrp: Arc<FiniteMrp>, rows: Arc<Vec<DVector<f64>>> },
    Linear { sys: Arc<LinearGaussSystem>, map: FeatureMap, nu_std: f64 },
}

#[derive(Debug, Clone)]
pub struct Problem {
    /// File-name stem: the config name, with `-i{n}` for multi-instance runs.
    pub label: String,
    pub instance: usize,
    pub k: usize,
    pub gamma: f64,
    pub kind: ProblemKind,
    pub moments: Moments,
    /// Exact oracle when the state space is finite.
    pub oracle: Option<Arc<ErrorOracle>>,
}

fn finite(label: String, instance: usize, mrp: FiniteMrp, phi: DMatrix<f64>) -> Result<Problem> {
    let oracle = ErrorOracle::rank_aware(&mrp, &phi)?;
    let rows = (0..phi.nrows()).map(|i| phi.row(i).transpose()).collect();
    Ok(Problem {
        label,
        instance,
        k: phi.ncols(),
        gamma: mrp.gamma,
        moments: Moments::from_oracle(&oracle),
        kind: ProblemKind::Finite { mrp: Arc::new(mrp), rows: Arc::new(rows) },
        oracle: Some(Arc::new(oracle)),
    })
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig, instance: usize) -> Result<Self> {
        let label = if cfg.instances > 1 { format!("{}-i{}", cfg.name, instance + 1) } else { cfg.name.clone() };
        match cfg.env {
            EnvKind::BairdPerfect | EnvKind::BairdImperfect => {
                let (mrp, phi) = envs::make_baird(cfg.env == EnvKind::BairdPerfect, cfg.gamma)?;
                finite(label, instance, mrp, phi)
            }
            EnvKind::Ring => {
                let (mrp, phi) = envs::make_ring(cfg.gamma)?;
                finite(label, instance, mrp, phi)
            }
            EnvKind::Random => {
                let spec = envs::BinomialRandomMdpSpec::generate(cfg.states, cfg.instance_seed + instance as u64)?;
                let mrp = envs::make_random_mdp(&spec, cfg.gamma)?;
                let map = match cfg.features {
                    FeatureKind::Fourier => FeatureMap::fourier_normalized(cfg.states, cfg.k),
                    _ => FeatureMap::rbf_even(cfg.states, cfg.k)?,
                };
                let phi = map.matrix_over(cfg.states)?;
                finite(label, instance, mrp, phi)
            }
            EnvKind::CartPole | EnvKind::Pendulum5 => {
                let (sys, map) = if cfg.env == EnvKind::CartPole {
                    envs::make_cartpole_with(&envs::CartPoleParams { gamma: cfg.gamma, ..Default::default() })?
                } else {
                    envs::make_pendulum5_with(&envs::PendulumParams { gamma: cfg.gamma, ..Default::default() })?
                };
                let map = match map {
                    FeatureMap::Quadratic { d, .. } => FeatureMap::Quadratic { d, scale: cfg.feature_scale },
                    other => other,
                };
                let value = envs::exact_quadratic_value(&sys, cfg.gamma)?;
                let sys = Arc::new(sys);
                let mut held = LinearGaussSampler::new(sys.clone(), cfg.heldout_seed, SamplingMode::Iid, cfg.nu_std)?;
                let v = |s: &State| match s {
                    State::Point(x) => value.value(x),
                    State::Index(_) => f64::NAN,
                };
                let sampled = SampledOracle::estimate(&mut held, &map, cfg.gamma, cfg.heldout, Some(v))?;
                Ok(Problem {
                    label,
                    instance,
                    k: map.dim(),
                    gamma: cfg.gamma,
                    moments: Moments::from_sampled(&sampled),
                    kind: ProblemKind::Linear { sys, map, nu_std: cfg.nu_std },
                    oracle: None,
                })
            }
        }
    }

    pub fn source(&self, seed: u64, mode: SamplingMode) -> Result<Box<dyn TransitionSource>> {
        Ok(match &self.kind {
            ProblemKind::Finite { mrp, .. } => Box::new(MrpSampler::new(mrp.clone(), seed, mode)),
            ProblemKind::Linear { sys, nu_std, .. } => {
                Box::new(LinearGaussSampler::new(sys.clone(), seed, mode, *nu_std)?)
            }
        })
    }

    pub fn features_into(&self, s: &State, out: &mut DVector<f64>) -> Result<()> {
        match &self.kind {
            ProblemKind::Finite { rows, .. } => {
                let i = s.index().ok_or(crate::CoreError::DimensionMismatch { expected: 1, got: 0 })?;
                let row = rows.get(i).ok_or(crate::CoreError::DimensionMismatch { expected: rows.len(), got: i })?;
                out.copy_from(row);
                Ok(())
            }
            ProblemKind::Linear { map, .. } => map.evaluate_into(s, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::preset;

    #[test]
    fn finite_moments_match_oracle() {
        let p = Problem::build(&preset("ring-0.99").unwrap(), 0).unwrap();
        let o = p.oracle.as_ref().unwrap();
        for z in [DVector::zeros(8), DVector::from_fn(8, |i, _| i as f64 - 3.0)] {
            assert!((p.moments.mspbe(&z) - o.mspbe(&z)).abs() < 1e-8 * (1.0 + o.mspbe(&z)));
            let mse = p.moments.mse(&z).unwrap();
            assert!((mse - o.mse(&z)).abs() < 1e-8 * (1.0 + o.mse(&z)));
        }
    }

    #[test]
    fn instances_differ_and_are_labelled() {
        let mut c = preset("table3-scaled").unwrap();
        c.states = 30;
        c.k = 5;
        let a = Problem::build(&c, 0).unwrap();
        let b = Problem::build(&c, 1).unwrap();
        assert_eq!(a.label, "table3-scaled-i1");
        assert_eq!(b.label, "table3-scaled-i2");
        assert_ne!(a.moments.omega.w0, b.moments.omega.w0);
    }

    #[test]
    fn cartpole_value_coefficients_score_near_zero() {
        let mut c = preset("cartpole").unwrap();
        c.heldout = 20_000;
        let p = Problem::build(&c, 0).unwrap();
        let (sys, _) = envs::make_cartpole().unwrap();
        let coeffs = envs::exact_quadratic_value(&sys, 0.95).unwrap().coefficients_scaled(c.feature_scale);
        let mse = p.moments.mse(&coeffs).unwrap();
        assert!(mse < 1e-12 * (1.0 + p.moments.value.as_ref().unwrap().1), "{mse}");
        assert!(p.moments.mse(&DVector::zeros(p.k)).unwrap() > 0.1);
    }
}
