//! Feature maps φ: S → ℝᵏ.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::mrp::State;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// Indicator features over `n` discrete states.
    Tabular { n: usize },
    /// (1, u₁², …, u_d², u₁u₂, u₁u₃, …, u_{d−1}u_d) of u = scale · s on ℝᵈ.
    Quadratic { d: usize, scale: f64 },
    /// Gaussian bumps on a scalar state id.
    Rbf { centers: Vec<f64>, widths: Vec<f64> },
    /// Alternating cosine/sine terms on `scale · s` for a scalar state id.
    Fourier { k: usize, scale: f64 },
    /// Row `s` of a fixed matrix.
    Explicit(DMatrix<f64>),
}

impl FeatureMap {
    /// RBF layout spreading `k` bumps evenly over ids `0..n`.
    ///
    /// Centers sit at `(n/k)(i − ½)` with width `n/(2k)`; for `n = 1000`,
    /// `k = 50` this gives centers 10, 30, … and width 10.
    pub fn rbf_even(n: usize, k: usize) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(CoreError::Empty);
        }
        let step = n as f64 / k as f64;
        let centers = (0..k).map(|i| step * (i as f64 + 0.5)).collect();
        Ok(FeatureMap::Rbf { centers, widths: vec![step / 2.0; k] })
    }

    pub fn rbf(centers: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(CoreError::Empty);
        }
        if centers.len() != widths.len() {
            return Err(CoreError::DimensionMismatch { expected: centers.len(), got: widths.len() });
        }
        if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(CoreError::InvalidParameter("RBF widths must be positive".into()));
        }
        Ok(FeatureMap::Rbf { centers, widths })
    }

    /// Fourier features on `2s / n`. Every term then completes whole periods
    /// over ids `0..n`, so the columns are orthogonal there when `k ≤ n`.
    pub fn fourier_normalized(n: usize, k: usize) -> Self {
        FeatureMap::Fourier { k, scale: 2.0 / n.max(1) as f64 }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Tabular { n } => *n,
            FeatureMap::Quadratic { d, .. } => quadratic_dim(*d),
            FeatureMap::Rbf { centers, .. } => centers.len(),
            FeatureMap::Fourier { k, .. } => *k,
            FeatureMap::Explicit(m) => m.ncols(),
        }
    }

    pub fn evaluate(&self, s: &State) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.evaluate_into(s, &mut out)?;
        Ok(out)
    }

    /// Writes φ(s) into `out`, which must already have length `dim()`.
    pub fn evaluate_into(&self, s: &State, out: &mut DVector<f64>) -> Result<()> {
        if out.len() != self.dim() {
            return Err(CoreError::DimensionMismatch { expected: self.dim(), got: out.len() });
        }
        match (self, s) {
            (FeatureMap::Tabular { n }, State::Index(i)) => {
                check_index(*i, *n)?;
                out.fill(0.0);
                out[*i] = 1.0;
            }
            (FeatureMap::Explicit(m), State::Index(i)) => {
                check_index(*i, m.nrows())?;
                out.copy_from(&m.row(*i).transpose());
            }
            (FeatureMap::Rbf { centers, widths }, State::Index(i)) => {
                let x = *i as f64;
                for (j, (c, w)) in centers.iter().zip(widths).enumerate() {
                    out[j] = (-(x - c).powi(2) / (2.0 * w * w)).exp();
                }
            }
            (FeatureMap::Fourier { k, scale }, State::Index(i)) => {
                let x = *i as f64 * scale;
                for j in 1..=*k {
                    out[j - 1] = if j == 1 {
                        1.0
                    } else if j % 2 == 1 {
                        ((j + 1) as f64 * PI * x / 2.0).cos()
                    } else {
                        (j as f64 * PI * x / 2.0).sin()
                    };
                }
            }
            (FeatureMap::Quadratic { d, scale }, State::Point(v)) => {
                if v.len() != *d {
                    return Err(CoreError::DimensionMismatch { expected: *d, got: v.len() });
                }
                let c = scale * scale;
                out[0] = 1.0;
                for a in 0..*d {
                    out[1 + a] = c * v[a] * v[a];
                }
                let mut idx = 1 + d;
                for a in 0..*d {
                    for b in a + 1..*d {
                        out[idx] = c * v[a] * v[b];
                        idx += 1;
                    }
                }
            }
            (FeatureMap::Quadratic { d, .. }, State::Index(_)) => {
                return Err(CoreError::DimensionMismatch { expected: *d, got: 1 })
            }
            (_, State::Point(v)) => return Err(CoreError::DimensionMismatch { expected: 1, got: v.len() }),
        }
        Ok(())
    }

    pub fn build_matrix(&self, states: &[State]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(states.len(), self.dim());
        let mut row = DVector::zeros(self.dim());
        for (i, s) in states.iter().enumerate() {
            self.evaluate_into(s, &mut row)?;
            m.set_row(i, &row.transpose());
        }
        Ok(m)
    }

    /// Φ over the discrete states `0..n`.
    pub fn matrix_over(&self, n: usize) -> Result<DMatrix<f64>> {
        let states: Vec<State> = (0..n).map(State::Index).collect();
        self.build_matrix(&states)
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        Err(CoreError::DimensionMismatch { expected: n, got: i + 1 })
    } else {
        Ok(())
    }
}

pub fn quadratic_dim(d: usize) -> usize {
    1 + d + d * d.saturating_sub(1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rbf_peak_at_center() {
        let f = FeatureMap::rbf(vec![3.0, 10.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(f.evaluate(&State::Index(3)).unwrap()[0], 1.0);
    }

    #[test]
    fn even_rbf_reproduces_reference_layout() {
        match FeatureMap::rbf_even(1000, 50).unwrap() {
            FeatureMap::Rbf { centers, widths } => {
                for (i, c) in centers.iter().enumerate() {
                    assert!((c - (10.0 + 20.0 * i as f64)).abs() < 1e-12);
                }
                assert!(widths.iter().all(|w| (*w - 10.0).abs() < 1e-12));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn normalized_fourier_columns_are_orthogonal() {
        let m = FeatureMap::fourier_normalized(1000, 50).matrix_over(1000).unwrap();
        let g = m.transpose() * &m;
        for i in 0..50 {
            let want = if i == 0 { 1000.0 } else { 500.0 };
            assert!((g[(i, i)] - want).abs() < 1e-8, "{i}");
            for j in 0..i {
                assert!(g[(i, j)].abs() < 1e-8, "{i} {j}");
            }
        }
    }

    #[test]
    fn fourier_sine_zero() {
        let f = FeatureMap::Fourier { k: 4, scale: 1.0 };
        let v = f.evaluate(&State::Index(1)).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1].abs() < 1e-15);
    }

    #[test]
    fn quadratic_layout() {
        let f = FeatureMap::Quadratic { d: 4, scale: 1.0 };
        assert_eq!(f.dim(), 11);
        assert_eq!(FeatureMap::Quadratic { d: 10, scale: 1.0 }.dim(), 56);
        let v = f.evaluate(&State::Point(DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]))).unwrap();
        let want = [1.0, 1.0, 4.0, 9.0, 16.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0];
        assert_eq!(v.as_slice(), &want);
    }

    #[test]
    fn scaled_quadratic_is_quadratic_of_scaled_state() {
        let s = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let a = FeatureMap::Quadratic { d: 3, scale: 10.0 }.evaluate(&State::Point(s.clone())).unwrap();
        let b = FeatureMap::Quadratic { d: 3, scale: 1.0 }.evaluate(&State::Point(s * 10.0)).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn tabular_matrix_is_identity() {
        let m = FeatureMap::Tabular { n: 3 }.matrix_over(3).unwrap();
        assert_eq!(m, DMatrix::identity(3, 3));
    }

    #[test]
    fn dimension_mismatch() {
        let f = FeatureMap::Quadratic { d: 4, scale: 1.0 };
        assert!(f.evaluate(&State::Point(DVector::zeros(3))).is_err());
        assert!(FeatureMap::Tabular { n: 3 }.evaluate(&State::Index(3)).is_err());
    }

    proptest! {
        #[test]
        fn quadratic_dim_counts_monomials(d in 1usize..=12) {
            let pairs = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).count();
            prop_assert_eq!(quadratic_dim(d), 1 + d + pairs);
        }

        #[test]
        fn rbf_in_unit_interval(s in 0usize..1000, k in 1usize..60) {
            let f = FeatureMap::rbf_even(1000, k).unwrap();
            let v = f.evaluate(&State::Index(s)).unwrap();
            prop_assert!(v.iter().all(|x| *x >= 0.0 && *x <= 1.0));
            // Strictly positive wherever exp does not underflow.
            if let FeatureMap::Rbf { centers, widths } = &f {
                for (j, (c, w)) in centers.iter().zip(widths).enumerate() {
                    if ((s as f64 - c) / w).abs() < 30.0 {
                        prop_assert!(v[j] > 0.0);
                    }
                }
            }
        }

        #[test]
        fn fourier_bounded(s in 0usize..5000, k in 1usize..60, raw in proptest::bool::ANY) {
            let f = if raw { FeatureMap::Fourier { k, scale: 1.0 } } else { FeatureMap::fourier_normalized(5000, k) };
            let v = f.evaluate(&State::Index(s)).unwrap();
            prop_assert!(v.iter().all(|x| x.abs() <= 1.0));
        }

        #[test]
        fn matrix_rows_match_evaluate(n in 1usize..30, k in 1usize..10) {
            let f = FeatureMap::rbf_even(n, k).unwrap();
            let m = f.matrix_over(n).unwrap();
            for s in 0..n {
                let v = f.evaluate(&State::Index(s)).unwrap();
                prop_assert_eq!(m.row(s).transpose(), v);
            }
        }
    }
}
