use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Log,
    Linear,
}

/// `F x T` feature matrix, row-major (one row per frequency band).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<S> {
    f: usize,
    t: usize,
    values: Vec<S>,
    domain: Domain,
}

impl<S: Scalar> FeatureMatrix<S> {
    pub fn new(f: usize, t: usize, values: Vec<S>, domain: Domain) -> Result<Self> {
        if f == 0 || t == 0 {
            return Err(shape_err!("feature matrix must be non-empty, got {f} x {t}"));
        }
        if values.len() != f * t {
            return Err(shape_err!("{f} x {t} feature matrix given {} values", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature matrix contains non-finite values".into()));
        }
        Ok(FeatureMatrix { f, t, values, domain })
    }

    pub fn n_bands(&self) -> usize {
        self.f
    }

    pub fn n_frames(&self) -> usize {
        self.t
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn get(&self, band: usize, frame: usize) -> S {
        self.values[band * self.t + frame]
    }

    pub fn row(&self, band: usize) -> &[S] {
        &self.values[band * self.t..(band + 1) * self.t]
    }

    pub fn cast<T: Scalar>(&self) -> FeatureMatrix<T> {
        FeatureMatrix {
            f: self.f,
            t: self.t,
            values: self.values.iter().map(|&v| T::lit(v.as_f64())).collect(),
            domain: self.domain,
        }
    }

    /// Frames `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.t {
            return Err(shape_err!("crop [{start}, {}) outside {} frames", start + len, self.t));
        }
        let values = (0..self.f)
            .flat_map(|b| self.row(b)[start..start + len].iter().copied())
            .collect();
        Ok(FeatureMatrix {
            f: self.f,
            t: len,
            values,
            domain: self.domain,
        })
    }

    /// As a `[1, 1, F, T]` tensor.
    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::new(vec![1, 1, self.f, self.t], self.values.clone()).expect("consistent shape")
    }

    /// From any tensor whose last two axes are `F x T` and hold one matrix.
    pub fn from_tensor(t: &Tensor<S>, domain: Domain) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().product::<usize>() != 1 {
            return Err(shape_err!("tensor {:?} does not hold a single feature matrix", s));
        }
        Self::new(s[s.len() - 2], s[s.len() - 1], t.data().to_vec(), domain)
    }
}

/// Subtract each band's mean over time.
pub fn mean_normalize<S: Scalar>(features: &FeatureMatrix<S>) -> Result<FeatureMatrix<S>> {
    if features.domain != Domain::Log {
        return Err(Error::Invalid("mean normalization expects log-domain features".into()));
    }
    let t = S::lit(features.t as f64);
    let values = (0..features.f)
        .flat_map(|b| {
            let row = features.row(b);
            let mu = row.iter().copied().sum::<S>() / t;
            row.iter().map(move |&v| v - mu)
        })
        .collect();
    FeatureMatrix::new(features.f, features.t, values, Domain::Log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use proptest::prelude::*;

    #[test]
    fn constant_matrix_normalizes_to_zero() {
        let f = FeatureMatrix::new(3, 4, vec![2.5f64; 12], Domain::Log).unwrap();
        assert!(mean_normalize(&f).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_domain_is_rejected() {
        let f = FeatureMatrix::new(1, 2, vec![1.0f64, 2.0], Domain::Linear).unwrap();
        assert!(mean_normalize(&f).is_err());
    }

    #[test]
    fn graph_mean_normalization_gradient_matches_finite_differences() {
        let x = Tensor::from_fn(vec![1, 1, 4, 6], |i| ((i * 37 % 11) as f64 - 5.0) * 0.3);
        let w = Tensor::from_fn(vec![1, 1, 4, 6], |i| ((i * 13 % 7) as f64 - 3.0) * 0.5);
        let report = gradcheck::check_inputs(&[x], 1e-5, |g, v| {
            let m = g.mean_last(v[0]);
            let y = g.sub_last(v[0], m)?;
            let wv = g.constant(w.clone());
            let y = g.mul(y, wv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #[test]
        fn rows_have_zero_mean_and_normalization_is_idempotent(
            vals in prop::collection::vec(-20.0f64..5.0, 5 * 7)
        ) {
            let f = FeatureMatrix::new(5, 7, vals, Domain::Log).unwrap();
            let once = mean_normalize(&f).unwrap();
            for b in 0..5 {
                let m: f64 = once.row(b).iter().sum::<f64>() / 7.0;
                prop_assert!(m.abs() < 1e-6);
            }
            let twice = mean_normalize(&once).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
