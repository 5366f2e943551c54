//! Fitted-model summaries shared by the likelihood-based modules.

use crate::error::Result;
use crate::optim::{self, OptimResult};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Point estimates with their inverse-observed-information covariance.
///
/// `internal` holds the optimizer-scale parameter vector (log scales,
/// Cholesky factors, logits) so a fit can be re-used as a warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: Vec<String>,
    #[serde(with = "nullable_vec")]
    pub estimates: Vec<f64>,
    #[serde(with = "nullable_vec")]
    pub std_errors: Vec<f64>,
    #[serde(with = "nullable_matrix")]
    pub covariance: Vec<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    #[serde(with = "nullable_vec")]
    pub internal: Vec<f64>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimates[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.std_errors[i])
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Turns an optimum of `neg_loglik` (on the internal scale) into a
/// [`FitResult`] on the reported scale given by `report`.
///
/// The covariance is the delta-method transform of the inverse
/// finite-difference Hessian. A Hessian that is not positive definite marks
/// the fit as not converged and leaves the covariance undefined (NaN).
pub fn summarize<F, T>(model: &str, names: Vec<String>, neg_loglik: &F, report: &T, opt: &OptimResult, seed: u64) -> FitResult
where
    F: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> Vec<f64>,
{
    let k = opt.x.len();
    let estimates = report(&opt.x);
    let p = estimates.len();
    let hess = optim::hessian(neg_loglik, &opt.x, 1e-4);
    let inv = optim::spd_inverse(&hess);
    let (covariance, pd) = match inv {
        Some(c) => {
            let j = jacobian(report, &opt.x);
            let cov = &j * c * j.transpose();
            let cov = (&cov + cov.transpose()) * 0.5;
            (cov, true)
        }
        None => (DMatrix::from_element(p, p, f64::NAN), false),
    };
    let std_errors = (0..p).map(|i| covariance[(i, i)].max(0.0).sqrt()).map(|s| if pd { s } else { f64::NAN }).collect();
    let loglik = -opt.fmin;
    FitResult {
        model: model.to_string(),
        parameters: names,
        estimates,
        std_errors,
        covariance: (0..p).map(|i| (0..p).map(|j| covariance[(i, j)]).collect()).collect(),
        loglik,
        aic: 2.0 * k as f64 - 2.0 * loglik,
        converged: opt.converged && pd,
        iterations: opt.iterations,
        seed,
        internal: opt.x.clone(),
    }
}

/// Central-difference Jacobian of a vector map.
pub fn jacobian<T: Fn(&[f64]) -> Vec<f64>>(f: &T, x: &[f64]) -> DMatrix<f64> {
    let p = f(x).len();
    let mut j = DMatrix::zeros(p, x.len());
    let mut xp = x.to_vec();
    for c in 0..x.len() {
        let h = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        for r in 0..p {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

// JSON has no NaN; undefined entries are written as null and read back as NaN.
mod nullable_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

mod nullable_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|row| row.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Ok(Vec::<Vec<Option<f64>>>::deserialize(d)?
            .into_iter()
            .map(|row| row.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
            .collect())
    }
}
