//! Least-squares rescaling of the kept channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SampleSet;

/// Above this condition estimate the normal equations get a ridge term.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge strength relative to the mean diagonal of `XᵀX`.
pub const RIDGE_FACTOR: f64 = 1e-6;

/// One factor per kept channel, in the order of the kept set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingVector(pub Vec<f64>);

impl ScalingVector {
    pub fn ones(len: usize) -> Self {
        ScalingVector(vec![1.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// In-place Cholesky factorization of a symmetric `n × n` matrix into its
/// lower factor. Returns `None` if a pivot is not positive.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i * n + i];
    }
    x
}

/// Squared ratio of the extreme Cholesky pivots; a cheap lower bound on the
/// condition number of the factored matrix.
fn condition_estimate(l: &[f64], n: usize) -> f64 {
    let d: Vec<f64> = (0..n).map(|i| l[i * n + i]).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    (max / min).powi(2)
}

/// Minimizes `Σ_i (ŷ_i − wᵀx̂*_i)²` where `x̂*` keeps only the `kept` columns,
/// by solving the normal equations.
pub fn least_squares_weights(samples: &SampleSet, kept: &[usize]) -> Result<ScalingVector> {
    let n = kept.len();
    if n == 0 {
        return Err(Error::InvalidArgument("least squares needs at least one kept channel".into()));
    }
    if samples.rows() < n {
        return Err(Error::InvalidArgument(format!(
            "underdetermined: {} examples for {n} kept channels",
            samples.rows()
        )));
    }
    if let Some(&c) = kept.iter().find(|&&c| c >= samples.channels) {
        return Err(Error::InvalidArgument(format!("channel {c} out of range")));
    }
    let mut gram = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    let mut x = vec![0.0f64; n];
    for i in 0..samples.rows() {
        let row = samples.row(i);
        for (a, &c) in x.iter_mut().zip(kept) {
            *a = row[c];
        }
        let y = samples.yhat[i];
        for a in 0..n {
            rhs[a] += x[a] * y;
            for b in 0..=a {
                gram[a * n + b] += x[a] * x[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[b * n + a] = gram[a * n + b];
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    if trace == 0.0 {
        // Every kept column is zero; any weights give the same residual.
        return Ok(ScalingVector::ones(n));
    }
    let factor = match cholesky(&gram, n) {
        Some(l) if condition_estimate(&l, n) <= MAX_CONDITION => l,
        _ => {
            let lambda = RIDGE_FACTOR * trace / n as f64;
            let mut ridged = gram.clone();
            (0..n).for_each(|i| ridged[i * n + i] += lambda);
            cholesky(&ridged, n).ok_or_else(|| {
                Error::InvalidArgument("normal equations not positive definite after ridge".into())
            })?
        }
    };
    let w = cholesky_solve(&factor, n, &rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("least squares produced non-finite weights".into()));
    }
    Ok(ScalingVector(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{reconstruction_error, PruneSite};

    fn set(channels: usize, xhat: Vec<f64>, yhat: Vec<f64>) -> SampleSet {
        SampleSet::new(
            PruneSite {
                layer: "a".into(),
                next: "b".into(),
                path: vec![],
            },
            channels,
            xhat,
            yhat,
            0,
        )
        .unwrap()
    }

    #[test]
    fn single_channel_closed_form() {
        let s = set(2, vec![1.0, 9.0, 2.0, 9.0, 3.0, 9.0], vec![2.0, 3.0, 7.0]);
        let w = least_squares_weights(&s, &[0]).unwrap();
        let want = (1.0 * 2.0 + 2.0 * 3.0 + 3.0 * 7.0) / (1.0 + 4.0 + 9.0);
        assert!((w.0[0] - want).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_errors() {
        let s = set(3, vec![1.0, 2.0, 3.0], vec![6.0]);
        assert!(least_squares_weights(&s, &[0, 1]).is_err());
        assert!(least_squares_weights(&s, &[]).is_err());
    }

    #[test]
    fn duplicate_columns_fall_back_to_ridge() {
        // columns 0 and 1 identical: XᵀX singular
        let s = set(2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0], vec![2.0, 4.0, 6.0]);
        let w = least_squares_weights(&s, &[0, 1]).unwrap();
        assert!(w.0.iter().all(|v| v.is_finite()));
        let r = reconstruction_error(&s, &[0, 1], Some(w.as_slice())).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn zero_columns_give_ones() {
        let s = set(2, vec![0.0, 1.0, 0.0, 2.0], vec![1.0, 2.0]);
        assert_eq!(least_squares_weights(&s, &[0]).unwrap(), ScalingVector::ones(1));
    }
}
