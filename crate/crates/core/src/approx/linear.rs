use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored row-major (`out_dim x in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                self.intercept[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights[out * self.in_dim + input]
    }
}

/// Least squares with an unpenalized intercept:
/// minimizes `sum ||W x + b - y||^2 + ridge * ||W||_F^2`.
///
/// Solved through the centered normal equations with a Cholesky factorization.
pub fn fit_linear(xs: &[Vec<f64>], ys: &[Vec<f64>], ridge: f64) -> Result<LinearModel> {
    if xs.is_empty() {
        return Err(Error::invalid("fit_linear needs at least one row"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "fit_linear rows",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let p = xs[0].len();
    let q = ys[0].len();
    for (x, y) in xs.iter().zip(ys) {
        if x.len() != p || y.len() != q {
            return Err(Error::DimensionMismatch {
                context: "fit_linear row width",
                expected: p,
                got: x.len(),
            });
        }
    }
    let n = xs.len() as f64;
    let mut x_mean = vec![0.0; p];
    let mut y_mean = vec![0.0; q];
    for (x, y) in xs.iter().zip(ys) {
        for (m, v) in x_mean.iter_mut().zip(x) {
            *m += v;
        }
        for (m, v) in y_mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n);
    y_mean.iter_mut().for_each(|m| *m /= n);

    // gram = Xc^T Xc + ridge I (p x p), rhs = Xc^T Yc (p x q)
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p * q];
    let mut xc = vec![0.0; p];
    for (x, y) in xs.iter().zip(ys) {
        for k in 0..p {
            xc[k] = x[k] - x_mean[k];
        }
        for i in 0..p {
            let xi = xc[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..=i {
                gram[i * p + j] += xi * xc[j];
            }
            for k in 0..q {
                rhs[i * q + k] += xi * (y[k] - y_mean[k]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[j * p + i] = gram[i * p + j];
        }
        gram[i * p + i] += ridge;
    }

    let chol = cholesky(&gram, p).ok_or(Error::SingularDesign)?;
    let mut weights = vec![0.0; q * p];
    let mut col = vec![0.0; p];
    for k in 0..q {
        for i in 0..p {
            col[i] = rhs[i * q + k];
        }
        let sol = cholesky_solve(&chol, p, &col);
        weights[k * p..(k + 1) * p].copy_from_slice(&sol);
    }
    let intercept = (0..q)
        .map(|k| y_mean[k] - (0..p).map(|i| weights[k * p + i] * x_mean[i]).sum::<f64>())
        .collect();
    Ok(LinearModel {
        in_dim: p,
        out_dim: q,
        weights,
        intercept,
    })
}

/// Lower-triangular factor of a symmetric positive definite matrix; `None`
/// when a pivot falls below a relative threshold.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > floor) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}
