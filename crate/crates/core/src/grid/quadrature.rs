//! Gauss-Hermite quadrature for expectations under Gaussian noise.

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point rule for `int f(x) exp(-x^2) dx`, nodes ascending.
///
/// Roots are polished by Newton's method on the orthonormal Hermite recurrence,
/// which stays in floating-point range for large `n`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: 100,
                last_delta: f64::NAN,
            });
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    Ok((x, w))
}

/// Probability nodes for `N(0, std^2)`: offsets `std * sqrt(2) * x_k` with weights
/// `w_k / sqrt(pi)` renormalized to sum exactly to one.
pub fn gaussian_rule(n: usize, std: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (x, w) = gauss_hermite(n)?;
    let total: f64 = w.iter().sum();
    Ok((
        x.iter().map(|xi| std * std::f64::consts::SQRT_2 * xi).collect(),
        w.iter().map(|wi| wi / total).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn two_point_rule_closed_form() {
        let (x, w) = gauss_hermite(2).unwrap();
        let r = 0.5f64.sqrt();
        assert!((x[0] + r).abs() < 1e-14 && (x[1] - r).abs() < 1e-14);
        assert!((w[0] - PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_and_moments() {
        for n in [1, 5, 20, 64, 100] {
            let (x, w) = gauss_hermite(n).unwrap();
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            let total: f64 = w.iter().sum();
            assert!((total - PI.sqrt()).abs() < 1e-12, "n={n}");
            // int x^2 e^{-x^2} = sqrt(pi)/2 for n >= 2; int x^4 e^{-x^2} = 3 sqrt(pi)/4 for n >= 3.
            if n >= 3 {
                let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
                let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
                assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12);
                assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn exact_for_high_even_moments() {
        // E[Z^{2k}] = (2k-1)!! for a standard normal; a 64-node rule is exact to degree 127.
        let (x, w) = gaussian_rule(64, 1.0).unwrap();
        let mut double_fact = 1.0;
        for k in 1..=10 {
            double_fact *= (2 * k - 1) as f64;
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32)).sum();
            assert!((m / double_fact - 1.0).abs() < 1e-10, "k={k} m={m}");
        }
    }

    #[test]
    fn gaussian_rule_matches_smooth_expectation() {
        // E[cos(Z)] = exp(-1/2) for Z ~ N(0,1).
        let (x, w) = gaussian_rule(64, 1.0).unwrap();
        let e: f64 = x.iter().zip(&w).map(|(x, w)| w * x.cos()).sum();
        assert!((e - (-0.5f64).exp()).abs() < 1e-13);
        assert!(gauss_hermite(0).is_err());
    }
}
