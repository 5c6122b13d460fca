//! Gaussian quadrature rules built by the Golub–Welsch method: the nodes are
//! the eigenvalues of the Jacobi matrix of the weight's orthogonal
//! polynomials, and the weights are `mu0` times the squared first components
//! of its eigenvectors.

use serde::{Deserialize, Serialize};

use crate::data::ActionInterval;
use crate::error::{Error, Result};

/// Nodes and positive weights on `[a_lo, a_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss–Legendre rule with `m` nodes mapped affinely onto `interval`.
pub fn gauss_legendre_rule(m: usize, interval: (f64, f64)) -> Result<QuadratureRule> {
    let (lo, hi) = interval;
    if m < 1 {
        return Err(Error::Config("quadrature needs at least one node".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("empty quadrature interval [{lo}, {hi}]")));
    }
    let diag = vec![0.0; m];
    let off: Vec<f64> = (1..m)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let (x, w) = golub_welsch(&diag, &off, 2.0);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    Ok(QuadratureRule {
        nodes: x.iter().map(|&t| mid + half * t).collect(),
        weights: w.iter().map(|&v| v * half).collect(),
    })
}

pub fn action_rule(m: usize, interval: ActionInterval) -> Result<QuadratureRule> {
    gauss_legendre_rule(m, (interval.lo, interval.hi))
}

/// Expectation rule for a standard normal variable: `E[g(Z)] ≈ Σ w_k g(z_k)`,
/// weights summing to one (probabilists' Gauss–Hermite).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::Config("quadrature needs at least one node".into()));
        }
        let diag = vec![0.0; m];
        let off: Vec<f64> = (1..m).map(|k| (k as f64 / 2.0).sqrt()).collect();
        let (x, w) = golub_welsch(&diag, &off, std::f64::consts::PI.sqrt());
        let s = std::f64::consts::SQRT_2;
        let norm = std::f64::consts::PI.sqrt();
        Ok(Self {
            nodes: x.iter().map(|&t| s * t).collect(),
            weights: w.iter().map(|&v| v / norm).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss rule for the weight `b^(alpha-1) (1-b)^(beta-1)` on `[0, 1]`;
/// weights sum to the Beta function `B(alpha, beta)`.
pub fn gauss_jacobi_beta(m: usize, alpha: f64, beta: f64) -> Result<QuadratureRule> {
    if m < 1 {
        return Err(Error::Config("quadrature needs at least one node".into()));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Config(format!(
            "Beta weight needs alpha, beta > 0, got {alpha}, {beta}"
        )));
    }
    // Jacobi weight (1-x)^a (1+x)^b on [-1, 1] with x = 2b - 1.
    let a = beta - 1.0;
    let b = alpha - 1.0;
    let ab = a + b;
    let diag: Vec<f64> = (0..m)
        .map(|k| {
            if k == 0 {
                (b - a) / (ab + 2.0)
            } else {
                let s = 2.0 * k as f64 + ab;
                (b * b - a * a) / (s * (s + 2.0))
            }
        })
        .collect();
    let off: Vec<f64> = (1..m)
        .map(|k| {
            let kf = k as f64;
            let s = 2.0 * kf + ab;
            let v = if k == 1 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab))
            } else {
                4.0 * kf * (kf + a) * (kf + b) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            v.sqrt()
        })
        .collect();
    let mu0 = statrs::function::beta::ln_beta(alpha, beta).exp();
    let (x, w) = golub_welsch(&diag, &off, 1.0);
    Ok(QuadratureRule {
        nodes: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
        weights: w.iter().map(|&v| v * mu0).collect(),
    })
}

/// Eigenvalues of the symmetric tridiagonal matrix (`diag`, `off`) and
/// `mu0` times the squared first components of its unit eigenvectors,
/// sorted by node. Implicit QL with Wilkinson shifts, tracking only the first
/// row of the eigenvector matrix.
pub fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    let mut z = vec![0.0; n];
    if n > 0 {
        z[0] = 1.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let fz = z[i + 1];
                z[i + 1] = s * z[i] + c * fz;
                z[i] = c * z[i] - s * fz;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    (
        idx.iter().map(|&i| d[i]).collect(),
        idx.iter().map(|&i| mu0 * z[i] * z[i]).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_rule() {
        let r = gauss_legendre_rule(1, (-1.0, 1.0)).unwrap();
        assert!(r.nodes[0].abs() < 1e-15);
        assert!((r.weights[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_points_integrate_square_exactly() {
        let r = gauss_legendre_rule(2, (-1.0, 1.0)).unwrap();
        assert!((r.integrate(|a| a * a) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_integrand() {
        for m in [1, 2, 5, 21, 41] {
            let r = gauss_legendre_rule(m, (-1.0, 1.0)).unwrap();
            assert!((r.integrate(|_| 0.5) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn known_three_point_rule() {
        let r = gauss_legendre_rule(3, (-1.0, 1.0)).unwrap();
        let x = (0.6f64).sqrt();
        assert!((r.nodes[0] + x).abs() < 1e-15 && (r.nodes[2] - x).abs() < 1e-15);
        assert!((r.weights[0] - 5.0 / 9.0).abs() < 1e-15);
        assert!((r.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn empty_interval() {
        assert!(matches!(gauss_legendre_rule(3, (1.0, 1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn normal_rule_moments() {
        let r = NormalRule::new(21).unwrap();
        let mom = |k: i32| -> f64 { r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k)).sum() };
        assert!((mom(0) - 1.0).abs() < 1e-13);
        assert!(mom(1).abs() < 1e-13);
        assert!((mom(2) - 1.0).abs() < 1e-12);
        assert!((mom(4) - 3.0).abs() < 1e-11);
        assert!((mom(8) - 105.0).abs() < 1e-9);
    }

    #[test]
    fn jacobi_beta_moments() {
        for &(al, be) in &[(0.3, 2.5), (1.0, 1.0), (4.0, 0.6), (12.0, 9.0)] {
            let r = gauss_jacobi_beta(10, al, be).unwrap();
            let z = statrs::function::beta::ln_beta(al, be).exp();
            let mean = r.integrate(|b| b) / z;
            let second = r.integrate(|b| b * b) / z;
            assert!((r.integrate(|_| 1.0) / z - 1.0).abs() < 1e-12);
            assert!((mean - al / (al + be)).abs() < 1e-12);
            assert!((second - al * (al + 1.0) / ((al + be) * (al + be + 1.0))).abs() < 1e-12);
        }
    }
}
