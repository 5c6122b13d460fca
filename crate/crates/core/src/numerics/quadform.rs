use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

fn check_symmetric(k: MatRef<'_, f64>) -> Result<()> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::Shape(format!("kernel matrix is {}x{}", n, k.ncols())));
    }
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| k[(i, j)].abs())
        .fold(1.0f64, f64::max);
    for j in 0..n {
        for i in 0..j {
            let a = k[(i, j)];
            let b = k[(j, i)];
            if !(a.is_finite() && b.is_finite()) || (a - b).abs() > 1e-8 * scale {
                return Err(Error::NumericalInput(format!(
                    "kernel matrix is not symmetric: K[{i},{j}] = {a}, K[{j},{i}] = {b}"
                )));
            }
        }
    }
    Ok(())
}

/// `φᵀ K^{1/2} [K/(2 nT μ) + I]^{-1} K^{1/2} φ`, evaluated in the eigenbasis
/// of `K` with eigenvalues clamped at zero:
/// `Σ_j λ_j (u_jᵀφ)² / (λ_j/(2 nT μ) + 1)`.
pub fn regularized_kernel_quadform(k: MatRef<'_, f64>, mu: f64, phi: &[f64], nt: usize) -> Result<f64> {
    check_symmetric(k)?;
    if phi.len() != k.nrows() {
        return Err(Error::Shape(format!(
            "residual has length {}, kernel matrix is {}x{}",
            phi.len(),
            k.nrows(),
            k.nrows()
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::Config(format!("mu must be > 0, got {mu}")));
    }
    let eig = k
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NumericalInput(format!("eigendecomposition failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let scale = 2.0 * nt as f64 * mu;
    let mut total = 0.0;
    for j in 0..phi.len() {
        let lam = s[j].max(0.0);
        if lam == 0.0 {
            continue;
        }
        let proj: f64 = (0..phi.len()).map(|i| u[(i, j)] * phi[i]).sum();
        total += lam * proj * proj / (lam / scale + 1.0);
    }
    Ok(total)
}

/// The critic part of the loss through the eigen route:
/// `regularized_kernel_quadform / (4 μ (nT)²)`.
pub fn critic_term_eigen(k: MatRef<'_, f64>, mu: f64, phi: &[f64]) -> Result<f64> {
    let n = phi.len();
    Ok(regularized_kernel_quadform(k, mu, phi, n)? / (4.0 * mu * (n * n) as f64))
}

/// The symmetric PSD operator `G = K (K + cI)^{-1} / (2N)` with `c = 2Nμ`.
///
/// For a residual vector `φ`, `φᵀGφ` is the value of the inner maximization
/// `max_f  E_N[φ f] − ½ E_N[f²] − μ‖f‖²` over the kernel's RKHS. `G` is
/// applied through a Cholesky factorization of `K + cI`, which is always
/// well conditioned for `c > 0` even when `K` is rank-deficient.
pub struct CriticOperator {
    k: Mat<f64>,
    llt: Llt<f64>,
    n: usize,
    c: f64,
}

impl CriticOperator {
    pub fn new(k: Mat<f64>, mu: f64) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || n == 0 {
            return Err(Error::Shape(format!("kernel matrix is {}x{}", n, k.ncols())));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu must be > 0, got {mu}")));
        }
        let c = 2.0 * n as f64 * mu;
        let mut reg = k.clone();
        for i in 0..n {
            reg[(i, i)] += c;
        }
        let llt = match reg.llt(Side::Lower) {
            Ok(f) => f,
            Err(_) => {
                for i in 0..n {
                    reg[(i, i)] += 1e-10 * c.max(1.0);
                }
                reg.llt(Side::Lower).map_err(|_| {
                    Error::NumericalInput("K + 2NμI is not positive definite; is K symmetric PSD?".into())
                })?
            }
        };
        Ok(Self { k, llt, n, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> MatRef<'_, f64> {
        self.k.as_ref()
    }

    /// `G X`, column by column.
    pub fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let y = self.llt.solve(x);
        let mut out = &self.k * &y;
        let s = 1.0 / (2.0 * self.n as f64);
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] *= s;
            }
        }
        out
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let x = Mat::from_fn(v.len(), 1, |i, _| v[i]);
        let y = self.apply(x.as_ref());
        (0..v.len()).map(|i| y[(i, 0)]).collect()
    }

    /// `φᵀ G φ`.
    pub fn quad(&self, phi: &[f64]) -> f64 {
        let g = self.apply_vec(phi);
        phi.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    }

    /// Regularization constant `c = 2Nμ`.
    pub fn ridge(&self) -> f64 {
        self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let k = Mat::<f64>::identity(3, 3);
        let phi = [1.0, -2.0, 0.5];
        let (nt, mu) = (3, 0.1);
        let want = 5.25 / (1.0 + 1.0 / (2.0 * nt as f64 * mu));
        let got = regularized_kernel_quadform(k.as_ref(), mu, &phi, nt).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn zero_residual() {
        let k = Mat::<f64>::identity(2, 2);
        assert_eq!(regularized_kernel_quadform(k.as_ref(), 0.5, &[0.0, 0.0], 2).unwrap(), 0.0);
    }

    #[test]
    fn rank_deficient_diagonal() {
        let mut k = Mat::<f64>::zeros(2, 2);
        k[(0, 0)] = 2.0;
        let got = regularized_kernel_quadform(k.as_ref(), 0.25, &[1.0, 1.0], 2).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut k = Mat::<f64>::identity(2, 2);
        k[(0, 1)] = 0.5;
        assert!(matches!(
            regularized_kernel_quadform(k.as_ref(), 1.0, &[1.0, 1.0], 2),
            Err(Error::NumericalInput(_))
        ));
    }

    #[test]
    fn cholesky_route_matches_eigen_route() {
        let n = 12;
        let pts: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 3.0).collect();
        let k = Mat::from_fn(n, n, |i, j| (-(pts[i] - pts[j]).powi(2) / 2.0).exp());
        let phi: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        for mu in [1e-4, 1e-2, 1.0] {
            let op = CriticOperator::new(k.clone(), mu).unwrap();
            let a = op.quad(&phi);
            let b = critic_term_eigen(k.as_ref(), mu, &phi).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }
}
