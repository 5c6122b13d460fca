use crate::error::{Error, Result};

/// All monomials of total degree `<= degree` over `input_dim` inputs.
///
/// Ordering: the constant, then the linear terms in input order, then each
/// higher degree in turn with index tuples `i <= j <= ...` in lexicographic
/// order. For `(o, w, a)` and degree 2 that is
/// `1, o, w, a, o², ow, oa, w², wa, a²`.
///
/// The last input is treated as the action: [`FeatureMap::moment_basis`]
/// splits every monomial into a factor over the other inputs times a power
/// of the action, which lets expectations over the action be taken through
/// the action's moments alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    degree: usize,
    input_dim: usize,
    monomials: Vec<Vec<usize>>,
}

impl FeatureMap {
    pub fn new(input_dim: usize, degree: usize) -> Result<Self> {
        if degree < 1 || input_dim < 1 {
            return Err(Error::Config(format!(
                "feature map needs degree >= 1 and at least one input, got degree {degree}, {input_dim} inputs"
            )));
        }
        let mut monomials = vec![Vec::new()];
        let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..degree {
            let mut next = Vec::new();
            for m in &layer {
                let start = m.last().copied().unwrap_or(0);
                for i in start..input_dim {
                    let mut m2 = m.clone();
                    m2.push(i);
                    next.push(m2);
                }
            }
            monomials.extend(next.iter().cloned());
            layer = next;
        }
        Ok(Self {
            degree,
            input_dim,
            monomials,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of features, `C(input_dim + degree, degree)`.
    pub fn dim(&self) -> usize {
        self.monomials.len()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_dim);
        for (o, m) in out.iter_mut().zip(&self.monomials) {
            *o = m.iter().map(|&i| x[i]).product();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Row-major `dim() x (degree + 1)` matrix `B` such that
    /// `eval([prefix, a]) = B · (1, a, a², ...)`. `prefix` holds every input
    /// but the last.
    pub fn moment_basis(&self, prefix: &[f64], out: &mut [f64]) {
        debug_assert_eq!(prefix.len() + 1, self.input_dim);
        let cols = self.degree + 1;
        let action = self.input_dim - 1;
        out.fill(0.0);
        for (k, m) in self.monomials.iter().enumerate() {
            let mut coef = 1.0;
            let mut power = 0;
            for &i in m {
                if i == action {
                    power += 1;
                } else {
                    coef *= prefix[i];
                }
            }
            out[k * cols + power] = coef;
        }
    }
}

/// Degree-`degree` monomials of the concatenation `(o, w, a)`.
pub fn polynomial_features(o: &[f64], w: &[f64], a: f64, degree: usize) -> Result<Vec<f64>> {
    let fm = FeatureMap::new(o.len() + w.len() + 1, degree)?;
    let mut x = Vec::with_capacity(o.len() + w.len() + 1);
    x.extend_from_slice(o);
    x.extend_from_slice(w);
    x.push(a);
    Ok(fm.eval(&x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_order() {
        let f = polynomial_features(&[1.0], &[2.0], 3.0, 2).unwrap();
        assert_eq!(f, vec![1.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn constant_survives() {
        assert_eq!(
            polynomial_features(&[0.0], &[0.0], 0.0, 1).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn dims_are_binomial() {
        assert_eq!(FeatureMap::new(3, 2).unwrap().dim(), 10);
        assert_eq!(FeatureMap::new(2, 2).unwrap().dim(), 6);
        assert_eq!(FeatureMap::new(4, 3).unwrap().dim(), 35);
    }

    #[test]
    fn moment_basis_reproduces_features() {
        let fm = FeatureMap::new(3, 3).unwrap();
        let prefix = [0.7, -1.3];
        let a: f64 = 0.4;
        let mut b = vec![0.0; fm.dim() * 4];
        fm.moment_basis(&prefix, &mut b);
        let direct = fm.eval(&[0.7, -1.3, a]);
        for k in 0..fm.dim() {
            let via: f64 = (0..4).map(|e| b[k * 4 + e] * a.powi(e as i32)).sum();
            assert!((via - direct[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_degree_zero() {
        assert!(FeatureMap::new(3, 0).is_err());
    }
}
