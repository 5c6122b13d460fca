use faer::Mat;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::rng_from_seed;

/// Default cap on the number of pairs the median heuristic looks at.
pub const DEFAULT_MAX_PAIRS: usize = 250_000;

/// Critic kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", deny_unknown_fields)]
pub enum KernelSpec {
    /// `exp(-|x - y|^2 / (2 h^2))`
    Gaussian { bandwidth: f64 },
    /// `(x.y + c)^p`
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::Config(format!("Gaussian bandwidth must be > 0, got {bandwidth}")))
            }
            KernelSpec::Polynomial { degree, offset } if degree < 1 || !(offset >= 0.0) => Err(
                Error::Config(format!("polynomial kernel needs degree >= 1 and offset >= 0, got {degree}, {offset}")),
            ),
            _ => Ok(()),
        }
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }
}

pub fn kernel_eval(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "kernel arguments have dims {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(k.eval_unchecked(x, y))
}

/// A set of equal-dimension points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("points have differing dims".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn select(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points {
            dim: self.dim,
            data,
        }
    }
}

/// Dense kernel matrix `K[i][j] = k(x_i, x_j)`. Columns are filled
/// independently, so the result does not depend on the worker count.
pub fn kernel_matrix(k: &KernelSpec, points: &Points) -> Mat<f64> {
    let n = points.len();
    let mut cols = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut cols, n, |j, col| {
        let xj = points.row(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v = k.eval_unchecked(points.row(i), xj);
        }
    });
    Mat::from_fn(n, n, |i, j| cols[j * n + i])
}

/// Median of the pairwise Euclidean distances. When there are more than
/// `max_pairs` pairs, the median is taken over `max_pairs` pairs drawn
/// uniformly (with replacement) from a stream seeded by `seed`.
pub fn median_heuristic(points: &Points, max_pairs: usize, seed: u64) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Shape(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    let dist = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let total = n * (n - 1) / 2;
    let mut d: Vec<f64> = if total <= max_pairs.max(1) {
        let mut d = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                d.push(dist(i, j));
            }
        }
        d
    } else {
        let mut rng = rng_from_seed(seed);
        (0..max_pairs)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                dist(i, j)
            })
            .collect()
    };
    let h = median(&mut d);
    if !(h > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(h)
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Points {
        Points::new(1, v.to_vec()).unwrap()
    }

    #[test]
    fn gaussian_examples() {
        let k = KernelSpec::Gaussian { bandwidth: 1.0 };
        assert_eq!(kernel_eval(&k, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        let v = kernel_eval(&k, &[0.0], &[1.0]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn polynomial_example() {
        let k = KernelSpec::Polynomial {
            degree: 2,
            offset: 1.0,
        };
        assert_eq!(kernel_eval(&k, &[1.0], &[1.0]).unwrap(), 4.0);
    }

    #[test]
    fn dim_mismatch() {
        let k = KernelSpec::Gaussian { bandwidth: 1.0 };
        assert!(matches!(kernel_eval(&k, &[0.0], &[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_heuristic(&pts(&[0.0, 1.0, 3.0]), 100, 0).unwrap(), 2.0);
        assert_eq!(median_heuristic(&pts(&[0.0, 2.0]), 100, 0).unwrap(), 2.0);
        assert!(matches!(
            median_heuristic(&pts(&[5.0, 5.0, 5.0]), 100, 0),
            Err(Error::DegenerateBandwidth)
        ));
    }

    #[test]
    fn median_subsample_is_seeded() {
        let p = pts(&(0..300).map(|i| (i as f64).sqrt()).collect::<Vec<_>>());
        let a = median_heuristic(&p, 1000, 4).unwrap();
        let b = median_heuristic(&p, 1000, 4).unwrap();
        let full = median_heuristic(&p, usize::MAX, 0).unwrap();
        assert_eq!(a, b);
        assert!((a - full).abs() / full < 0.1);
    }

    #[test]
    fn kernel_matrix_is_symmetric() {
        let p = Points::new(2, vec![0.0, 1.0, 0.5, -0.3, 2.0, 0.1]).unwrap();
        let k = kernel_matrix(&KernelSpec::Gaussian { bandwidth: 0.7 }, &p);
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
            for j in 0..3 {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }
}
