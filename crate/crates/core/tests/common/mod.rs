#![allow(dead_code)]

use muon_lab_core::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian<R: Rng>(m: usize, n: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(m, n, |_, _| StandardNormal.sample(rng))
}

/// Modified Gram-Schmidt on a Gaussian matrix: `m x n` with orthonormal
/// columns.
pub fn random_orthonormal<R: Rng>(m: usize, n: usize, rng: &mut R) -> Matrix {
    assert!(m >= n);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= d * b;
                }
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    Matrix::from_fn(m, n, |i, j| cols[j][i])
}

/// `U diag(s) Vᵀ` with known factors.
pub struct Known {
    pub w: Matrix,
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Known {
    pub fn polar(&self) -> Matrix {
        self.u.matmul(&self.v.transpose()).unwrap()
    }
}

/// Random matrix with prescribed singular values (any order).
pub fn with_singular_values<R: Rng>(m: usize, n: usize, s: &[f64], rng: &mut R) -> Known {
    let k = m.min(n);
    assert_eq!(s.len(), k);
    let u = random_orthonormal(m, k, rng);
    let v = random_orthonormal(n, k, rng);
    let w = Matrix::from_fn(m, n, |i, j| (0..k).map(|r| u[(i, r)] * s[r] * v[(j, r)]).sum());
    Known { w, u, s: s.to_vec(), v }
}

/// Full-rank random matrix with condition number at most `max_cond`,
/// singular values log-uniform in `[1, cond]`.
pub fn conditioned<R: Rng>(m: usize, n: usize, max_cond: f64, rng: &mut R) -> Known {
    let k = m.min(n);
    let cond = max_cond.powf(rng.random_range(0.0..1.0));
    let mut s: Vec<f64> = (0..k).map(|_| cond.powf(rng.random_range(0.0..1.0))).collect();
    s[0] = cond;
    if k > 1 {
        s[k - 1] = 1.0;
    }
    with_singular_values(m, n, &s, rng)
}

pub fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}
