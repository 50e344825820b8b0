//! Singular value decomposition, polar factors and Newton-Schulz
//! orthogonalization.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. It is slow for large
//! matrices but accurate to working precision on the small shapes used here.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::Error;
use crate::matrix::Matrix;

/// Numerical tolerances shared by the linear algebra routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub orth: f64,
    pub recon: f64,
    /// Singular values at or below `rank * sigma_max` count as zero.
    pub rank: f64,
    pub newton_schulz: f64,
    pub divergence_cap: f64,
    pub max_sweeps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            orth: 1e-8,
            recon: 1e-10,
            rank: 1e-12,
            newton_schulz: 1e-6,
            divergence_cap: 1e6,
            max_sweeps: 80,
        }
    }
}

/// Thin SVD `W = U diag(s) Vᵀ` restricted to the numerical rank.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, length `r`.
    pub singular_values: Vec<f64>,
    /// `n x r`, orthonormal columns.
    pub v: Matrix,
    pub rank: usize,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        Matrix::from_fn(m, n, |i, j| {
            (0..self.rank)
                .map(|k| self.u[(i, k)] * self.singular_values[k] * self.v[(j, k)])
                .sum()
        })
    }
}

// Full one-sided Jacobi output for a tall matrix (m >= n), columns sorted by
// decreasing norm.
struct Jacobi {
    // m x n, column j is sigma_j u_j
    a: Matrix,
    // n x n orthogonal
    v: Matrix,
    sigma: Vec<f64>,
    rank: usize,
}

fn jacobi_tall(w: &Matrix, tol: &Tolerances) -> Result<Jacobi, Error> {
    let (m, n) = w.shape();
    debug_assert!(m >= n);
    let mut a = w.clone();
    let mut v = Matrix::identity(n);
    let eps = f64::EPSILON * (m.max(4) as f64);

    let mut converged = n < 2;
    let mut residual = 0.0_f64;
    for _ in 0..tol.max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / libm::sqrt(alpha * beta);
                residual = residual.max(off);
                if off <= eps {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            sweeps: tol.max_sweeps,
            residual,
        });
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| libm::sqrt((0..m).map(|i| a[(i, j)] * a[(i, j)]).sum()))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let a = Matrix::from_fn(m, n, |i, j| a[(i, order[j])]);
    let v = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma.iter().take_while(|&&s| s > 0.0 && s > tol.rank * smax).count();
    Ok(Jacobi { a, v, sigma, rank })
}

fn check_input(w: &Matrix) -> Result<(), Error> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::InvalidShape {
            rows: w.rows(),
            cols: w.cols(),
            len: w.as_slice().len(),
        });
    }
    if !w.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn thin_from_jacobi(j: &Jacobi) -> Svd {
    let (m, n) = j.a.shape();
    let r = j.rank;
    let u = Matrix::from_fn(m, r, |i, k| j.a[(i, k)] / j.sigma[k]);
    let v = Matrix::from_fn(n, r, |i, k| j.v[(i, k)]);
    Svd {
        u,
        singular_values: j.sigma[..r].to_vec(),
        v,
        rank: r,
    }
}

/// Thin singular value decomposition.
pub fn svd(w: &Matrix, tol: &Tolerances) -> Result<Svd, Error> {
    check_input(w)?;
    if w.rows() >= w.cols() {
        Ok(thin_from_jacobi(&jacobi_tall(w, tol)?))
    } else {
        let s = thin_from_jacobi(&jacobi_tall(&w.transpose(), tol)?);
        Ok(Svd {
            u: s.v,
            singular_values: s.singular_values,
            v: s.u,
            rank: s.rank,
        })
    }
}

/// Nuclear norm, the sum of singular values.
pub fn nuclear_norm(w: &Matrix, tol: &Tolerances) -> Result<f64, Error> {
    Ok(svd(w, tol)?.singular_values.iter().sum())
}

// Orthonormal vectors spanning the complement of the columns of `u` (m x r),
// picked greedily from the canonical basis.
fn complete_basis(u: &Matrix, count: usize) -> Vec<Vec<f64>> {
    let m = u.rows();
    let mut basis: Vec<Vec<f64>> = (0..u.cols()).map(|k| u.column(k)).collect();
    let mut added = Vec::with_capacity(count);
    let project = |e: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for _ in 0..2 {
            for q in basis {
                let d: f64 = e.iter().zip(q).map(|(x, y)| x * y).sum();
                for (x, y) in e.iter_mut().zip(q) {
                    *x -= d * y;
                }
            }
        }
    };
    while added.len() < count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..m {
            let mut e = alloc::vec![0.0; m];
            e[k] = 1.0;
            project(&mut e, &basis);
            let nrm = libm::sqrt(e.iter().map(|x| x * x).sum());
            if best.as_ref().is_none_or(|(b, _)| nrm > *b + 1e-12) {
                best = Some((nrm, e));
            }
        }
        let (nrm, mut e) = best.expect("m >= 1");
        for x in &mut e {
            *x /= nrm;
        }
        basis.push(e.clone());
        added.push(e);
    }
    added
}

fn polar_tall(w: &Matrix, tol: &Tolerances) -> Result<Matrix, Error> {
    let j = jacobi_tall(w, tol)?;
    let (m, n) = w.shape();
    if j.rank == 0 {
        return Err(Error::ZeroDirection);
    }
    let svd = thin_from_jacobi(&j);
    let mut o = Matrix::zeros(m, n);
    for k in 0..j.rank {
        for r in 0..m {
            let uk = svd.u[(r, k)];
            for c in 0..n {
                o[(r, c)] += uk * j.v[(c, k)];
            }
        }
    }
    if j.rank == n {
        return Ok(o);
    }
    let extra = complete_basis(&svd.u, n - j.rank);
    for (idx, uperp) in extra.iter().enumerate() {
        let k = j.rank + idx;
        for r in 0..m {
            for c in 0..n {
                o[(r, c)] += uperp[r] * j.v[(c, k)];
            }
        }
    }
    Err(Error::DegenerateRank {
        rank: j.rank,
        completion: Box::new(o),
    })
}

/// Polar factor `U Vᵀ` of `W`, the maximiser of `<W, O>` over the Stiefel
/// manifold.
///
/// Rank-deficient inputs yield [`Error::DegenerateRank`] carrying a valid
/// completed factor; callers that only need some maximiser can use
/// [`polar_factor_or_completion`].
pub fn polar_factor_svd(w: &Matrix, tol: &Tolerances) -> Result<Matrix, Error> {
    check_input(w)?;
    if w.rows() >= w.cols() {
        polar_tall(w, tol)
    } else {
        match polar_tall(&w.transpose(), tol) {
            Ok(o) => Ok(o.transpose()),
            Err(Error::DegenerateRank { rank, completion }) => Err(Error::DegenerateRank {
                rank,
                completion: Box::new(completion.transpose()),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Like [`polar_factor_svd`], but accepts the completion for rank-deficient
/// inputs. Returns the factor and whether completion happened.
pub fn polar_factor_or_completion(w: &Matrix, tol: &Tolerances) -> Result<(Matrix, bool), Error> {
    match polar_factor_svd(w, tol) {
        Ok(o) => Ok((o, false)),
        Err(Error::DegenerateRank { completion, .. }) => Ok((*completion, true)),
        Err(e) => Err(e),
    }
}

/// Polynomial iteration `X <- aX + b(XXᵀ)X + c(XXᵀ)²X` started from
/// `W / ‖W‖_F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSchulzConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub iterations: usize,
}

impl NewtonSchulzConfig {
    /// Classical cubic iteration `(3X - XXᵀX) / 2`.
    pub const fn cubic() -> Self {
        NewtonSchulzConfig {
            a: 1.5,
            b: -0.5,
            c: 0.0,
            iterations: 30,
        }
    }

    /// Quintic iteration with a triple fixed point at 1, which converges in
    /// far fewer steps on well-conditioned input.
    pub const fn quintic() -> Self {
        NewtonSchulzConfig {
            a: 15.0 / 8.0,
            b: -10.0 / 8.0,
            c: 3.0 / 8.0,
            iterations: 10,
        }
    }

    /// Whether 1 is a fixed point of the scalar map `s -> a s + b s³ + c s⁵`.
    pub fn is_convergent(&self, tol: f64) -> bool {
        (self.a + self.b + self.c - 1.0).abs() <= tol
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.a.is_finite() && self.b.is_finite() && self.c.is_finite()) {
            return Err(Error::param("ns", "coefficients must be finite"));
        }
        if self.iterations == 0 {
            return Err(Error::param("ns.iterations", "must be at least 1"));
        }
        Ok(())
    }
}

impl Default for NewtonSchulzConfig {
    fn default() -> Self {
        Self::cubic()
    }
}

/// Approximate polar factor by Newton-Schulz iteration.
pub fn newton_schulz_orthogonalize(w: &Matrix, cfg: &NewtonSchulzConfig, tol: &Tolerances) -> Result<Matrix, Error> {
    check_input(w)?;
    cfg.validate()?;
    let wide = w.rows() < w.cols();
    let mut x = if wide { w.transpose() } else { w.clone() };
    let nrm = x.frobenius_norm();
    if nrm == 0.0 {
        return Err(Error::ZeroDirection);
    }
    x.scale_assign(1.0 / nrm);
    let n = x.cols();
    for k in 0..cfg.iterations {
        // X (aI + bB + cB²) with B = XᵀX equals the row-space form of the update.
        let b = x.gram();
        let mut poly = b.scale(cfg.b);
        if cfg.c != 0.0 {
            poly.axpy(cfg.c, &b.matmul(&b)?)?;
        }
        for i in 0..n {
            poly[(i, i)] += cfg.a;
        }
        x = x.matmul(&poly)?;
        let norm = x.frobenius_norm();
        if !norm.is_finite() || norm > tol.divergence_cap {
            return Err(Error::Divergence { iteration: k + 1, norm });
        }
    }
    Ok(if wide { x.transpose() } else { x })
}
