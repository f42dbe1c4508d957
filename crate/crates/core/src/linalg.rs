//! Singular value machinery: a one-sided Jacobi SVD used as the full
//! decomposition, and a deterministic power iteration for the largest
//! singular triple.

use crate::scalar::{cast, Scalar};
use crate::tensor::Matrix;

/// Thin singular value decomposition `a = u * diag(sigma) * v^T` with
/// `min(rows, cols)` singular values in descending order. Columns of `u`
/// paired with zero singular values are zero vectors.
#[derive(Debug, Clone)]
pub struct Svd<S> {
    pub u: Matrix<S>,
    pub sigma: Vec<S>,
    pub v: Matrix<S>,
}

impl<S: Scalar> Svd<S> {
    pub fn sigma_max(&self) -> S {
        self.sigma.first().copied().unwrap_or_else(S::zero)
    }

    /// Reconstruct `u * diag(f(sigma)) * v^T`.
    pub fn reconstruct_with(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        let mut out = Matrix::zeros(self.u.rows(), self.v.rows());
        for (k, &s) in self.sigma.iter().enumerate() {
            let w = f(s);
            if w == S::zero() {
                continue;
            }
            let uk = self.u.col(k);
            let vk = self.v.col(k);
            for j in 0..out.cols() {
                let wv = w * vk[j];
                let oj = out.col_mut(j);
                for (o, &u) in oj.iter_mut().zip(uk) {
                    *o += u * wv;
                }
            }
        }
        out
    }
}

/// One-sided Jacobi SVD. Works on the orientation with rows >= cols and
/// swaps the factors back, so both tall and wide inputs are handled.
pub fn svd<S: Scalar>(a: &Matrix<S>) -> Svd<S> {
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose());
        Svd { u: t.v, sigma: t.sigma, v: t.u }
    }
}

fn svd_tall<S: Scalar>(a: &Matrix<S>) -> Svd<S> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);
    let mut w = a.clone();
    let mut v = Matrix::from_fn(n, n, |r, c| if r == c { S::one() } else { S::zero() });
    let tol = S::epsilon() * cast::<S>(8.0);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let wp = w.col(p);
                    let wq = w.col(q);
                    let mut alpha = S::zero();
                    let mut beta = S::zero();
                    let mut gamma = S::zero();
                    for (&x, &y) in wp.iter().zip(wq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == S::zero() || beta == S::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                off = true;
                // Jacobi rotation zeroing the (p,q) inner product
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = {
                    let sign = if zeta >= S::zero() { S::one() } else { -S::one() };
                    sign / (zeta.abs() + (S::one() + zeta * zeta).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !off {
            break;
        }
    }
    // Singular values are the column norms; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<S> = (0..n).map(|j| w.col_norm(j)).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));
    let mut u = Matrix::zeros(m, n);
    let mut vv = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let cutoff = norms[order[0]] * S::epsilon() * cast::<S>(m as f64);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > cutoff && s > S::zero() {
            let inv = S::one() / s;
            let src = w.col(j).to_vec();
            for (o, x) in u.col_mut(k).iter_mut().zip(src) {
                *o = x * inv;
            }
        }
        let src = v.col(j).to_vec();
        vv.col_mut(k).copy_from_slice(&src);
    }
    Svd { u, sigma, v: vv }
}

#[inline]
fn rotate_cols<S: Scalar>(m: &mut Matrix<S>, p: usize, q: usize, c: S, s: S) {
    let rows = m.rows();
    for r in 0..rows {
        let xp = m.at(r, p);
        let xq = m.at(r, q);
        m.set(r, p, c * xp - s * xq);
        m.set(r, q, s * xp + c * xq);
    }
}

/// Largest singular triple `(sigma, u, v)` by power iteration on the Gram
/// matrix of the smaller side, started from the normalized all-ones vector.
/// Returns `None` when the sigma estimate has not stabilized within
/// `max_iters`, in which case callers fall back to the full decomposition.
pub fn power_sigma_max<S: Scalar>(a: &Matrix<S>, max_iters: usize, tol: S) -> Option<(S, Vec<S>, Vec<S>)> {
    let m = a.rows();
    let n = a.cols();
    // iterate over the Gram matrix of the smaller side
    let iterate_right = n <= m;
    let dim = if iterate_right { n } else { m };
    let mut x = vec![S::one() / cast::<S>(dim as f64).sqrt(); dim];
    for _ in 0..max_iters {
        let y = if iterate_right {
            a.tr_matvec(&a.matvec(&x))
        } else {
            a.matvec(&a.tr_matvec(&x))
        };
        // Rayleigh quotient of the Gram matrix approximates sigma_max^2;
        // accept once the eigenpair residual ||Gx - lam x|| is negligible.
        let lam: S = x.iter().zip(&y).map(|(&xi, &yi)| xi * yi).sum();
        let res: S = x
            .iter()
            .zip(&y)
            .map(|(&xi, &yi)| {
                let d = yi - lam * xi;
                d * d
            })
            .sum::<S>()
            .sqrt();
        if res <= tol * lam.max(S::epsilon()) {
            return Some(finish_triple(a, &x, iterate_right));
        }
        let norm = vec_norm(&y);
        if norm == S::zero() {
            // matrix annihilates the iterate: treat as zero operator
            return Some((S::zero(), vec![S::zero(); m], vec![S::zero(); n]));
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = *yi / norm;
        }
    }
    None
}

fn finish_triple<S: Scalar>(a: &Matrix<S>, x: &[S], iterate_right: bool) -> (S, Vec<S>, Vec<S>) {
    if iterate_right {
        let v = x.to_vec();
        let mut u = a.matvec(&v);
        let sigma = vec_norm(&u);
        if sigma > S::zero() {
            for ui in &mut u {
                *ui = *ui / sigma;
            }
        }
        (sigma, u, v)
    } else {
        let u = x.to_vec();
        let mut v = a.tr_matvec(&u);
        let sigma = vec_norm(&v);
        if sigma > S::zero() {
            for vi in &mut v {
                *vi = *vi / sigma;
            }
        }
        (sigma, u, v)
    }
}

pub fn vec_norm<S: Scalar>(x: &[S]) -> S {
    x.iter().map(|v| *v * *v).sum::<S>().sqrt()
}
