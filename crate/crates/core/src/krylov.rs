//! Krylov solvers: batched Lanczos for extreme eigenvalues and restarted GMRES.

use faer::Mat;

use crate::error::{LabError, Result};
use crate::linalg;
use crate::linalg::sym_eigen;

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    pub max_steps: usize,
    /// Stop once the residual bound of the top Ritz pair is below `tol·θ`.
    pub tol: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            max_steps: 120,
            tol: 1e-12,
        }
    }
}

/// Steps between convergence checks (each costs a tridiagonal eigensolve).
const RITZ_EVERY: usize = 8;

/// Largest eigenvalue of several symmetric operators at once.
///
/// Column `j` of the block passed to `apply` belongs to problem `j`; the
/// closure must return the image of each column under its own operator.
/// Full reorthogonalization keeps the Ritz values clean.
pub fn lanczos_max(
    dim: usize,
    start: &Mat<f64>,
    apply: impl Fn(&Mat<f64>) -> Mat<f64>,
    opts: &LanczosOptions,
) -> Vec<f64> {
    let nprob = start.ncols();
    let steps = opts.max_steps.min(dim);
    let mut basis: Vec<Mat<f64>> = Vec::with_capacity(steps + 1);
    let mut alpha = vec![Vec::<f64>::new(); nprob];
    let mut beta = vec![Vec::<f64>::new(); nprob];
    let mut done = vec![false; nprob];
    let mut result = vec![0.0; nprob];

    let mut q = start.clone();
    for j in 0..nprob {
        let nrm = linalg::norm2(q.col_as_slice(j));
        for v in q.col_as_slice_mut(j) {
            *v /= nrm;
        }
    }
    basis.push(q);

    for step in 0..steps {
        let mut w = apply(&basis[step]);
        for j in 0..nprob {
            if done[j] {
                continue;
            }
            let a = linalg::dot(w.col_as_slice(j), basis[step].col_as_slice(j));
            alpha[j].push(a);
            // Two passes of classical Gram–Schmidt against every stored vector.
            for _ in 0..2 {
                for b in basis.iter() {
                    let c = linalg::dot(w.col_as_slice(j), b.col_as_slice(j));
                    let bj = b.col_as_slice(j);
                    for (wv, bv) in w.col_as_slice_mut(j).iter_mut().zip(bj) {
                        *wv -= c * bv;
                    }
                }
            }
            let nb = linalg::norm2(w.col_as_slice(j));
            beta[j].push(nb);
            let last = step + 1 == steps;
            if step % RITZ_EVERY == RITZ_EVERY - 1 || last || nb == 0.0 {
                let (theta, resid) = top_ritz(&alpha[j], &beta[j]);
                result[j] = theta;
                if last || resid <= opts.tol * theta.abs() || nb <= f64::EPSILON * theta.abs() {
                    done[j] = true;
                    continue;
                }
            }
            for v in w.col_as_slice_mut(j) {
                *v /= nb;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
        for j in 0..nprob {
            if done[j] {
                for v in w.col_as_slice_mut(j) {
                    *v = 0.0;
                }
            }
        }
        basis.push(w);
    }
    result
}

/// Largest Ritz value of the tridiagonal matrix and its residual bound.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let t = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let (vals, vecs) = sym_eigen(t.as_ref()).expect("tridiagonal eigensolve");
    let theta = vals[m - 1];
    let resid = (beta[m - 1] * vecs[(m - 1, m - 1)]).abs();
    (theta, resid)
}

#[derive(Clone, Debug)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iter: usize,
    /// Relative tolerance on the preconditioned residual.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            restart: 60,
            max_iter: 300,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Right-preconditioned restarted GMRES for `A x = b`, with `precond`
/// applying an approximation of `A⁻¹`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    opts: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = b.len();
    let bnorm = linalg::norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut total = 0;
    let mut rel = 1.0;
    while total < opts.max_iter {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = linalg::norm2(&r);
        rel = beta / bnorm;
        if rel <= opts.tol {
            break;
        }
        let m = opts.restart.min(opts.max_iter - total);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            for i in 0..=k {
                let hik = linalg::dot(&w, &v[i]);
                h[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= hik * vj;
                }
            }
            let hn = linalg::norm2(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                return Err(LabError::LinearSolve("GMRES breakdown (singular operator)".into()));
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= opts.tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wj| wj / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            for (xj, zj) in x.iter_mut().zip(zi) {
                *xj += yi * zj;
            }
        }
        if rel <= opts.tol {
            let ax = apply(&x);
            let r: f64 = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai).powi(2))
                .sum::<f64>()
                .sqrt();
            rel = r / bnorm;
            if rel <= opts.tol * 10.0 {
                break;
            }
        }
    }
    if rel > opts.tol * 10.0 {
        return Err(LabError::LinearSolve(format!(
            "GMRES stalled at relative residual {rel:e} after {total} iterations"
        )));
    }
    Ok(GmresOutcome {
        x,
        iterations: total,
        relative_residual: rel,
    })
}
