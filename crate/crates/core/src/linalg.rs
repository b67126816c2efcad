//! Small dense helpers on top of `faer`.

use faer::{Mat, MatRef, Side};

use crate::error::{LabError, Result};

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let xm = MatRef::from_column_major_slice(x, x.len(), 1);
    let y = a * xm;
    y.col_as_slice(0).to_vec()
}

pub fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    mat_vec(a.transpose(), x)
}

/// `diag(left) * a * diag(right)`.
pub fn scale(a: MatRef<'_, f64>, left: &[f64], right: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| left[i] * a[(i, j)] * right[j])
}

/// Exact symmetrization `(a + aᵀ)/2`; the result is bitwise symmetric.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn symmetry_defect(a: MatRef<'_, f64>) -> f64 {
    let mut d = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    d
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| LabError::Eigensolver(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = Mat::from_fn(u.nrows(), n, |r, c| u[(r, order[c])]);
    Ok((values, vectors))
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut v = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| LabError::Eigensolver(format!("{e:?}")))?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn col(a: &Mat<f64>, j: usize) -> Vec<f64> {
    a.col_as_slice(j).to_vec()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn weighted_norm(w: &[f64], a: &[f64]) -> f64 {
    weighted_dot(w, a, a).sqrt()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Returns `(slope, intercept)` of the least-squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `b − A x` with compensated (twice-working-precision) dot products.
pub fn residual_compensated(a: MatRef<'_, f64>, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| {
            let mut s = b[i];
            let mut c = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let p = a[(i, j)] * xj;
                let perr = a[(i, j)].mul_add(xj, -p);
                let t = s - p;
                let z = t - s;
                let e = (s - (t - z)) + (-p - z);
                s = t;
                c += e - perr;
            }
            s + c
        })
        .collect()
}
