//! Half-line grids for functions of known parity on the real line.
//!
//! A function of given parity is stored by its samples on the nonnegative
//! nodes: odd functions on `x_1..x_n` (the origin value is structurally zero),
//! even functions on `x_0..x_n`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    pub fn flip(self) -> Parity {
        match self {
            Parity::Odd => Parity::Even,
            Parity::Even => Parity::Odd,
        }
    }

    /// Parity of the `order`-th derivative of a function with this parity.
    pub fn after(self, order: usize) -> Parity {
        if order % 2 == 0 {
            self
        } else {
            self.flip()
        }
    }

    fn sign(self) -> f64 {
        match self {
            Parity::Odd => -1.0,
            Parity::Even => 1.0,
        }
    }

    fn index(self) -> usize {
        match self {
            Parity::Odd => 0,
            Parity::Even => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeFamily {
    /// Trigonometric collocation on the period `2·L_dom` with `2n+1` points.
    Spectral,
    /// Uniform nodes `k·L_dom/n` with fourth-order centred differences.
    Uniform,
}

impl std::str::FromStr for NodeFamily {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(NodeFamily::Spectral),
            "uniform" => Ok(NodeFamily::Uniform),
            other => Err(LabError::Parameter(format!(
                "unknown node family '{other}' (expected spectral or uniform)"
            ))),
        }
    }
}

#[derive(Default)]
struct DiffCache {
    slots: [OnceLock<Arc<Mat<f64>>>; 8],
}

#[derive(Clone)]
pub struct Grid {
    half_length: f64,
    n: usize,
    family: NodeFamily,
    h: f64,
    nodes: Vec<f64>,
    weights_odd: Vec<f64>,
    weights_even: Vec<f64>,
    cache: Arc<DiffCache>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("half_length", &self.half_length)
            .field("n", &self.n)
            .field("family", &self.family)
            .field("h", &self.h)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.half_length == other.half_length && self.n == other.n && self.family == other.family
    }
}

pub const MIN_NODES: usize = 8;

pub fn build_grid(half_length: f64, n: usize, family: NodeFamily) -> Result<Grid> {
    if !(half_length > 0.0) || !half_length.is_finite() {
        return Err(LabError::Parameter(format!(
            "L_dom must be positive and finite, got {half_length}"
        )));
    }
    if n < MIN_NODES {
        return Err(LabError::Parameter(format!(
            "n must be at least {MIN_NODES}, got {n}"
        )));
    }
    let h = match family {
        NodeFamily::Spectral => 2.0 * half_length / (2 * n + 1) as f64,
        NodeFamily::Uniform => half_length / n as f64,
    };
    let nodes: Vec<f64> = (1..=n).map(|k| k as f64 * h).collect();
    let (weights_odd, weights_even) = match family {
        NodeFamily::Spectral => {
            let wo = vec![2.0 * h; n];
            let mut we = vec![2.0 * h; n + 1];
            we[0] = h;
            (wo, we)
        }
        NodeFamily::Uniform => {
            let mut wo = vec![2.0 * h; n];
            wo[n - 1] = h;
            let mut we = vec![2.0 * h; n + 1];
            we[0] = h;
            we[n] = h;
            (wo, we)
        }
    };
    Ok(Grid {
        half_length,
        n,
        family,
        h,
        nodes,
        weights_odd,
        weights_even,
        cache: Arc::new(DiffCache::default()),
    })
}

impl Grid {
    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> NodeFamily {
        self.family
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Positive nodes `x_1 < … < x_n`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Nodes on which a function of the given parity is stored.
    pub fn sample_nodes(&self, parity: Parity) -> Vec<f64> {
        match parity {
            Parity::Odd => self.nodes.clone(),
            Parity::Even => std::iter::once(0.0).chain(self.nodes.iter().copied()).collect(),
        }
    }

    pub fn len(&self, parity: Parity) -> usize {
        match parity {
            Parity::Odd => self.n,
            Parity::Even => self.n + 1,
        }
    }

    /// Quadrature weights of the full-line integral, folded onto the stored samples.
    pub fn weights(&self, parity: Parity) -> &[f64] {
        match parity {
            Parity::Odd => &self.weights_odd,
            Parity::Even => &self.weights_even,
        }
    }

    /// Sample a function of the given parity at the stored nodes.
    pub fn sample(&self, parity: Parity, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.sample_nodes(parity).into_iter().map(f).collect()
    }

    pub fn check_len(&self, values: &[f64], parity: Parity) -> Result<()> {
        let expected_len = self.len(parity);
        if values.len() != expected_len {
            return Err(LabError::ParityMismatch {
                expected: parity,
                expected_len,
                got: values.len(),
            });
        }
        Ok(())
    }

    /// Same period and family, `factor` times as many nodes.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        build_grid(self.half_length, self.n * factor, self.family)
    }

    pub fn inner(&self, parity: Parity, a: &[f64], b: &[f64]) -> f64 {
        linalg::weighted_dot(self.weights(parity), a, b)
    }

    pub fn l2_norm(&self, parity: Parity, a: &[f64]) -> f64 {
        linalg::weighted_norm(self.weights(parity), a)
    }

    fn diff_matrix(&self, order: usize, parity_in: Parity) -> Arc<Mat<f64>> {
        let slot = &self.cache.slots[(order - 1) * 2 + parity_in.index()];
        slot.get_or_init(|| {
            Arc::new(match self.family {
                NodeFamily::Spectral => spectral_matrix(self.n, self.half_length, order, parity_in),
                NodeFamily::Uniform => uniform_matrix(self.n, self.h, order, parity_in),
            })
        })
        .clone()
    }

    /// `Σ_j D_jᵀ W D_j` for `j = 0..=k`, so that `fᵀ G f` is the squared `H^k` norm.
    pub fn gram(&self, k: usize, parity: Parity) -> Result<Mat<f64>> {
        check_sobolev_index(k)?;
        let m = self.len(parity);
        let w = self.weights(parity);
        let mut g = Mat::from_fn(m, m, |i, j| if i == j { w[i] } else { 0.0 });
        for j in 1..=k {
            let d = diff_operator(self, j, parity)?;
            let wout = self.weights(d.parity_out());
            let dm = d.matrix();
            let wd = Mat::from_fn(dm.nrows(), dm.ncols(), |r, c| wout[r] * dm[(r, c)]);
            g += dm.transpose() * &wd;
        }
        linalg::symmetrize(&mut g);
        Ok(g)
    }

    /// Factor `R = diag(scale)·orth` with `Rᵀ R = W^{-1/2} G_k W^{-1/2}`, the
    /// `H^k` Gram matrix in weighted coordinates. `orth` is orthogonal.
    ///
    /// For odd functions on the spectral family the sine transform
    /// diagonalizes every Gram matrix, so the factor is exact; otherwise it
    /// comes from an eigendecomposition.
    pub fn gram_factor(&self, k: usize, parity: Parity) -> Result<GramFactor> {
        check_sobolev_index(k)?;
        if self.family == NodeFamily::Spectral && parity == Parity::Odd {
            let n = self.n;
            let big_n = 2 * n + 1;
            let norm = (4.0 / big_n as f64).sqrt();
            let orth = Mat::from_fn(n, n, |p, j| {
                let arg = 2.0 * PI * (((p + 1) * (j + 1)) % big_n) as f64 / big_n as f64;
                norm * arg.sin()
            });
            let scale = (1..=n)
                .map(|p| {
                    let kp2 = (PI * p as f64 / self.half_length).powi(2);
                    (0..=k).map(|j| kp2.powi(j as i32)).sum::<f64>().sqrt()
                })
                .collect();
            return Ok(GramFactor { orth, scale });
        }
        let g = self.gram(k, parity)?;
        let inv: Vec<f64> = self.weights(parity).iter().map(|w| 1.0 / w.sqrt()).collect();
        let gt = linalg::scale(g.as_ref(), &inv, &inv);
        let (vals, vecs) = linalg::sym_eigen(gt.as_ref())?;
        Ok(GramFactor {
            orth: vecs.transpose().to_owned(),
            scale: vals.iter().map(|v| v.max(0.0).sqrt()).collect(),
        })
    }

    /// Matrix evaluating the interpolant of a stored grid function at arbitrary
    /// points `targets` (given as nonnegative abscissae).
    pub fn interpolation_matrix(&self, parity: Parity, targets: &[f64]) -> Mat<f64> {
        match self.family {
            NodeFamily::Spectral => self.trig_interpolation(parity, targets),
            NodeFamily::Uniform => self.cubic_interpolation(parity, targets),
        }
    }

    pub fn interpolate(&self, parity: Parity, values: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values, parity)?;
        let e = self.interpolation_matrix(parity, targets);
        Ok(linalg::mat_vec(e.as_ref(), values))
    }

    fn trig_interpolation(&self, parity: Parity, targets: &[f64]) -> Mat<f64> {
        let n = self.n;
        let big_n = (2 * n + 1) as f64;
        let kp: Vec<f64> = (1..=n).map(|p| PI * p as f64 / self.half_length).collect();
        let xs = self.sample_nodes(parity);
        match parity {
            Parity::Odd => {
                let coef = Mat::from_fn(n, n, |p, k| 4.0 / big_n * (kp[p] * xs[k]).sin());
                let basis = Mat::from_fn(targets.len(), n, |i, p| (kp[p] * targets[i]).sin());
                basis * coef
            }
            Parity::Even => {
                let coef = Mat::from_fn(n + 1, n + 1, |p, k| {
                    let half = if k == 0 { 0.5 } else { 1.0 };
                    if p == 0 {
                        2.0 * half / big_n
                    } else {
                        4.0 * half / big_n * (kp[p - 1] * xs[k]).cos()
                    }
                });
                let basis = Mat::from_fn(targets.len(), n + 1, |i, p| {
                    if p == 0 {
                        1.0
                    } else {
                        (kp[p - 1] * targets[i]).cos()
                    }
                });
                basis * coef
            }
        }
    }

    fn cubic_interpolation(&self, parity: Parity, targets: &[f64]) -> Mat<f64> {
        let m = self.len(parity);
        let offset = match parity {
            Parity::Odd => 1i64,
            Parity::Even => 0,
        };
        let n = self.n as i64;
        let mut e = Mat::<f64>::zeros(targets.len(), m);
        for (i, &x) in targets.iter().enumerate() {
            let t = x / self.h;
            let base = (t.floor() as i64).clamp(0, n - 1);
            for s in -1..=2i64 {
                let node = base + s;
                let mut wgt = 1.0;
                for r in -1..=2i64 {
                    if r != s {
                        wgt *= (t - (base + r) as f64) / (s - r) as f64;
                    }
                }
                if node > n {
                    continue;
                }
                let (idx, sign) = if node < 0 { (-node, parity.sign()) } else { (node, 1.0) };
                if idx == 0 && parity == Parity::Odd {
                    continue;
                }
                e[(i, (idx - offset) as usize)] += sign * wgt;
            }
        }
        e
    }
}

#[derive(Clone, Debug)]
pub struct GramFactor {
    pub orth: Mat<f64>,
    pub scale: Vec<f64>,
}

fn check_sobolev_index(k: usize) -> Result<()> {
    match k {
        0 | 2 | 4 => Ok(()),
        other => Err(LabError::UnsupportedSobolevIndex(other)),
    }
}

/// Parity-restricted derivative `d^order/dx^order`.
#[derive(Clone, Debug)]
pub struct DiffOperator {
    order: usize,
    parity_in: Parity,
    matrix: Arc<Mat<f64>>,
}

impl DiffOperator {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn parity_in(&self) -> Parity {
        self.parity_in
    }

    pub fn parity_out(&self) -> Parity {
        self.parity_in.after(self.order)
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref().as_ref()
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.matrix.ncols() {
            return Err(LabError::ParityMismatch {
                expected: self.parity_in,
                expected_len: self.matrix.ncols(),
                got: values.len(),
            });
        }
        Ok(linalg::mat_vec(self.matrix(), values))
    }

    /// Apply to each column of `values` at once.
    pub fn apply_mat(&self, values: MatRef<'_, f64>) -> Mat<f64> {
        self.matrix() * values
    }
}

pub fn diff_operator(grid: &Grid, order: usize, parity_in: Parity) -> Result<DiffOperator> {
    if !(1..=4).contains(&order) {
        return Err(LabError::UnsupportedOrder(order));
    }
    Ok(DiffOperator {
        order,
        parity_in,
        matrix: grid.diff_matrix(order, parity_in),
    })
}

/// `(Σ_{j≤k} ‖D^j f‖²)^{1/2}` with the parity-folded quadrature.
pub fn sobolev_norm(grid: &Grid, values: &[f64], k: usize, parity: Parity) -> Result<f64> {
    check_sobolev_index(k)?;
    grid.check_len(values, parity)?;
    let mut total = grid.l2_norm(parity, values).powi(2);
    for j in 1..=k {
        let d = diff_operator(grid, j, parity)?;
        let dv = d.apply(values)?;
        total += grid.l2_norm(d.parity_out(), &dv).powi(2);
    }
    Ok(total.sqrt())
}

/// Samples of the `order`-th derivative of the periodic cardinal function at
/// integer offsets `r = 0..N`, with `N = 2n+1`.
fn cardinal_derivatives(n: usize, half_length: f64, order: usize) -> Vec<f64> {
    let big_n = 2 * n + 1;
    let phase = order as f64 * PI / 2.0;
    let scale = 2.0 / big_n as f64;
    (0..big_n)
        .map(|r| {
            let mut s = 0.0;
            for p in 1..=n {
                let kp = PI * p as f64 / half_length;
                let arg = 2.0 * PI * ((p * r) % big_n) as f64 / big_n as f64;
                s += kp.powi(order as i32) * (arg + phase).cos();
            }
            scale * s
        })
        .collect()
}

fn spectral_matrix(n: usize, half_length: f64, order: usize, parity_in: Parity) -> Mat<f64> {
    let d = cardinal_derivatives(n, half_length, order);
    let big_n = (2 * n + 1) as i64;
    let dr = |r: i64| d[r.rem_euclid(big_n) as usize];
    let out = parity_in.after(order);
    let rows = if out == Parity::Odd { n } else { n + 1 };
    let row_node = |i: usize| if out == Parity::Odd { i as i64 + 1 } else { i as i64 };
    match parity_in {
        Parity::Odd => Mat::from_fn(rows, n, |i, k| {
            let j = row_node(i);
            let k = k as i64 + 1;
            dr(j - k) - dr(j + k)
        }),
        Parity::Even => Mat::from_fn(rows, n + 1, |i, k| {
            let j = row_node(i);
            let k = k as i64;
            if k == 0 {
                dr(j)
            } else {
                dr(j - k) + dr(j + k)
            }
        }),
    }
}

const FD_STENCILS: [&[f64]; 4] = [
    &[0.0, 1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0, 0.0],
    &[0.0, -1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0, 0.0],
    &[1.0 / 8.0, -1.0, 13.0 / 8.0, 0.0, -13.0 / 8.0, 1.0, -1.0 / 8.0],
    &[-1.0 / 6.0, 2.0, -13.0 / 2.0, 28.0 / 3.0, -13.0 / 2.0, 2.0, -1.0 / 6.0],
];

fn uniform_matrix(n: usize, h: f64, order: usize, parity_in: Parity) -> Mat<f64> {
    let stencil = FD_STENCILS[order - 1];
    let scale = h.powi(-(order as i32));
    let out = parity_in.after(order);
    let rows = if out == Parity::Odd { n } else { n + 1 };
    let cols = if parity_in == Parity::Odd { n } else { n + 1 };
    let in_offset = if parity_in == Parity::Odd { 1 } else { 0 };
    let mut m = Mat::<f64>::zeros(rows, cols);
    for i in 0..rows {
        let j = if out == Parity::Odd { i as i64 + 1 } else { i as i64 };
        for (s, &a) in stencil.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let t = j + s as i64 - 3;
            if t > n as i64 {
                continue;
            }
            let (idx, sign) = if t < 0 { (-t, parity_in.sign()) } else { (t, 1.0) };
            if idx == 0 && parity_in == Parity::Odd {
                continue;
            }
            m[(i, (idx - in_offset) as usize)] += sign * a * scale;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn uniform_spacing_is_exact() {
        let g = build_grid(40.0, 1024, NodeFamily::Uniform).unwrap();
        assert_eq!(g.h(), 40.0 / 1024.0);
        let g = build_grid(1.0, 8, NodeFamily::Uniform).unwrap();
        let expected: Vec<f64> = (1..=8).map(|k| k as f64 / 8.0).collect();
        assert_eq!(g.nodes(), expected.as_slice());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            build_grid(-1.0, 16, NodeFamily::Uniform),
            Err(LabError::Parameter(_))
        ));
        assert!(matches!(
            build_grid(1.0, 7, NodeFamily::Spectral),
            Err(LabError::Parameter(_))
        ));
        let g = build_grid(1.0, 8, NodeFamily::Spectral).unwrap();
        assert!(matches!(
            diff_operator(&g, 5, Parity::Odd),
            Err(LabError::UnsupportedOrder(5))
        ));
        assert!(matches!(
            sobolev_norm(&g, &[0.0; 8], 3, Parity::Odd),
            Err(LabError::UnsupportedSobolevIndex(3))
        ));
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        for family in [NodeFamily::Spectral, NodeFamily::Uniform] {
            let g = build_grid(10.0, 64, family).unwrap();
            let one = vec![1.0; g.len(Parity::Even)];
            for order in 1..=4 {
                let d = diff_operator(&g, order, Parity::Even).unwrap();
                let out = d.apply(&one).unwrap();
                // The uniform closure treats values beyond L as zero, so only
                // interior rows see a constant.
                let rows = match family {
                    NodeFamily::Spectral => out.len(),
                    NodeFamily::Uniform => out.len() - 4,
                };
                let scale = g.h().powi(-(order as i32));
                assert!(max_err(&out[..rows], &vec![0.0; rows]) < 1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn sine_derivative_converges() {
        let l = 14.0;
        let k = PI / (2.0 * l);
        // Odd under x -> -x and vanishing with its derivatives near the far edge.
        let f = |x: f64| (k * x).sin() * (-x * x / 4.0).exp();
        let df = |x: f64| (k * (k * x).cos() - x / 2.0 * (k * x).sin()) * (-x * x / 4.0).exp();
        let err = |n: usize, family| {
            let g = build_grid(l, n, family).unwrap();
            let d = diff_operator(&g, 1, Parity::Odd).unwrap();
            let out = d.apply(&g.sample(Parity::Odd, f)).unwrap();
            max_err(&out, &g.sample(Parity::Even, df))
        };
        let (e1, e2) = (err(64, NodeFamily::Uniform), err(128, NodeFamily::Uniform));
        assert!(e2 < e1 / 12.0, "uniform: {e1:e} -> {e2:e}");
        let (e1, e2) = (err(24, NodeFamily::Spectral), err(48, NodeFamily::Spectral));
        assert!(e2 < e1 / 100.0, "spectral: {e1:e} -> {e2:e}");
        assert!(e2 < 1e-10);
    }

    #[test]
    fn second_derivative_refinement_ratio() {
        let f = |x: f64| (-x * x).exp();
        let d2f = |x: f64| (4.0 * x * x - 2.0) * (-x * x).exp();
        let err = |n: usize| {
            let g = build_grid(8.0, n, NodeFamily::Uniform).unwrap();
            let d = diff_operator(&g, 2, Parity::Even).unwrap();
            let out = d.apply(&g.sample(Parity::Even, f)).unwrap();
            max_err(&out, &g.sample(Parity::Even, d2f))
        };
        let ratio = err(64) / err(128);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn higher_orders_match_analytic() {
        let f = |x: f64| x * (-x * x).exp();
        let derivs: [fn(f64) -> f64; 4] = [
            |x| (1.0 - 2.0 * x * x) * (-x * x).exp(),
            |x| (4.0 * x.powi(3) - 6.0 * x) * (-x * x).exp(),
            |x| (-8.0 * x.powi(4) + 24.0 * x * x - 6.0) * (-x * x).exp(),
            |x| (16.0 * x.powi(5) - 80.0 * x.powi(3) + 60.0 * x) * (-x * x).exp(),
        ];
        let g = build_grid(8.0, 64, NodeFamily::Spectral).unwrap();
        let fs = g.sample(Parity::Odd, f);
        for (j, d) in derivs.iter().enumerate() {
            let op = diff_operator(&g, j + 1, Parity::Odd).unwrap();
            let out = op.apply(&fs).unwrap();
            let exact = g.sample(op.parity_out(), d);
            assert!(max_err(&out, &exact) < 1e-9, "order {}", j + 1);
        }
    }

    #[test]
    fn weights_integrate_gaussian() {
        for family in [NodeFamily::Spectral, NodeFamily::Uniform] {
            let g = build_grid(10.0, 200, family).unwrap();
            let f = g.sample(Parity::Even, |x| (-x * x).exp());
            let total: f64 = g.weights(Parity::Even).iter().zip(&f).map(|(w, v)| w * v).sum();
            assert!((total - PI.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn sobolev_norms_nest_and_vanish_on_zero() {
        let g = build_grid(10.0, 64, NodeFamily::Spectral).unwrap();
        assert_eq!(sobolev_norm(&g, &vec![0.0; 64], 4, Parity::Odd).unwrap(), 0.0);
        let f = g.sample(Parity::Even, |x| 1.0 / (x * 0.5).cosh().powi(2));
        let n0 = sobolev_norm(&g, &f, 0, Parity::Even).unwrap();
        let n2 = sobolev_norm(&g, &f, 2, Parity::Even).unwrap();
        let n4 = sobolev_norm(&g, &f, 4, Parity::Even).unwrap();
        assert!(n0 <= n2 && n2 <= n4);
        let unit: Vec<f64> = f.iter().map(|v| v / n0).collect();
        assert!((sobolev_norm(&g, &unit, 0, Parity::Even).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gram_matches_sobolev_norm() {
        let g = build_grid(10.0, 40, NodeFamily::Spectral).unwrap();
        let f = g.sample(Parity::Odd, |x| x * (-x * x / 3.0).exp());
        for k in [0, 2, 4] {
            let gram = g.gram(k, Parity::Odd).unwrap();
            let gf = linalg::mat_vec(gram.as_ref(), &f);
            let quad = linalg::dot(&f, &gf).sqrt();
            let norm = sobolev_norm(&g, &f, k, Parity::Odd).unwrap();
            assert!((quad - norm).abs() < 1e-8 * norm, "k={k}: {quad} vs {norm}");
        }
    }

    #[test]
    fn gram_factor_reproduces_gram() {
        for family in [NodeFamily::Spectral, NodeFamily::Uniform] {
            let g = build_grid(6.0, 24, family).unwrap();
            for k in [0, 2, 4] {
                let gram = g.gram(k, Parity::Odd).unwrap();
                let f = g.gram_factor(k, Parity::Odd).unwrap();
                let r = Mat::from_fn(24, 24, |i, j| f.scale[i] * f.orth[(i, j)]);
                let rtr = r.transpose() * &r;
                let w = g.weights(Parity::Odd);
                let mut err = 0.0f64;
                let mut big = 0.0f64;
                for i in 0..24 {
                    for j in 0..24 {
                        let target = gram[(i, j)] / (w[i] * w[j]).sqrt();
                        err = err.max((rtr[(i, j)] - target).abs());
                        big = big.max(target.abs());
                    }
                }
                assert!(err < 1e-10 * big, "{family:?} k={k}: {err:e}");
            }
        }
    }

    #[test]
    fn spectral_adjoint_relation() {
        // D_{e<-o}ᵀ W_e = -W_o D_{o<-e}
        let g = build_grid(5.0, 20, NodeFamily::Spectral).unwrap();
        let deo = diff_operator(&g, 1, Parity::Odd).unwrap();
        let doe = diff_operator(&g, 1, Parity::Even).unwrap();
        let we = g.weights(Parity::Even);
        let wo = g.weights(Parity::Odd);
        let (a, b) = (deo.matrix(), doe.matrix());
        for i in 0..g.len(Parity::Odd) {
            for j in 0..g.len(Parity::Even) {
                let lhs = a[(j, i)] * we[j];
                let rhs = -wo[i] * b[(i, j)];
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_smooth_functions() {
        let f = |x: f64| x * (-x * x / 2.0).exp();
        let targets: Vec<f64> = (0..50).map(|i| 0.13 * i as f64).collect();
        let exact: Vec<f64> = targets.iter().map(|&x| f(x)).collect();
        let g = build_grid(12.0, 64, NodeFamily::Spectral).unwrap();
        let vals = g.interpolate(Parity::Odd, &g.sample(Parity::Odd, f), &targets).unwrap();
        assert!(max_err(&vals, &exact) < 1e-12);
        let g = build_grid(12.0, 400, NodeFamily::Uniform).unwrap();
        let vals = g.interpolate(Parity::Odd, &g.sample(Parity::Odd, f), &targets).unwrap();
        assert!(max_err(&vals, &exact) < 1e-5);
    }

    #[test]
    fn wrong_length_is_a_parity_mismatch() {
        let g = build_grid(5.0, 16, NodeFamily::Spectral).unwrap();
        let d = diff_operator(&g, 1, Parity::Odd).unwrap();
        assert!(matches!(d.apply(&[0.0; 17]), Err(LabError::ParityMismatch { .. })));
    }
}
