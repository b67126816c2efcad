//! Discrete linearized operators about the line solitary wave.
//!
//! Symmetric operators are stored in the weighted coordinates `u = W^{1/2} f`,
//! in which the quadrature inner product becomes the Euclidean one and the
//! matrices are exactly symmetric. Sample-space action is
//! `W^{-1/2} S W^{1/2}`.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use faer::{Mat, MatRef};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::grid::{build_grid, diff_operator, Grid, NodeFamily, Parity};
use crate::linalg;
use crate::soliton::{self, SolitonParams, SolitonProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    M,
    L,
    K,
}

#[derive(Clone, Debug)]
pub struct SymmetricOperator {
    pub kind: OperatorKind,
    pub parity: Parity,
    pub grid: Grid,
    /// Symmetric matrix in weighted coordinates.
    pub sym: Mat<f64>,
    sqrt_w: Vec<f64>,
    factors: Arc<Factors>,
}

/// First-order factors: `S = outerᵀ (gradᵀ grad + diag(v)) outer`, with
/// `outer = I` when absent. Applying them in turn avoids the cancellation of
/// a dense fourth-order matrix.
#[derive(Debug)]
struct Factors {
    grad: Mat<f64>,
    diag: Vec<f64>,
    outer: Option<Mat<f64>>,
}

impl SymmetricOperator {
    fn new(kind: OperatorKind, parity: Parity, grid: &Grid, mut sym: Mat<f64>, factors: Factors) -> Self {
        linalg::symmetrize(&mut sym);
        let sqrt_w = grid.weights(parity).iter().map(|w| w.sqrt()).collect();
        SymmetricOperator {
            kind,
            parity,
            grid: grid.clone(),
            sym,
            sqrt_w,
            factors: Arc::new(factors),
        }
    }

    /// `S U` in weighted coordinates through the factored form.
    pub fn apply_weighted(&self, u: MatRef<'_, f64>) -> Mat<f64> {
        let f = &self.factors;
        let inner = match &f.outer {
            Some(o) => o * u,
            None => u.to_owned(),
        };
        let g = &f.grad * &inner;
        let mut mid = f.grad.transpose() * &g;
        for j in 0..mid.ncols() {
            for (i, v) in f.diag.iter().enumerate() {
                mid[(i, j)] += v * inner[(i, j)];
            }
        }
        match &f.outer {
            Some(o) => o.transpose() * &mid,
            None => mid,
        }
    }

    pub fn dim(&self) -> usize {
        self.sym.nrows()
    }

    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_w
    }

    pub fn to_weighted(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.sqrt_w).map(|(v, s)| v * s).collect()
    }

    pub fn from_weighted(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.sqrt_w).map(|(v, s)| v / s).collect()
    }

    /// Apply to a grid function given by its samples.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(f, self.parity)?;
        let u = self.to_weighted(f);
        let su = self.apply_weighted(MatRef::from_column_major_slice(&u, u.len(), 1));
        Ok(self.from_weighted(su.col_as_slice(0)))
    }

    /// Matrix acting on samples.
    pub fn sample_matrix(&self) -> Mat<f64> {
        let inv: Vec<f64> = self.sqrt_w.iter().map(|s| 1.0 / s).collect();
        linalg::scale(self.sym.as_ref(), &inv, &self.sqrt_w)
    }

    pub fn symmetry_defect(&self) -> f64 {
        linalg::symmetry_defect(self.sym.as_ref())
    }

    /// Largest absolute entry of the weighted matrix, a cheap scale for ‖·‖.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                m = m.max(self.sym[(i, j)].abs());
            }
        }
        m
    }
}

pub type OperatorM = SymmetricOperator;
pub type OperatorL = SymmetricOperator;

/// `Fᵀ F + diag(v)` with `F = diag(√(w_mid·a)) D diag(w_in^{-1/2})`, i.e. the
/// weighted form of `−∂ₓ a ∂ₓ + v` on functions of the given parity.
fn divergence_form(grid: &Grid, parity: Parity, a_mid: &[f64], v: &[f64]) -> Result<(Mat<f64>, Factors)> {
    let d = diff_operator(grid, 1, parity)?;
    let w_mid = grid.weights(parity.flip());
    let left: Vec<f64> = w_mid.iter().zip(a_mid).map(|(w, a)| (w * a).sqrt()).collect();
    let right: Vec<f64> = grid.weights(parity).iter().map(|w| 1.0 / w.sqrt()).collect();
    let f = linalg::scale(d.matrix(), &left, &right);
    let mut s = f.transpose() * &f;
    for (i, vi) in v.iter().enumerate() {
        s[(i, i)] += vi;
    }
    let factors = Factors {
        grad: f,
        diag: v.to_vec(),
        outer: None,
    };
    Ok((s, factors))
}

fn on_parity(even_values: &[f64], parity: Parity) -> Vec<f64> {
    match parity {
        Parity::Even => even_values.to_vec(),
        Parity::Odd => even_values[1..].to_vec(),
    }
}

/// `M = −∂ₓ(c−Q)∂ₓ + Q″ − 3Q + c − 2κ` restricted to the given parity.
pub fn assemble_m(profile: &SolitonProfile, grid: &Grid, parity: Parity) -> Result<OperatorM> {
    profile.check_grid(grid)?;
    let SolitonParams { c, .. } = profile.params;
    let a = profile.params.amplitude();
    let coeff_mid: Vec<f64> = on_parity(&profile.q, parity.flip())
        .iter()
        .map(|q| c - q)
        .collect();
    let v: Vec<f64> = on_parity(&profile.q, parity)
        .iter()
        .zip(on_parity(&profile.qxx, parity))
        .map(|(q, qxx)| qxx - 3.0 * q + a)
        .collect();
    let (s, factors) = divergence_form(grid, parity, &coeff_mid, &v)?;
    Ok(SymmetricOperator::new(OperatorKind::M, parity, grid, s, factors))
}

/// `L = −∂ₓ M ∂ₓ` on odd functions, assembled as `Fᵀ M_even F` so that
/// `⟨Lψ, ψ⟩ = ⟨M ψₓ, ψₓ⟩` holds exactly.
pub fn assemble_l(profile: &SolitonProfile, grid: &Grid) -> Result<OperatorL> {
    let m_even = assemble_m(profile, grid, Parity::Even)?;
    assemble_l_from_m(&m_even)
}

pub fn assemble_l_from_m(m_even: &OperatorM) -> Result<OperatorL> {
    if m_even.parity != Parity::Even || m_even.kind != OperatorKind::M {
        return Err(LabError::GridMismatch("L needs M on even functions".into()));
    }
    let grid = &m_even.grid;
    let d = diff_operator(grid, 1, Parity::Odd)?;
    let left: Vec<f64> = grid.weights(Parity::Even).iter().map(|w| w.sqrt()).collect();
    let right: Vec<f64> = grid.weights(Parity::Odd).iter().map(|w| 1.0 / w.sqrt()).collect();
    let f = linalg::scale(d.matrix(), &left, &right);
    let sf = &m_even.sym * &f;
    let s = f.transpose() * sf;
    let inner = &m_even.factors;
    let factors = Factors {
        grad: inner.grad.clone(),
        diag: inner.diag.clone(),
        outer: Some(f),
    };
    Ok(SymmetricOperator::new(OperatorKind::L, Parity::Odd, grid, s, factors))
}

/// `∂ₓ²((c−Q)∂ₓ²) − (c−2κ)∂ₓ² − ∂ₓ((Q″−3Q)∂ₓ)` on odd samples, assembled
/// directly from differentiation matrices.
pub fn assemble_l_expanded(profile: &SolitonProfile, grid: &Grid) -> Result<Mat<f64>> {
    profile.check_grid(grid)?;
    let c = profile.params.c;
    let a = profile.params.amplitude();
    let d2 = diff_operator(grid, 2, Parity::Odd)?;
    let deo = diff_operator(grid, 1, Parity::Odd)?;
    let doe = diff_operator(grid, 1, Parity::Even)?;
    let cq: Vec<f64> = profile.q_positive().iter().map(|q| c - q).collect();
    let ones = vec![1.0; grid.len(Parity::Odd)];
    let d2m = d2.matrix();
    let first = d2m * linalg::scale(d2m, &cq, &ones);
    let v: Vec<f64> = profile
        .q
        .iter()
        .zip(&profile.qxx)
        .map(|(q, qxx)| qxx - 3.0 * q)
        .collect();
    let third = doe.matrix() * linalg::scale(deo.matrix(), &v, &ones);
    Ok(Mat::from_fn(d2m.nrows(), d2m.ncols(), |i, j| {
        first[(i, j)] - a * d2m[(i, j)] - third[(i, j)]
    }))
}

/// The change of variables `z = ∫₀ˣ (c−Q)^{-1/2}` with its amplitude factor.
#[derive(Clone, Debug)]
pub struct LiouvilleMap {
    pub params: SolitonParams,
    pub x_grid: Grid,
    /// `z(x_k)` on the even nodes `x_0..x_n`.
    pub z: Vec<f64>,
    /// `(c − Q(x_k))^{1/4}` on the even nodes.
    pub weight: Vec<f64>,
    /// `z(L_dom)`.
    pub z_max: f64,
}

/// `z` as a function of the profile height, `(2/√A)·artanh √(1 − Q/A)`.
fn z_of_q(p: &SolitonParams, q: f64) -> f64 {
    let a = p.amplitude();
    if q >= a {
        return 0.0;
    }
    let t = (1.0 - q / a).sqrt();
    (2.0 * t.ln_1p() - (q / a).ln()) / a.sqrt()
}

/// Profile height at a given `z`, `A·sech²(√A z / 2)`.
pub fn q_of_z(p: &SolitonParams, z: f64) -> f64 {
    let a = p.amplitude();
    a / (0.5 * a.sqrt() * z).cosh().powi(2)
}

pub fn build_liouville(profile: &SolitonProfile) -> LiouvilleMap {
    let p = profile.params;
    let z = profile.q.iter().map(|&q| z_of_q(&p, q)).collect();
    let weight = profile.q.iter().map(|&q| (p.c - q).powf(0.25)).collect();
    let z_max = z_of_q(&p, soliton::profile_at(&p, profile.grid.half_length()));
    LiouvilleMap {
        params: p,
        x_grid: profile.grid.clone(),
        z,
        weight,
        z_max,
    }
}

impl LiouvilleMap {
    pub fn z_at(&self, x: f64) -> f64 {
        z_of_q(&self.params, soliton::profile_at(&self.params, x))
    }

    pub fn x_at(&self, z: f64) -> f64 {
        let s = 0.5 * self.params.amplitude().sqrt() * z.abs();
        soliton::crest_distance(&self.params, q_of_z(&self.params, z.abs()), s.tanh())
    }

    /// Uniform `z`-grid of the same family covering `[0, z(L_dom)]`.
    pub fn z_grid(&self, n: usize) -> Result<Grid> {
        build_grid(self.z_max, n, NodeFamily::Spectral)
    }

    fn check_range(&self, z_grid: &Grid) -> Result<()> {
        let z_last = *z_grid.nodes().last().unwrap();
        if z_last > self.z_max * (1.0 + 1e-12) {
            return Err(LabError::OutsideMapRange {
                z: z_last,
                z_max: self.z_max,
            });
        }
        Ok(())
    }

    /// `Γ(z) = (c−Q)^{1/4} ψ(x(z))` sampled on `z_grid`.
    pub fn to_z(&self, psi: &[f64], parity: Parity, z_grid: &Grid) -> Result<Vec<f64>> {
        self.check_range(z_grid)?;
        let zs = z_grid.sample_nodes(parity);
        let xs: Vec<f64> = zs.iter().map(|&z| self.x_at(z)).collect();
        let vals = self.x_grid.interpolate(parity, psi, &xs)?;
        Ok(zs
            .iter()
            .zip(vals)
            .map(|(&z, v)| (self.params.c - q_of_z(&self.params, z)).powf(0.25) * v)
            .collect())
    }

    /// Inverse of [`LiouvilleMap::to_z`], sampled on the `x`-grid.
    pub fn to_x(&self, gamma: &[f64], parity: Parity, z_grid: &Grid) -> Result<Vec<f64>> {
        self.check_range(z_grid)?;
        let (zs, ws) = match parity {
            Parity::Even => (self.z.clone(), self.weight.clone()),
            Parity::Odd => (self.z[1..].to_vec(), self.weight[1..].to_vec()),
        };
        let vals = z_grid.interpolate(parity, gamma, &zs)?;
        Ok(vals.iter().zip(ws).map(|(v, w)| v / w).collect())
    }

    /// `q(z) = ¾Q″ − 3Q − Q′²/(16(c−Q))` at a given `z`.
    pub fn potential(&self, z: f64) -> f64 {
        let p = &self.params;
        let q = q_of_z(p, z);
        let qx = soliton::slope_from_value(p, q);
        let qxx = soliton::curvature_from_value(p, q, qx);
        0.75 * qxx - 3.0 * q - qx * qx / (16.0 * (p.c - q))
    }
}

#[derive(Clone, Debug)]
pub struct OperatorK {
    pub z_grid: Grid,
    /// `q` on the even `z`-nodes.
    pub potential: Vec<f64>,
    pub even: SymmetricOperator,
    pub odd: SymmetricOperator,
}

impl OperatorK {
    pub fn block(&self, parity: Parity) -> &SymmetricOperator {
        match parity {
            Parity::Even => &self.even,
            Parity::Odd => &self.odd,
        }
    }
}

/// `K = −∂_zz + q(z) + c − 2κ` on both parity sectors of `z_grid`.
pub fn assemble_k(profile: &SolitonProfile, map: &LiouvilleMap, z_grid: &Grid) -> Result<OperatorK> {
    if map.params != profile.params {
        return Err(LabError::GridMismatch("map built from a different profile".into()));
    }
    map.check_range(z_grid)?;
    let a = profile.params.amplitude();
    let potential: Vec<f64> = z_grid.sample(Parity::Even, |z| map.potential(z));
    let block = |parity: Parity| -> Result<SymmetricOperator> {
        let ones = vec![1.0; z_grid.len(parity.flip())];
        let v: Vec<f64> = on_parity(&potential, parity).iter().map(|q| q + a).collect();
        let (s, factors) = divergence_form(z_grid, parity, &ones, &v)?;
        Ok(SymmetricOperator::new(OperatorKind::K, parity, z_grid, s, factors))
    };
    Ok(OperatorK {
        z_grid: z_grid.clone(),
        even: block(Parity::Even)?,
        odd: block(Parity::Odd)?,
        potential,
    })
}

fn pad_origin(m: Mat<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows() + 1, m.ncols(), |i, j| if i == 0 { 0.0 } else { m[(i - 1, j)] })
}

/// Derivatives `(ψₓ, ψₓₓ, ψₓₓₓ)` of each odd column, with `ψₓₓ` padded by its
/// structural zero at the origin so all three live on the even nodes.
pub fn odd_derivatives(grid: &Grid, psi: MatRef<'_, f64>) -> Result<[Mat<f64>; 3]> {
    let d1 = diff_operator(grid, 1, Parity::Odd)?;
    let d2 = diff_operator(grid, 2, Parity::Odd)?;
    let d3 = diff_operator(grid, 3, Parity::Odd)?;
    Ok([d1.apply_mat(psi), pad_origin(d2.apply_mat(psi)), d3.apply_mat(psi)])
}

/// `N(ψ) = (½ψₓₓ² + ψₓψₓₓₓ − 3/2 ψₓ²)ₓ` applied to each odd column.
pub fn apply_n_mat(grid: &Grid, psi: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if psi.nrows() != grid.len(Parity::Odd) {
        return Err(LabError::ParityMismatch {
            expected: Parity::Odd,
            expected_len: grid.len(Parity::Odd),
            got: psi.nrows(),
        });
    }
    let [px, pxx, pxxx] = odd_derivatives(grid, psi)?;
    let e = Mat::from_fn(px.nrows(), px.ncols(), |i, j| {
        let (a, b, c) = (px[(i, j)], pxx[(i, j)], pxxx[(i, j)]);
        0.5 * b * b + a * c - 1.5 * a * a
    });
    Ok(diff_operator(grid, 1, Parity::Even)?.apply_mat(e.as_ref()))
}

pub fn apply_n(psi: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    grid.check_len(psi, Parity::Odd)?;
    let m = apply_n_mat(grid, MatRef::from_column_major_slice(psi, psi.len(), 1))?;
    Ok(m.col_as_slice(0).to_vec())
}

/// Directional derivative `dN[ψ]h = (ψₓₓhₓₓ + ψₓhₓₓₓ + hₓψₓₓₓ − 3ψₓhₓ)ₓ`,
/// column by column, given the precomputed derivatives of `ψ`.
pub fn apply_dn_mat(grid: &Grid, psi_derivs: &[Mat<f64>; 3], h: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let [px, pxx, pxxx] = psi_derivs;
    let [hx, hxx, hxxx] = odd_derivatives(grid, h)?;
    let e = Mat::from_fn(px.nrows(), px.ncols(), |i, j| {
        pxx[(i, j)] * hxx[(i, j)] + px[(i, j)] * hxxx[(i, j)] + hx[(i, j)] * pxxx[(i, j)]
            - 3.0 * px[(i, j)] * hx[(i, j)]
    });
    Ok(diff_operator(grid, 1, Parity::Even)?.apply_mat(e.as_ref()))
}

pub fn apply_dn(psi: &[f64], h: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    grid.check_len(psi, Parity::Odd)?;
    grid.check_len(h, Parity::Odd)?;
    let derivs = odd_derivatives(grid, MatRef::from_column_major_slice(psi, psi.len(), 1))?;
    let m = apply_dn_mat(grid, &derivs, MatRef::from_column_major_slice(h, h.len(), 1))?;
    Ok(m.col_as_slice(0).to_vec())
}

/// A state `W = (W₁, W₂)` of the first-order system in the unbounded variable.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl BlockState {
    pub fn norm(&self) -> f64 {
        (linalg::dot(&self.w1, &self.w1) + linalg::dot(&self.w2, &self.w2)).sqrt()
    }

    pub fn add(&self, other: &BlockState) -> BlockState {
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        BlockState {
            w1: sum(&self.w1, &other.w1),
            w2: sum(&self.w2, &other.w2),
        }
    }
}

/// `𝓛 = [[0, L], [I, 0]]` acting on pairs of odd grid functions.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    pub l: OperatorL,
}

pub fn assemble_blocks(l: &OperatorL) -> BlockOperator {
    BlockOperator { l: l.clone() }
}

impl BlockOperator {
    pub fn grid(&self) -> &Grid {
        &self.l.grid
    }

    pub fn apply(&self, w: &BlockState) -> Result<BlockState> {
        Ok(BlockState {
            w1: self.l.apply(&w.w2)?,
            w2: w.w1.clone(),
        })
    }

    /// The reverser `S(W₁, W₂) = (−W₁, W₂)`.
    pub fn reverse(&self, w: &BlockState) -> BlockState {
        BlockState {
            w1: w.w1.iter().map(|v| -v).collect(),
            w2: w.w2.clone(),
        }
    }

    /// `𝒩(W) = (−N(W₂), 0)`.
    pub fn nonlinearity(&self, w: &BlockState) -> Result<BlockState> {
        Ok(BlockState {
            w1: apply_n(&w.w2, self.grid())?.iter().map(|v| -v).collect(),
            w2: vec![0.0; w.w2.len()],
        })
    }

    /// Dense `2n × 2n` matrix acting on stacked samples `(W₁, W₂)`.
    pub fn dense(&self) -> Mat<f64> {
        let n = self.l.dim();
        let lm = self.l.sample_matrix();
        Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
            (true, false) => lm[(i, j - n)],
            (false, true) => {
                if i - n == j {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 0.0,
        })
    }

    /// Dense reverser `diag(−I, I)`.
    pub fn dense_reverser(&self) -> Mat<f64> {
        let n = self.l.dim();
        Mat::from_fn(2 * n, 2 * n, |i, j| {
            if i != j {
                0.0
            } else if i < n {
                -1.0
            } else {
                1.0
            }
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DumpHeader {
    pub operator: String,
    pub shape: [usize; 2],
    pub dtype: &'static str,
    pub layout: &'static str,
    pub representation: &'static str,
    pub parity: Parity,
    pub c: f64,
    pub kappa: f64,
    pub half_length: f64,
    pub n: usize,
    pub family: NodeFamily,
}

/// Write `<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
pub fn dump_operator(op: &SymmetricOperator, params: &SolitonParams, dir: &Path, stem: &str) -> Result<()> {
    let m = &op.sym;
    let mut bytes = Vec::with_capacity(m.nrows() * m.ncols() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    let header = DumpHeader {
        operator: format!("{:?}", op.kind),
        shape: [m.nrows(), m.ncols()],
        dtype: "f64le",
        layout: "row-major",
        representation: "weighted (W^1/2 S W^-1/2 acts on samples)",
        parity: op.parity,
        c: params.c,
        kappa: params.kappa,
        half_length: op.grid.half_length(),
        n: op.grid.n(),
        family: op.grid.family(),
    };
    let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(&mut f, &header)?;
    f.write_all(b"\n")?;
    Ok(())
}
