//! Camassa–Holm line solitary wave.
//!
//! The travelling-wave ODE `−cQ + cQ″ + 2κQ + 3/2 Q² − 1/2 Q′² − QQ″ = 0`
//! has the first integral `Q′² = Q²(A−Q)/(c−Q)` with `A = c − 2κ`, which is
//! separable and integrates in closed form. The profile is obtained by
//! inverting that antiderivative node by node.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{diff_operator, Grid, Parity};
use crate::linalg;
use crate::report::Verdict;

/// Largest `α·h` accepted by [`solve_profile`].
pub const MAX_ALPHA_H: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub c: f64,
    pub kappa: f64,
}

impl SolitonParams {
    pub fn new(c: f64, kappa: f64) -> Result<Self> {
        let p = SolitonParams { c, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() || !self.c.is_finite() {
            return Err(LabError::Parameter(format!(
                "kappa must be positive and c finite (c = {}, kappa = {})",
                self.c, self.kappa
            )));
        }
        if !(self.c > 2.0 * self.kappa) {
            return Err(LabError::Parameter(format!(
                "solitary waves exist only for c > 2*kappa (c = {}, 2*kappa = {})",
                self.c,
                2.0 * self.kappa
            )));
        }
        Ok(())
    }

    /// Crest height `A = c − 2κ`.
    pub fn amplitude(&self) -> f64 {
        self.c - 2.0 * self.kappa
    }

    /// Spatial decay rate `α = √(1 − 2κ/c)`.
    pub fn alpha(&self) -> f64 {
        (1.0 - 2.0 * self.kappa / self.c).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SolitonProfile {
    pub params: SolitonParams,
    pub grid: Grid,
    /// Even samples on `x_0..x_n`; `q[0]` is the crest.
    pub q: Vec<f64>,
    /// Odd samples on `x_1..x_n`.
    pub qx: Vec<f64>,
    /// Even samples on `x_0..x_n`.
    pub qxx: Vec<f64>,
    pub alpha: f64,
}

impl SolitonProfile {
    /// The trivial solution `Q ≡ 0`.
    pub fn zero(params: SolitonParams, grid: &Grid) -> Self {
        SolitonProfile {
            params,
            grid: grid.clone(),
            q: vec![0.0; grid.len(Parity::Even)],
            qx: vec![0.0; grid.len(Parity::Odd)],
            qxx: vec![0.0; grid.len(Parity::Even)],
            alpha: params.alpha(),
        }
    }

    pub fn crest(&self) -> f64 {
        self.q[0]
    }

    /// `Q` restricted to the positive nodes.
    pub fn q_positive(&self) -> &[f64] {
        &self.q[1..]
    }

    pub fn qxx_positive(&self) -> &[f64] {
        &self.qxx[1..]
    }

    /// `Q′` with the structural zero at the origin prepended.
    pub fn qx_with_origin(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.qx.iter().copied()).collect()
    }

    /// `e^{−α L_dom}`, the size of the profile where the domain is truncated.
    pub fn boundary_decay(&self) -> f64 {
        (-self.alpha * self.grid.half_length()).exp()
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if &self.grid != grid {
            return Err(LabError::GridMismatch(format!(
                "profile built on {:?}, operator requested on {:?}",
                self.grid, grid
            )));
        }
        Ok(())
    }
}

/// Distance from the crest as a function of `Q`, with `v = √(1 − Q/A)`
/// supplied separately so that neither end of the range loses digits.
pub fn crest_distance(p: &SolitonParams, q: f64, v: f64) -> f64 {
    let (c, a) = (p.c, p.amplitude());
    let cq = c - q;
    let gap = c - a;
    let t1 = 2.0 * a * v * (c * v + (c * cq).sqrt()) / (q * gap);
    let t2 = (a.sqrt() * v + a * v * v / (cq.sqrt() + gap.sqrt())) / gap.sqrt();
    (c / a).sqrt() * t1.ln_1p() - 2.0 * t2.ln_1p()
}

/// Safeguarded Newton on a monotone function with a sign change in `[lo, hi]`.
fn safeguarded_newton(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64) -> f64 {
    let (flo, _) = f(lo);
    if flo > 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (ft, dft) = f(t);
        if ft == 0.0 {
            return t;
        }
        if ft < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - ft / dft;
        let inside = (newton - lo) * (newton - hi) < 0.0;
        let next = if inside && dft.is_finite() { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 4.0 * f64::EPSILON * t.abs().max(1e-300) {
            return next;
        }
        t = next;
    }
    t
}

/// Profile value at distance `x ≥ 0` from the crest.
pub fn profile_at(p: &SolitonParams, x: f64) -> f64 {
    let x = x.abs();
    let a = p.amplitude();
    if x == 0.0 {
        return a;
    }
    let c = p.c;
    let v_half = 0.5f64.sqrt();
    let x_half = crest_distance(p, 0.5 * a, v_half);
    if x <= x_half {
        let v = safeguarded_newton(
            |v| {
                let q = a * (1.0 - v) * (1.0 + v);
                let dx = 2.0 * a.sqrt() * (c - q).sqrt() / q;
                (crest_distance(p, q, v) - x, dx)
            },
            0.0,
            v_half,
        );
        a * (1.0 - v) * (1.0 + v)
    } else {
        let mut u_lo = a.ln() - p.alpha() * x - 10.0;
        loop {
            let q = u_lo.exp();
            if q == 0.0 {
                return 0.0;
            }
            if crest_distance(p, q, ((a - q) / a).sqrt()) > x {
                break;
            }
            u_lo -= 10.0;
        }
        let u = safeguarded_newton(
            |u| {
                let q = u.exp();
                let dx = -((c - q) / (a - q)).sqrt();
                (crest_distance(p, q, ((a - q) / a).sqrt()) - x, dx)
            },
            u_lo,
            (0.5 * a).ln(),
        );
        u.exp()
    }
}

/// `Q′` for `x > 0` from the first integral.
pub fn slope_from_value(p: &SolitonParams, q: f64) -> f64 {
    let a = p.amplitude();
    -q * ((a - q).max(0.0) / (p.c - q)).sqrt()
}

/// `Q″` from the ODE solved for the highest derivative.
pub fn curvature_from_value(p: &SolitonParams, q: f64, qx: f64) -> f64 {
    let a = p.amplitude();
    (a * q - 1.5 * q * q + 0.5 * qx * qx) / (p.c - q)
}

pub fn solve_profile(params: SolitonParams, grid: &Grid) -> Result<SolitonProfile> {
    params.validate()?;
    let alpha = params.alpha();
    let alpha_h = alpha * grid.h();
    if alpha_h > MAX_ALPHA_H {
        return Err(LabError::GridTooCoarse {
            alpha_h,
            limit: MAX_ALPHA_H,
        });
    }
    let q: Vec<f64> = grid.sample(Parity::Even, |x| profile_at(&params, x));
    let qx: Vec<f64> = q[1..].iter().map(|&v| slope_from_value(&params, v)).collect();
    let qxx: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let s = if k == 0 { 0.0 } else { qx[k - 1] };
            curvature_from_value(&params, v, s)
        })
        .collect();
    Ok(SolitonProfile {
        params,
        grid: grid.clone(),
        q,
        qx,
        qxx,
        alpha,
    })
}

/// Derivatives of the stored `Q` recomputed with the grid's differentiation matrices.
fn numerical_derivatives(profile: &SolitonProfile) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = &profile.grid;
    let d1 = diff_operator(g, 1, Parity::Even)?.apply(&profile.q)?;
    let d2 = diff_operator(g, 2, Parity::Even)?.apply(&profile.q)?;
    let mut d1e = vec![0.0];
    d1e.extend(d1);
    Ok((d1e, d2))
}

/// L² norm of the ODE defect with `Q′`, `Q″` recomputed from `Q` by differentiation.
pub fn ode_residual(profile: &SolitonProfile) -> Result<f64> {
    let SolitonParams { c, kappa } = profile.params;
    let (qx, qxx) = numerical_derivatives(profile)?;
    let r: Vec<f64> = profile
        .q
        .iter()
        .zip(&qx)
        .zip(&qxx)
        .map(|((&q, &q1), &q2)| -c * q + c * q2 + 2.0 * kappa * q + 1.5 * q * q - 0.5 * q1 * q1 - q * q2)
        .collect();
    Ok(profile.grid.l2_norm(Parity::Even, &r))
}

/// L² norm of `Q′² − Q²(A−Q)/(c−Q)` with `Q′` recomputed by differentiation.
pub fn first_integral_residual(profile: &SolitonProfile) -> Result<f64> {
    let c = profile.params.c;
    let a = profile.params.amplitude();
    let (qx, _) = numerical_derivatives(profile)?;
    let r: Vec<f64> = profile
        .q
        .iter()
        .zip(&qx)
        .map(|(&q, &q1)| q1 * q1 - q * q * (a - q) / (c - q))
        .collect();
    Ok(profile.grid.l2_norm(Parity::Even, &r))
}

pub fn q_norm(profile: &SolitonProfile) -> f64 {
    profile.grid.l2_norm(Parity::Even, &profile.q)
}

/// Decay rate fitted to `ln Q` over the middle of the tail, `x ∈ [L/2, 4L/5]`.
pub fn tail_decay_rate(profile: &SolitonProfile) -> f64 {
    let l = profile.grid.half_length();
    let (xs, ys): (Vec<f64>, Vec<f64>) = profile
        .grid
        .nodes()
        .iter()
        .zip(profile.q_positive())
        .filter(|(&x, &q)| x >= 0.5 * l && x <= 0.8 * l && q > 0.0)
        .map(|(&x, &q)| (x, q.ln()))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    -linalg::linear_fit(&xs, &ys).0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolitonSummary {
    pub c: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub crest: f64,
    pub residual: f64,
    pub relative_residual: f64,
    pub first_integral_residual: f64,
    pub relative_first_integral_residual: f64,
    pub tail_decay_rate: f64,
    pub boundary_decay: f64,
}

pub fn summarize(profile: &SolitonProfile) -> Result<SolitonSummary> {
    let qn = q_norm(profile);
    let residual = ode_residual(profile)?;
    let fi = first_integral_residual(profile)?;
    let rel = |v: f64| if qn > 0.0 { v / qn } else { v };
    Ok(SolitonSummary {
        c: profile.params.c,
        kappa: profile.params.kappa,
        alpha: profile.alpha,
        crest: profile.crest(),
        residual,
        relative_residual: rel(residual),
        first_integral_residual: fi,
        relative_first_integral_residual: rel(fi),
        tail_decay_rate: tail_decay_rate(profile),
        boundary_decay: profile.boundary_decay(),
    })
}

pub fn verdicts(summary: &SolitonSummary) -> Vec<Verdict> {
    let amplitude = summary.c - 2.0 * summary.kappa;
    vec![
        Verdict::at_most(
            "soliton.ode_residual",
            "Q solves the travelling-wave equation",
            summary.relative_residual,
            1e-8,
        ),
        Verdict::at_most(
            "soliton.first_integral",
            "Q satisfies the first integral",
            summary.relative_first_integral_residual,
            1e-6,
        ),
        Verdict::at_most(
            "soliton.crest",
            "the crest height is c - 2 kappa",
            (summary.crest - amplitude).abs(),
            1e-8,
        ),
        Verdict::at_most(
            "soliton.tail_decay",
            "Q decays like exp(-sqrt(1 - 2 kappa / c) |x|)",
            (summary.tail_decay_rate / summary.alpha - 1.0).abs(),
            0.02,
        )
        .with_detail(format!("fitted rate {:.16e}", summary.tail_decay_rate)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, NodeFamily};

    fn params() -> SolitonParams {
        SolitonParams::new(3.0, 1.0).unwrap()
    }

    /// Composite Gauss–Legendre quadrature of `dx/dQ` after the substitution
    /// `Q = A(1 − v²)`, which removes the crest singularity.
    fn distance_by_quadrature(p: &SolitonParams, q: f64) -> f64 {
        let a = p.amplitude();
        let vmax = (1.0 - q / a).sqrt();
        let nodes = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
        let wts = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
        let panels = 4000;
        let hv = vmax / panels as f64;
        let mut s = 0.0;
        for i in 0..panels {
            let mid = (i as f64 + 0.5) * hv;
            for (t, w) in nodes.iter().zip(wts) {
                let v = mid + 0.5 * hv * t;
                let qq = a * (1.0 - v * v);
                s += 0.5 * hv * w * 2.0 * a.sqrt() * (p.c - qq).sqrt() / qq;
            }
        }
        s
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let p = params();
        let a = p.amplitude();
        for &q in &[0.9, 0.5, 0.1, 1e-3] {
            let closed = crest_distance(&p, q, ((a - q) / a).sqrt());
            let quad = distance_by_quadrature(&p, q);
            assert!((closed - quad).abs() < 1e-9 * quad.max(1.0), "{q}: {closed} {quad}");
        }
    }

    #[test]
    fn inversion_round_trips() {
        let p = SolitonParams::new(5.0, 0.7).unwrap();
        let a = p.amplitude();
        for &x in &[0.01, 0.5, 2.0, 10.0, 40.0] {
            let q = profile_at(&p, x);
            let back = crest_distance(&p, q, ((a - q) / a).sqrt());
            assert!((back - x).abs() < 1e-12 * x.max(1.0), "{x} -> {q} -> {back}");
        }
        // Near the crest Q ≈ A + Q″(0)x²/2.
        let x = 1e-6;
        let taylor = a + 0.5 * curvature_from_value(&p, a, 0.0) * x * x;
        assert!((profile_at(&p, x) - taylor).abs() < 1e-15);
    }

    #[test]
    fn crest_and_curvature() {
        let p = params();
        let g = build_grid(40.0, 256, NodeFamily::Spectral).unwrap();
        let prof = solve_profile(p, &g).unwrap();
        assert_eq!(prof.crest(), 1.0);
        assert!((prof.qxx[0] + 0.25).abs() < 1e-15);
        assert!((prof.alpha - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn residuals_are_small() {
        let g = build_grid(40.0, 512, NodeFamily::Spectral).unwrap();
        let prof = solve_profile(params(), &g).unwrap();
        let qn = q_norm(&prof);
        assert!(ode_residual(&prof).unwrap() / qn < 1e-8);
        assert!(first_integral_residual(&prof).unwrap() / qn < 1e-6);
    }

    #[test]
    fn default_profile_passes_its_verdicts() {
        let g = build_grid(40.0, 512, NodeFamily::Spectral).unwrap();
        let prof = solve_profile(params(), &g).unwrap();
        for v in verdicts(&summarize(&prof).unwrap()) {
            assert!(v.pass, "{v:?}");
        }
    }

    #[test]
    fn zero_profile_has_zero_residuals() {
        let g = build_grid(10.0, 32, NodeFamily::Spectral).unwrap();
        let prof = SolitonProfile::zero(params(), &g);
        assert_eq!(ode_residual(&prof).unwrap(), 0.0);
        assert_eq!(first_integral_residual(&prof).unwrap(), 0.0);
    }

    #[test]
    fn perturbation_raises_residual_linearly() {
        let g = build_grid(40.0, 512, NodeFamily::Spectral).unwrap();
        let base = solve_profile(params(), &g).unwrap();
        let r0 = ode_residual(&base).unwrap();
        let bumped = |eps: f64| {
            let mut p = base.clone();
            for (q, x) in p.q.iter_mut().zip(g.sample_nodes(Parity::Even)) {
                *q += eps * (-(x - 3.0).powi(2)).exp();
            }
            ode_residual(&p).unwrap() - r0
        };
        let (d1, d2) = (bumped(1e-3), bumped(5e-4));
        assert!(d1 > 1e-5 && d1 < 1e-1, "{d1}");
        assert!((d1 / d2 - 2.0).abs() < 0.05, "{}", d1 / d2);
    }

    #[test]
    fn rejects_invalid_speed_and_coarse_grid() {
        assert!(SolitonParams::new(2.0, 1.0).is_err());
        let g = build_grid(400.0, 8, NodeFamily::Spectral).unwrap();
        assert!(matches!(
            solve_profile(params(), &g),
            Err(LabError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn profile_is_monotone_positive_and_below_barrier() {
        let g = build_grid(40.0, 256, NodeFamily::Spectral).unwrap();
        let p = params();
        let prof = solve_profile(p, &g).unwrap();
        for w in prof.q.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(prof.q.iter().all(|&q| q > 0.0 && p.c - q >= 2.0 * p.kappa - 1e-10));
        assert!(prof.qx.iter().all(|&d| d < 0.0));
    }

    #[test]
    fn tail_rate_matches_alpha() {
        let g = build_grid(40.0, 256, NodeFamily::Spectral).unwrap();
        let prof = solve_profile(params(), &g).unwrap();
        let rate = tail_decay_rate(&prof);
        assert!((rate / prof.alpha - 1.0).abs() < 0.02);
    }
}
