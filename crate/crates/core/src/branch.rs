//! Continuation of the y-periodic branch bifurcating from the line solitary wave.
//!
//! The unknown is `ψ(x, y) = Σ_{m=0}^{N_y} a_m(x) cos(mωy)` with odd `a_m`,
//! and the equation `−Lψ + N(ψ) + ψ_yy = 0` is solved mode by mode, closed
//! by the amplitude condition `⟨a₁, φ_λ⟩ = s`.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{diff_operator, Grid, Parity};
use crate::krylov::{gmres, GmresOptions};
use crate::linalg;
use crate::operators::{apply_dn_mat, apply_n_mat, assemble_l, odd_derivatives, OperatorL};
use crate::probes;
use crate::report::Verdict;
use crate::soliton::{solve_profile, SolitonProfile};
use crate::spectra::{decompose_l, eig_l_odd, LSpectrum};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchConfig {
    pub n_modes: usize,
    pub ds: f64,
    pub s_max: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            n_modes: 8,
            ds: 1e-3,
            s_max: 0.1,
            tol: 1e-10,
            max_iter: 10,
        }
    }
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes < 1 {
            return Err(LabError::Parameter("N_y must be at least 1".into()));
        }
        if !(self.ds > 0.0 && self.s_max > 0.0 && self.tol > 0.0) {
            return Err(LabError::Parameter("ds, s_max and tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(LabError::Parameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Unit-norm negative mode of `L` (sign gauge applied) and `ω₀ = √|λ|`.
pub fn linear_mode(l: &OperatorL) -> Result<(Vec<f64>, f64)> {
    let spec = bifurcation_spectrum(l)?;
    Ok((spec.phi, spec.omega0))
}

fn bifurcation_spectrum(l: &OperatorL) -> Result<LSpectrum> {
    let spec = decompose_l(l)?;
    let report = eig_l_odd(&spec, 1.0);
    if let Some(v) = report.verdicts.iter().find(|v| !v.pass) {
        return Err(LabError::Bifurcation(format!("{}: measured {}", v.name, v.measured)));
    }
    Ok(spec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicSolution {
    /// `a_0 … a_{N_y}` as odd samples.
    pub modes: Vec<Vec<f64>>,
    pub omega: f64,
    pub s: f64,
    pub newton_iters: usize,
    /// Residual in the `H^{-4}` norm used for the convergence test.
    pub final_residual: f64,
    /// Residual in the discrete `L²` norm.
    pub raw_residual: f64,
}

impl PeriodicSolution {
    pub fn mode_norms(&self, grid: &Grid) -> Vec<f64> {
        self.modes.iter().map(|a| grid.l2_norm(Parity::Odd, a)).collect()
    }
}

/// Cosine collocation in `θ = ωy` on `[0, π]`, exact for the quadratic
/// nonlinearity: `K ≥ 3N_y/2 + 1` intervals.
#[derive(Clone, Debug)]
struct YCollocation {
    n_modes: usize,
    /// `(N_y+1) × (K+1)`: `cos(mθ_j)`.
    synth: Mat<f64>,
    /// `(K+1) × (N_y+1)`: `ε_m w_j cos(mθ_j)`.
    analysis: Mat<f64>,
}

impl YCollocation {
    fn new(n_modes: usize) -> Self {
        let k = (3 * n_modes).div_ceil(2).max(2 * n_modes - 1) + 1;
        let theta: Vec<f64> = (0..=k).map(|j| PI * j as f64 / k as f64).collect();
        let synth = Mat::from_fn(n_modes + 1, k + 1, |m, j| (m as f64 * theta[j]).cos());
        let analysis = Mat::from_fn(k + 1, n_modes + 1, |j, m| {
            let w = if j == 0 || j == k { 0.5 } else { 1.0 } / k as f64;
            let eps = if m == 0 { 1.0 } else { 2.0 };
            eps * w * synth[(m, j)]
        });
        YCollocation {
            n_modes,
            synth,
            analysis,
        }
    }
}

/// Mode-wise residual of the periodic problem on one grid.
#[derive(Clone, Debug)]
pub struct ResidualEvaluator {
    pub l: OperatorL,
    yc: YCollocation,
    /// `H⁴` Gram factor, used for the dual norm.
    h4_orth: Mat<f64>,
    h4_scale: Vec<f64>,
}

impl ResidualEvaluator {
    pub fn new(l: &OperatorL, n_modes: usize) -> Result<Self> {
        let f = l.grid.gram_factor(4, Parity::Odd)?;
        Ok(ResidualEvaluator {
            l: l.clone(),
            yc: YCollocation::new(n_modes),
            h4_orth: f.orth,
            h4_scale: f.scale,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.l.grid
    }

    pub fn n_modes(&self) -> usize {
        self.yc.n_modes
    }

    fn dim(&self) -> usize {
        self.l.dim()
    }

    /// Sample-space modes from the stacked weighted unknowns.
    fn modes_of(&self, x: &[f64]) -> Mat<f64> {
        let n = self.dim();
        let sw = self.l.sqrt_weights();
        Mat::from_fn(n, self.yc.n_modes + 1, |i, m| x[m * n + i] / sw[i])
    }

    fn nonlinear_modes(&self, modes: &Mat<f64>) -> Result<Mat<f64>> {
        let stations = modes * &self.yc.synth;
        let nl = apply_n_mat(self.grid(), stations.as_ref())?;
        Ok(nl * &self.yc.analysis)
    }

    /// Stacked weighted residual `[W^{1/2}R_0; …; W^{1/2}R_{N_y}]` without
    /// the amplitude row.
    fn mode_residual(&self, x: &[f64], omega: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        let nm = self.yc.n_modes + 1;
        let modes = self.modes_of(x);
        let nl = self.nonlinear_modes(&modes)?;
        let u = Mat::from_fn(n, nm, |i, m| x[m * n + i]);
        let su = self.l.apply_weighted(u.as_ref());
        let sw = self.l.sqrt_weights();
        let mut out = vec![0.0; n * nm];
        for m in 0..nm {
            let k2 = (m * m) as f64 * omega * omega;
            for i in 0..n {
                out[m * n + i] = -su[(i, m)] - k2 * u[(i, m)] + sw[i] * nl[(i, m)];
            }
        }
        Ok(out)
    }

    /// `‖·‖_{H^{-4}}` of each weighted mode block, combined in ℓ².
    pub fn dual_norm(&self, stacked: &[f64]) -> f64 {
        let n = self.dim();
        let nm = stacked.len() / n;
        let r = Mat::from_fn(n, nm, |i, m| stacked[m * n + i]);
        let z = &self.h4_orth * &r;
        let mut sum = 0.0;
        for m in 0..nm {
            for i in 0..n {
                let v = z[(i, m)] / self.h4_scale[i];
                sum += v * v;
            }
        }
        sum.sqrt()
    }

    /// Residual of a sample-space state: mode residuals `R_m` as samples and
    /// the amplitude defect `⟨a₁, φ⟩ − s`.
    pub fn residual(&self, state: &PeriodicSolution, phi: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
        let grid = self.grid();
        if state.modes.len() != self.yc.n_modes + 1 {
            return Err(LabError::Parameter(format!(
                "expected {} modes, got {}",
                self.yc.n_modes + 1,
                state.modes.len()
            )));
        }
        for a in &state.modes {
            grid.check_len(a, Parity::Odd)?;
        }
        let x = self.stack(state);
        let r = self.mode_residual(&x, state.omega)?;
        let n = self.dim();
        let sw = self.l.sqrt_weights();
        let modes = r
            .chunks(n)
            .map(|c| c.iter().zip(sw).map(|(v, s)| v / s).collect())
            .collect();
        let amp = grid.inner(Parity::Odd, &state.modes[1], phi) - state.s;
        Ok((modes, amp))
    }

    fn stack(&self, state: &PeriodicSolution) -> Vec<f64> {
        let sw = self.l.sqrt_weights();
        let mut x: Vec<f64> = state
            .modes
            .iter()
            .flat_map(|a| a.iter().zip(sw).map(|(v, s)| v * s))
            .collect();
        x.push(state.omega);
        x
    }
}

/// Newton system about the bifurcation data of `L`.
#[derive(Clone, Debug)]
pub struct BranchSystem {
    pub eval: ResidualEvaluator,
    pub spec: LSpectrum,
    /// `W^{1/2} φ_λ`.
    phi_w: Vec<f64>,
}

impl BranchSystem {
    pub fn new(l: &OperatorL, n_modes: usize) -> Result<Self> {
        let spec = bifurcation_spectrum(l)?;
        let eval = ResidualEvaluator::new(l, n_modes)?;
        let phi_w = l.to_weighted(&spec.phi);
        Ok(BranchSystem { eval, spec, phi_w })
    }

    pub fn grid(&self) -> &Grid {
        self.eval.grid()
    }

    pub fn omega0(&self) -> f64 {
        self.spec.omega0
    }

    pub fn phi(&self) -> &[f64] {
        &self.spec.phi
    }

    fn n(&self) -> usize {
        self.eval.dim()
    }

    fn nm(&self) -> usize {
        self.eval.n_modes() + 1
    }

    /// Full stacked residual (weighted mode blocks, then the amplitude row).
    pub fn stacked_residual(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        let n = self.n();
        let omega = x[n * self.nm()];
        let mut r = self.eval.mode_residual(x, omega)?;
        r.push(linalg::dot(&x[n..2 * n], &self.phi_w) - s);
        Ok(r)
    }

    /// `H^{-4}` norm of a stacked residual (amplitude row included as is).
    pub fn residual_norm(&self, r: &[f64]) -> f64 {
        let last = r.len() - 1;
        self.eval.dual_norm(&r[..last]).hypot(r[last])
    }

    fn raw_norm(r: &[f64]) -> f64 {
        linalg::norm2(r)
    }

    /// Jacobian of the stacked residual at `x`, as a closure on directions.
    fn jacobian<'a>(&'a self, x: &'a [f64]) -> Result<impl Fn(&[f64]) -> Vec<f64> + 'a> {
        let n = self.n();
        let nm = self.nm();
        let omega = x[n * nm];
        let grid = self.grid();
        let modes = self.eval.modes_of(x);
        let stations = &modes * &self.eval.yc.synth;
        let derivs = odd_derivatives(grid, stations.as_ref())?;
        let sw = self.eval.l.sqrt_weights().to_vec();
        Ok(move |dx: &[f64]| -> Vec<f64> {
            let dmodes = self.eval.modes_of(dx);
            let dst = &dmodes * &self.eval.yc.synth;
            let dn = apply_dn_mat(grid, &derivs, dst.as_ref()).expect("grid-consistent shapes") * &self.eval.yc.analysis;
            let du = Mat::from_fn(n, nm, |i, m| dx[m * n + i]);
            let sdu = &self.eval.l.sym * &du;
            let domega = dx[n * nm];
            let mut out = vec![0.0; n * nm + 1];
            for m in 0..nm {
                let k2 = (m * m) as f64 * omega * omega;
                let dk2 = 2.0 * (m * m) as f64 * omega * domega;
                for i in 0..n {
                    out[m * n + i] = -sdu[(i, m)] - k2 * du[(i, m)] - dk2 * x[m * n + i] + sw[i] * dn[(i, m)];
                }
            }
            out[n * nm] = linalg::dot(&dx[n..2 * n], &self.phi_w);
            out
        })
    }

    /// Exact inverse of the Jacobian with the nonlinear coupling dropped,
    /// applied in the eigenbasis of `L`; mode 1 is bordered by `ω` and the
    /// amplitude row.
    fn preconditioner<'a>(&'a self, x: &'a [f64]) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
        let n = self.n();
        let nm = self.nm();
        let omega = x[n * nm];
        let u = &self.spec.weighted;
        let nu = &self.spec.values;
        let alpha = linalg::mat_t_vec(u.as_ref(), &x[n..2 * n]);
        move |r: &[f64]| -> Vec<f64> {
            let rm = Mat::from_fn(n, nm, |i, m| r[m * n + i]);
            let xi = u.transpose() * &rm;
            let r_amp = r[n * nm];
            let mut eta = Mat::<f64>::zeros(n, nm);
            let mut domega = 0.0;
            for m in 0..nm {
                let k2 = (m * m) as f64 * omega * omega;
                if m == 1 {
                    let a0 = alpha[0];
                    domega = if a0.abs() > 0.0 {
                        -(xi[(0, 1)] + (nu[0] + k2) * r_amp) / (2.0 * omega * a0)
                    } else {
                        0.0
                    };
                    eta[(0, 1)] = r_amp;
                    for i in 1..n {
                        eta[(i, 1)] = -(xi[(i, 1)] + 2.0 * omega * alpha[i] * domega) / (nu[i] + k2);
                    }
                } else {
                    for i in 0..n {
                        eta[(i, m)] = -xi[(i, m)] / (nu[i] + k2);
                    }
                }
            }
            let back = u * &eta;
            let mut out = vec![0.0; n * nm + 1];
            for m in 0..nm {
                for i in 0..n {
                    out[m * n + i] = back[(i, m)];
                }
            }
            out[n * nm] = domega;
            out
        }
    }

    pub fn to_state(&self, x: &[f64], s: f64) -> PeriodicSolution {
        let n = self.n();
        let modes = self.eval.modes_of(x);
        PeriodicSolution {
            modes: (0..self.nm()).map(|m| modes.col_as_slice(m).to_vec()).collect(),
            omega: x[n * self.nm()],
            s,
            newton_iters: 0,
            final_residual: f64::NAN,
            raw_residual: f64::NAN,
        }
    }

    pub fn to_vector(&self, state: &PeriodicSolution) -> Vec<f64> {
        self.eval.stack(state)
    }

    /// Newton–GMRES on the square system in `(a_0, …, a_{N_y}, ω)`.
    pub fn newton_correct(&self, guess: &PeriodicSolution, tol: f64, max_iter: usize) -> Result<PeriodicSolution> {
        let s = guess.s;
        let mut x = self.to_vector(guess);
        let mut history = Vec::new();
        // Inexact Newton: the preconditioned operator carries rounding of
        // order eps·‖L‖/ν_min, so the linear solves stop well above eps.
        let gm = GmresOptions {
            restart: 40,
            max_iter: 200,
            tol: 1e-7,
        };
        for it in 0..=max_iter {
            let r = self.stacked_residual(&x, s)?;
            let norm = self.residual_norm(&r);
            history.push(norm);
            if !norm.is_finite() {
                break;
            }
            if norm <= tol {
                let mut out = self.to_state(&x, s);
                out.newton_iters = it;
                out.final_residual = norm;
                out.raw_residual = Self::raw_norm(&r);
                return Ok(out);
            }
            if it == max_iter {
                break;
            }
            let step = {
                let jac = self.jacobian(&x)?;
                let prec = self.preconditioner(&x);
                let rhs: Vec<f64> = prec(&r).iter().map(|v| -v).collect();
                gmres(|d| prec(&jac(d)), |v| v.to_vec(), &rhs, &gm)?
            };
            x.iter_mut().zip(&step.x).for_each(|(a, d)| *a += d);
        }
        Err(LabError::NewtonDiverged {
            iterations: history.len().saturating_sub(1),
            history,
        })
    }

    /// Initial predictor `s·φ_λ` in mode 1 with `ω = ω₀`.
    pub fn initial_guess(&self, s: f64) -> PeriodicSolution {
        let n = self.n();
        let mut modes = vec![vec![0.0; n]; self.nm()];
        modes[1] = self.spec.phi.iter().map(|v| s * v).collect();
        PeriodicSolution {
            modes,
            omega: self.spec.omega0,
            s,
            newton_iters: 0,
            final_residual: f64::NAN,
            raw_residual: f64::NAN,
        }
    }

    /// Rescale a converged state to amplitude `s` using the onset scalings
    /// `a₁ ~ s`, `a₀ ~ s²`, `a_m ~ s^m`, `ω − ω₀ ~ s²`.
    pub fn rescaled_guess(&self, from: &PeriodicSolution, s: f64) -> PeriodicSolution {
        let q = s / from.s;
        let modes = from
            .modes
            .iter()
            .enumerate()
            .map(|(m, a)| {
                let p = q.powi(if m == 0 { 2 } else { m as i32 });
                a.iter().map(|v| p * v).collect()
            })
            .collect();
        PeriodicSolution {
            modes,
            omega: self.spec.omega0 + (from.omega - self.spec.omega0) * q * q,
            s,
            newton_iters: 0,
            final_residual: f64::NAN,
            raw_residual: f64::NAN,
        }
    }

    /// Jacobian-vector products against central differences of the
    /// residual, on random smooth directions; worst relative `H^{-4}` error.
    pub fn jacobian_check(&self, state: &PeriodicSolution, trials: usize) -> Result<f64> {
        let x = self.to_vector(state);
        let jac = self.jacobian(&x)?;
        let mut rng = probes::rng(60);
        let grid = self.grid();
        let sw = self.eval.l.sqrt_weights();
        let scale = linalg::norm2(&x[..x.len() - 1]).max(1e-3);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let mut dx = Vec::with_capacity(x.len());
            for _ in 0..self.nm() {
                let h = probes::smooth(grid, Parity::Odd, 2.0 * grid.half_length() / 10.0, &mut rng);
                dx.extend(h.iter().zip(sw).map(|(v, s)| v * s));
            }
            let hn = linalg::norm2(&dx);
            dx.iter_mut().for_each(|v| *v *= scale / hn);
            dx.push(1e-3 * probes::noise(1, &mut rng)[0]);
            let analytic = jac(&dx);
            // The residual is a cubic polynomial in the unknowns whose cubic
            // part is O(δω²), so a large step loses nothing to truncation.
            let eps = 1e-3;
            let plus: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + eps * d).collect();
            let minus: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - eps * d).collect();
            let rp = self.stacked_residual(&plus, state.s)?;
            let rm = self.stacked_residual(&minus, state.s)?;
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let diff: Vec<f64> = fd.iter().zip(&analytic).map(|(a, b)| a - b).collect();
            worst = worst.max(self.residual_norm(&diff) / self.residual_norm(&analytic));
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branch {
    pub omega0: f64,
    pub lambda: f64,
    pub phi_lambda: Vec<f64>,
    pub points: Vec<PeriodicSolution>,
    /// Why continuation stopped before `s_max`, if it did.
    pub truncated: Option<String>,
}

/// Amplitudes `ds, 2ds, …` up to `s_max`; at least one point.
pub fn amplitude_schedule(ds: f64, s_max: f64) -> Vec<f64> {
    let count = ((s_max / ds) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    (1..=count).map(|k| k as f64 * ds).collect()
}

pub fn continue_branch(sys: &BranchSystem, cfg: &BranchConfig) -> Result<Branch> {
    cfg.validate()?;
    let mut points: Vec<PeriodicSolution> = Vec::new();
    let mut truncated = None;
    for s in amplitude_schedule(cfg.ds, cfg.s_max) {
        let guess = match points.len() {
            0 => sys.initial_guess(s),
            1 => sys.rescaled_guess(&points[0], s),
            k => {
                // Secant through the last two points.
                let (p, q) = (&points[k - 2], &points[k - 1]);
                let t = (s - q.s) / (q.s - p.s);
                let xp = sys.to_vector(p);
                let xq = sys.to_vector(q);
                let x: Vec<f64> = xq.iter().zip(&xp).map(|(b, a)| b + t * (b - a)).collect();
                sys.to_state(&x, s)
            }
        };
        match sys.newton_correct(&guess, cfg.tol, cfg.max_iter) {
            Ok(p) => points.push(p),
            Err(e) => {
                truncated = Some(format!("s = {s:e}: {e}"));
                break;
            }
        }
    }
    Ok(Branch {
        omega0: sys.omega0(),
        lambda: sys.spec.lambda,
        phi_lambda: sys.spec.phi.clone(),
        points,
        truncated,
    })
}

/// Residual of a converged state on the grid with `2n` points per half
/// period and `2N_y` modes in `y`, in the same `H^{-4}` norm.
pub fn refined_residual(profile: &SolitonProfile, state: &PeriodicSolution, phi: &[f64]) -> Result<f64> {
    let coarse = &profile.grid;
    let fine = coarse.refined(2)?;
    let fine_profile = solve_profile(profile.params, &fine)?;
    let l = assemble_l(&fine_profile, &fine)?;
    let n_modes = 2 * (state.modes.len() - 1);
    let eval = ResidualEvaluator::new(&l, n_modes)?;
    let targets = fine.sample_nodes(Parity::Odd);
    let interp = coarse.interpolation_matrix(Parity::Odd, &targets);
    let mut modes: Vec<Vec<f64>> = state
        .modes
        .iter()
        .map(|a| linalg::mat_vec(interp.as_ref(), a))
        .collect();
    modes.resize(n_modes + 1, vec![0.0; targets.len()]);
    let fine_phi = linalg::mat_vec(interp.as_ref(), phi);
    let fine_state = PeriodicSolution {
        modes,
        ..state.clone()
    };
    let (r, amp) = eval.residual(&fine_state, &fine_phi)?;
    let sw = l.sqrt_weights();
    let stacked: Vec<f64> = r.iter().flat_map(|m| m.iter().zip(sw).map(|(v, s)| v * s)).collect();
    Ok(eval.dual_norm(&stacked).hypot(amp))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldRow {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// `ψ_x`.
    pub phi: f64,
    /// `ψ_x + Q`.
    pub v: f64,
}

/// `ψ`, `φ = ψ_x` and `v = φ + Q` on the full line (every `x_stride`-th
/// node) times `y_samples` stations over one period `2π/ω`, endpoints
/// included.
pub fn reconstruct(
    state: &PeriodicSolution,
    profile: &SolitonProfile,
    y_samples: usize,
    x_stride: usize,
) -> Result<Vec<FieldRow>> {
    let grid = &profile.grid;
    let y_samples = y_samples.max(2);
    let x_stride = x_stride.max(1);
    let d1 = diff_operator(grid, 1, Parity::Odd)?;
    let dmodes: Vec<Vec<f64>> = state.modes.iter().map(|a| d1.apply(a)).collect::<Result<_>>()?;
    let nodes = grid.sample_nodes(Parity::Even);
    let n = grid.n();
    // Full-line index: k ∈ [−n, n], node x_{|k|}.
    let ks: Vec<i64> = (-(n as i64)..=n as i64).filter(|k| k.rem_euclid(x_stride as i64) == 0).collect();
    let period = 2.0 * PI / state.omega;
    let mut rows = Vec::with_capacity(ks.len() * y_samples);
    for j in 0..y_samples {
        let frac = j as f64 / (y_samples - 1) as f64;
        // The closing station is the same point of the circle as the first.
        let theta = 2.0 * PI * if j + 1 == y_samples { 0.0 } else { frac };
        let cosines: Vec<f64> = (0..state.modes.len()).map(|m| (m as f64 * theta).cos()).collect();
        for &k in &ks {
            let a = k.unsigned_abs() as usize;
            let sign = k.signum() as f64;
            let psi = if a == 0 {
                0.0
            } else {
                sign * state.modes.iter().zip(&cosines).map(|(m, c)| c * m[a - 1]).sum::<f64>()
            };
            let phi: f64 = dmodes.iter().zip(&cosines).map(|(m, c)| c * m[a]).sum();
            rows.push(FieldRow {
                x: sign * nodes[a],
                y: frac * period,
                psi,
                phi,
                v: phi + profile.q[a],
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchDiagnostics {
    /// `|ω(ds) − ω₀| / ds`.
    pub omega_rate: f64,
    /// `(s, s/2, ratio)` of `‖a₀‖ + ‖a₂‖`.
    pub harmonic_ratio: Option<(f64, f64, f64)>,
    /// Geometric decay rate of `‖a_m‖` over `m = 1..N_y` at the last point.
    pub mode_decay: f64,
    /// `‖ψ − sφ_λcos(ωy)‖ / s²` at the last point and at `s/2`, `s/4` where available.
    pub shape_ratios: Vec<(f64, f64)>,
    pub refined_residual: f64,
    pub jacobian_error: f64,
    /// `‖a₀ − L⁻¹[N(ψ)]₀‖` at the last point.
    pub m0_solvability: f64,
    pub verdicts: Vec<Verdict>,
}

/// Mean-square-in-`y` norm of `ψ − sφ cos(ωy)`.
fn shape_defect(grid: &Grid, p: &PeriodicSolution, phi: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (m, a) in p.modes.iter().enumerate() {
        let d: Vec<f64> = if m == 1 {
            a.iter().zip(phi).map(|(x, f)| x - p.s * f).collect()
        } else {
            a.clone()
        };
        let w = if m == 0 { 1.0 } else { 0.5 };
        sum += w * grid.l2_norm(Parity::Odd, &d).powi(2);
    }
    sum.sqrt()
}

pub fn diagnose(sys: &BranchSystem, profile: &SolitonProfile, branch: &Branch, cfg: &BranchConfig) -> Result<BranchDiagnostics> {
    let grid = sys.grid();
    let pts = &branch.points;
    let mut verdicts = Vec::new();
    let expected = amplitude_schedule(cfg.ds, cfg.s_max).len();
    let worst_iters = pts.iter().map(|p| p.newton_iters).max().unwrap_or(usize::MAX);
    let worst_res = pts.iter().map(|p| p.final_residual).fold(0.0f64, f64::max);
    verdicts.push(
        Verdict::equals(
            "branch.complete",
            "the branch continues from ds to s_max",
            pts.len() as f64,
            expected as f64,
        )
        .with_detail(branch.truncated.clone().unwrap_or_else(|| "no truncation".into())),
    );
    verdicts.push(Verdict::at_most(
        "branch.newton_iterations",
        "every branch point converges within max_iter Newton steps",
        worst_iters as f64,
        cfg.max_iter as f64,
    ));
    verdicts.push(Verdict::at_most(
        "branch.residual",
        "every branch point satisfies the equation to tol",
        if pts.is_empty() { f64::INFINITY } else { worst_res },
        cfg.tol,
    ));
    let first = pts.first().ok_or_else(|| LabError::Bifurcation("no converged branch point".into()))?;
    let last = pts.last().unwrap();
    let omega_gap = (first.omega - branch.omega0).abs();
    verdicts.push(
        Verdict::at_most(
            "branch.onset_frequency",
            "omega(0) = sqrt|lambda|",
            omega_gap,
            1e-4,
        )
        .with_detail(format!("s = {:e}", first.s)),
    );

    let harm = |p: &PeriodicSolution| {
        grid.l2_norm(Parity::Odd, &p.modes[0]) + p.modes.get(2).map(|a| grid.l2_norm(Parity::Odd, a)).unwrap_or(0.0)
    };
    let find = |s: f64| pts.iter().find(|p| (p.s - s).abs() <= 1e-9 * s);
    let mut harmonic_ratio = None;
    for p in pts.iter().rev() {
        if let Some(h) = find(0.5 * p.s) {
            harmonic_ratio = Some((p.s, h.s, harm(p) / harm(h)));
            break;
        }
    }
    let hr = harmonic_ratio.map(|t| t.2).unwrap_or(f64::NAN);
    verdicts.push(
        Verdict::within(
            "branch.harmonic_scaling",
            "the harmonics a0 and a2 are quadratic in s",
            hr,
            3.5,
            4.5,
        )
        .with_detail(format!("{harmonic_ratio:?}")),
    );

    let norms = last.mode_norms(grid);
    let ms: Vec<f64> = (1..norms.len()).map(|m| m as f64).collect();
    let logs: Vec<f64> = norms[1..].iter().map(|v| v.max(1e-300).ln()).collect();
    let mode_decay = if ms.len() >= 2 {
        linalg::linear_fit(&ms, &logs).0.exp()
    } else {
        f64::NAN
    };

    let mut shape_ratios = Vec::new();
    for q in [1.0, 0.5, 0.25] {
        if let Some(p) = find(q * last.s) {
            shape_ratios.push((p.s, shape_defect(grid, p, &branch.phi_lambda) / (p.s * p.s)));
        }
    }

    let refined = refined_residual(profile, last, &branch.phi_lambda)?;
    verdicts.push(
        Verdict::at_most(
            "branch.refined_grid",
            "the solution persists on the refined grid (2n in x, 2N_y in y)",
            refined,
            10.0 * cfg.tol,
        )
        .with_detail(format!("s = {:e}", last.s)),
    );
    let jacobian_error = sys.jacobian_check(last, 3)?;
    verdicts.push(Verdict::at_most(
        "branch.jacobian",
        "the analytic linearization matches finite differences",
        jacobian_error,
        1e-6,
    ));

    // Mode 0 is slaved: a₀ − L⁻¹[N(ψ)]₀ = −L⁻¹R₀.
    let (r, _) = sys.eval.residual(last, &branch.phi_lambda)?;
    let m0 = sys.eval.l.to_weighted(&r[0]);
    let xi = linalg::mat_t_vec(sys.spec.weighted.as_ref(), &m0);
    let m0 = xi.iter().zip(&sys.spec.values).map(|(x, v)| (x / v).powi(2)).sum::<f64>().sqrt();

    Ok(BranchDiagnostics {
        omega_rate: omega_gap / first.s,
        harmonic_ratio,
        mode_decay,
        shape_ratios,
        refined_residual: refined,
        jacobian_error,
        m0_solvability: m0,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, NodeFamily};
    use crate::soliton::SolitonParams;

    fn setup(n: usize, half_length: f64, n_modes: usize) -> (SolitonProfile, BranchSystem) {
        let g = build_grid(half_length, n, NodeFamily::Spectral).unwrap();
        let p = solve_profile(SolitonParams::new(3.0, 1.0).unwrap(), &g).unwrap();
        let l = assemble_l(&p, &g).unwrap();
        let sys = BranchSystem::new(&l, n_modes).unwrap();
        (p, sys)
    }

    #[test]
    fn linear_mode_is_a_unit_eigenpair() {
        let (p, sys) = setup(96, 24.0, 4);
        let (phi, omega0) = linear_mode(&sys.eval.l).unwrap();
        let lphi = sys.eval.l.apply(&phi).unwrap();
        let r: Vec<f64> = lphi.iter().zip(&phi).map(|(a, b)| a + omega0 * omega0 * b).collect();
        assert!(p.grid.l2_norm(Parity::Odd, &r) < 1e-8);
        assert!((p.grid.l2_norm(Parity::Odd, &phi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collocation_projects_products_exactly() {
        let n_modes = 5;
        let yc = YCollocation::new(n_modes);
        // cos θ · cos 2θ = (cos θ + cos 3θ)/2, squared terms up to degree 2N_y.
        let a = [0.3, 1.0, -0.4, 0.2, 0.1, -0.05];
        let stations: Vec<f64> = (0..yc.synth.ncols())
            .map(|j| (0..=n_modes).map(|m| a[m] * yc.synth[(m, j)]).sum::<f64>())
            .collect();
        let sq: Vec<f64> = stations.iter().map(|v| v * v).collect();
        let got: Vec<f64> = (0..=n_modes)
            .map(|m| (0..sq.len()).map(|j| yc.analysis[(j, m)] * sq[j]).sum())
            .collect();
        // Exact cosine coefficients of (Σ a_m cos mθ)².
        let mut exact = vec![0.0; 2 * n_modes + 1];
        for p in 0..=n_modes {
            for q in 0..=n_modes {
                let half = 0.5 * a[p] * a[q];
                exact[p + q] += half;
                exact[p.abs_diff(q)] += half;
            }
        }
        for m in 0..=n_modes {
            assert!((got[m] - exact[m]).abs() < 1e-14, "mode {m}: {} vs {}", got[m], exact[m]);
        }
    }

    #[test]
    fn zero_state_has_zero_mode_residuals() {
        let (_, sys) = setup(64, 18.0, 3);
        let mut state = sys.initial_guess(0.25);
        state.modes.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v = 0.0));
        state.omega = 0.7;
        let (r, amp) = sys.eval.residual(&state, sys.phi()).unwrap();
        assert!(r.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(amp, -0.25);
    }

    #[test]
    fn linear_ansatz_residual_is_quadratic() {
        let (_, sys) = setup(96, 24.0, 4);
        let norms: Vec<(f64, f64)> = [1e-3, 5e-4]
            .iter()
            .map(|&eps| {
                let state = sys.initial_guess(eps);
                let x = sys.to_vector(&state);
                let r = sys.stacked_residual(&x, eps).unwrap();
                let n = sys.n();
                (sys.residual_norm(&r), linalg::norm2(&r[n..2 * n]))
            })
            .collect();
        let ratio = norms[0].0 / norms[1].0;
        assert!((ratio - 4.0).abs() < 1e-3, "{ratio}");
        // Mode 1 sees neither the linear part (eigenpair) nor N (only modes 0, 2).
        assert!(norms[0].1 < 1e-10 * norms[0].0.max(1.0));
    }

    #[test]
    fn newton_converges_from_the_predictor() {
        let (p, sys) = setup(128, 30.0, 6);
        let sol = sys.newton_correct(&sys.initial_guess(1e-3), 1e-10, 5).unwrap();
        assert!(sol.newton_iters <= 5);
        assert!(sol.final_residual <= 1e-10);
        assert!((sol.omega - sys.omega0()).abs() < 1e-4);
        assert!((p.grid.inner(Parity::Odd, &sol.modes[1], sys.phi()) - 1e-3).abs() < 1e-12);
        assert!(sys.jacobian_check(&sol, 2).unwrap() < 1e-6);
    }

    #[test]
    fn newton_reports_history_on_failure() {
        let (_, sys) = setup(64, 18.0, 3);
        let mut guess = sys.initial_guess(0.05);
        guess.omega = 3.0;
        match sys.newton_correct(&guess, 1e-14, 1) {
            Err(LabError::NewtonDiverged { iterations, history }) => {
                assert_eq!(iterations, 1);
                assert_eq!(history.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flipping_the_gauge_maps_s_to_minus_s() {
        let (_, sys) = setup(96, 24.0, 4);
        let mut flipped = sys.clone();
        flipped.spec.phi.iter_mut().for_each(|v| *v = -*v);
        flipped.phi_w.iter_mut().for_each(|v| *v = -*v);
        let s = 0.02;
        let a = sys.newton_correct(&sys.initial_guess(s), 1e-11, 8).unwrap();
        let b = flipped.newton_correct(&flipped.initial_guess(s), 1e-11, 8).unwrap();
        assert!((a.omega - b.omega).abs() < 1e-12);
        for (m, (x, y)) in a.modes.iter().zip(&b.modes).enumerate() {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let err = x.iter().zip(y).map(|(u, v)| (u - sign * v).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "mode {m}: {err}");
        }
    }

    #[test]
    fn short_branch_is_ordered_and_mode_zero_is_slaved() {
        let (p, sys) = setup(128, 30.0, 6);
        let cfg = BranchConfig {
            n_modes: 6,
            ds: 2e-3,
            s_max: 8e-3,
            ..Default::default()
        };
        let branch = continue_branch(&sys, &cfg).unwrap();
        assert!(branch.truncated.is_none());
        assert_eq!(branch.points.len(), 4);
        assert!(branch.points.windows(2).all(|w| w[1].s > w[0].s));
        let d = diagnose(&sys, &p, &branch, &cfg).unwrap();
        for v in &d.verdicts {
            assert!(v.pass, "{v:?}");
        }
        assert!(d.m0_solvability < 1e-8);
        assert!(d.mode_decay < 1.0);
        let (lo, hi) = d
            .shape_ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.1), hi.max(r.1)));
        assert!(hi / lo < 2.0);
    }

    #[test]
    fn single_point_when_s_max_below_ds() {
        assert_eq!(amplitude_schedule(1e-3, 5e-4), vec![1e-3]);
        assert_eq!(amplitude_schedule(1e-3, 3e-3).len(), 3);
        assert_eq!(amplitude_schedule(0.1, 0.3).len(), 3);
    }

    #[test]
    fn reconstruction_is_periodic_odd_and_near_the_soliton() {
        let (p, sys) = setup(64, 18.0, 3);
        let sol = sys.newton_correct(&sys.initial_guess(1e-3), 1e-10, 6).unwrap();
        let ny = 9;
        let rows = reconstruct(&sol, &p, ny, 1).unwrap();
        let nx = 2 * p.grid.n() + 1;
        assert_eq!(rows.len(), nx * ny);
        for i in 0..nx {
            let first = &rows[i];
            let last = &rows[(ny - 1) * nx + i];
            assert_eq!(first.psi, last.psi);
            let mirror = &rows[nx - 1 - i];
            assert_eq!(first.psi, -mirror.psi);
            assert_eq!(first.v, mirror.v);
        }
        // Reversibility in y: θ ↦ 2π − θ.
        for j in 0..ny {
            for i in 0..nx {
                let a = &rows[j * nx + i];
                let b = &rows[(ny - 1 - j) * nx + i];
                assert!((a.psi - b.psi).abs() < 1e-15);
            }
        }
        let sup = rows
            .iter()
            .map(|r| (r.v - profile_q(&p, r.x)).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 1e-2 * 1.0, "{sup}");
    }

    fn profile_q(p: &SolitonProfile, x: f64) -> f64 {
        crate::soliton::profile_at(&p.params, x.abs())
    }
}
