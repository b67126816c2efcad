use chkp_core::branch::{continue_branch, diagnose, reconstruct, Branch, BranchDiagnostics, BranchSystem};
use chkp_core::grid::{build_grid, Grid, Parity, MIN_NODES};
use chkp_core::operators::{
    assemble_blocks, assemble_k, assemble_l, assemble_l_from_m, assemble_m, build_liouville, BlockOperator,
};
use chkp_core::report::{all_pass, Verdict};
use chkp_core::soliton::{self, solve_profile, SolitonParams, SolitonProfile, SolitonSummary};
use chkp_core::spectra::{
    auxiliary_estimates, block_inverse_check, conjugacy_check, decompose_l, domain_truncation, eig_blocks, eig_k,
    eig_l_odd, eig_m, m_refinement, resolvent_divergence, resolvent_profile, reversibility_check,
    solvability_check, Counts, LSpectrum, RefinementRow, SpectrumReport,
};
use chkp_core::LabError;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{at_stage, CliError};
use crate::output::{fmt_f64, Outputs};

fn failures(verdicts: &[Verdict]) -> Vec<String> {
    verdicts.iter().filter(|v| !v.pass).map(|v| v.name.clone()).collect()
}

fn verdict_result(verdicts: &[Verdict]) -> Result<(), CliError> {
    if all_pass(verdicts) {
        Ok(())
    } else {
        Err(CliError::Verdict(failures(verdicts)))
    }
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        println!(
            "{} {:<36} {:>24} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            fmt_f64(v.measured),
            v.tolerance
        );
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<(Grid, SolitonProfile), CliError> {
    cfg.validate()?;
    let params = at_stage("config", SolitonParams::new(cfg.c, cfg.kappa))?;
    let grid = at_stage("grid", build_grid(cfg.l_dom, cfg.n, cfg.family))?;
    let profile = at_stage("soliton", solve_profile(params, &grid))?;
    Ok((grid, profile))
}

#[derive(Serialize)]
struct SolitonFile<'a> {
    summary: &'a SolitonSummary,
    verdicts: &'a [Verdict],
}

pub fn soliton_stage(profile: &SolitonProfile, out: &mut Outputs) -> Result<Vec<Verdict>, CliError> {
    let summary = at_stage("soliton", soliton::summarize(profile))?;
    let verdicts = soliton::verdicts(&summary);
    let qx = profile.qx_with_origin();
    let nodes = profile.grid.sample_nodes(Parity::Even);
    out.csv(
        "soliton_profile.csv",
        &["x", "q", "qx", "qxx"],
        (0..nodes.len()).map(|i| {
            vec![
                fmt_f64(nodes[i]),
                fmt_f64(profile.q[i]),
                fmt_f64(qx[i]),
                fmt_f64(profile.qxx[i]),
            ]
        }),
    )?;
    out.json(
        "soliton.json",
        &SolitonFile {
            summary: &summary,
            verdicts: &verdicts,
        },
    )?;
    println!(
        "soliton: crest {} relative residual {} first integral {} tail rate {}",
        fmt_f64(summary.crest),
        fmt_f64(summary.relative_residual),
        fmt_f64(summary.relative_first_integral_residual),
        fmt_f64(summary.tail_decay_rate)
    );
    Ok(verdicts)
}

pub fn cmd_soliton(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, profile) = prepare(cfg)?;
    let mut out = Outputs::create(&cfg.output_dir)?;
    let verdicts = soliton_stage(&profile, &mut out)?;
    out.manifest("soliton", cfg)?;
    print_verdicts(&verdicts);
    verdict_result(&verdicts)
}

#[derive(Serialize)]
struct SpectrumSummary<'a> {
    operator: &'a str,
    counts: Counts,
    near_zero_tol: f64,
    band_edge: Option<f64>,
    lowest: &'a [f64],
    metrics: &'a std::collections::BTreeMap<String, f64>,
    verdicts: &'a [Verdict],
}

impl<'a> SpectrumSummary<'a> {
    fn of(r: &'a SpectrumReport) -> Self {
        SpectrumSummary {
            operator: &r.operator,
            counts: r.counts,
            near_zero_tol: r.near_zero_tol,
            band_edge: r.band_edge,
            lowest: &r.eigenvalues[..r.eigenvalues.len().min(8)],
            metrics: &r.metrics,
            verdicts: &r.verdicts,
        }
    }
}

fn spectrum_csv(out: &mut Outputs, name: &str, r: &SpectrumReport) -> Result<(), CliError> {
    out.csv(
        name,
        &["index", "eigenvalue", "parity"],
        r.eigenvalues.iter().zip(&r.parities).enumerate().map(|(i, (v, p))| {
            vec![
                i.to_string(),
                fmt_f64(*v),
                match p {
                    Parity::Even => "even".into(),
                    Parity::Odd => "odd".into(),
                },
            ]
        }),
    )
}

/// Odd samples with the structural zero at the origin prepended.
fn with_origin(values: &[f64], parity: Parity) -> Vec<f64> {
    match parity {
        Parity::Even => values.to_vec(),
        Parity::Odd => std::iter::once(0.0).chain(values.iter().copied()).collect(),
    }
}

pub struct SpectralData {
    pub block: BlockOperator,
    pub lspec: LSpectrum,
    pub verdicts: Vec<Verdict>,
}

#[derive(Serialize)]
struct SpectrumFile<'a> {
    reports: Vec<SpectrumSummary<'a>>,
    conjugacy: &'a Verdict,
    solvability: &'a Verdict,
    block_imaginary_part: f64,
    block_brute_force_mismatch: Option<f64>,
    block_brute_force_pair_gap: Option<f64>,
    block_verdicts: &'a [Verdict],
    reversibility: &'a [Verdict],
}

pub fn spectrum_stage(cfg: &RunConfig, grid: &Grid, profile: &SolitonProfile, out: &mut Outputs) -> Result<SpectralData, CliError> {
    let params = profile.params;
    let m_even = at_stage("assemble_M", assemble_m(profile, grid, Parity::Even))?;
    let m_odd = at_stage("assemble_M", assemble_m(profile, grid, Parity::Odd))?;
    let mrep = at_stage("eig_M", eig_m(&m_even, &m_odd, profile))?;

    let map = build_liouville(profile);
    let z_grid = at_stage("assemble_K", map.z_grid(cfg.n))?;
    let k = at_stage("assemble_K", assemble_k(profile, &map, &z_grid))?;
    let krep = at_stage("eig_K", eig_k(&k, params.amplitude(), params.c, Some(&mrep)))?;
    let conjugacy = at_stage("conjugacy", conjugacy_check(&m_even, &k, &map, 5))?;

    let l = at_stage("assemble_L", assemble_l_from_m(&m_even))?;
    let lspec = at_stage("eig_L", decompose_l(&l))?;
    let lrep = eig_l_odd(&lspec, params.c);
    let solvability = at_stage("solvability", solvability_check(&l, profile, cfg.solvability_probes))?;

    let block = assemble_blocks(&l);
    let brep = at_stage("eig_blocks", eig_blocks(&block, &lspec, cfg.brute_force))?;
    let reversibility = at_stage("reversibility", reversibility_check(&block, cfg.reversibility_states))?;

    spectrum_csv(out, "spectrum_M.csv", &mrep)?;
    spectrum_csv(out, "spectrum_K.csv", &krep)?;
    spectrum_csv(out, "spectrum_L.csv", &lrep)?;
    out.csv(
        "spectrum_blocks.csv",
        &["re", "im"],
        brep.mapped.iter().map(|[re, im]| vec![fmt_f64(*re), fmt_f64(*im)]),
    )?;
    let nodes = grid.sample_nodes(Parity::Even);
    let columns: Vec<(String, Vec<f64>)> = mrep
        .selected
        .iter()
        .chain(&lrep.selected)
        .map(|s| (s.label.clone(), with_origin(&s.values, s.parity)))
        .collect();
    let mut header = vec!["x"];
    header.extend(columns.iter().map(|c| c.0.as_str()));
    out.csv(
        "modes.csv",
        &header,
        (0..nodes.len()).map(|i| {
            std::iter::once(fmt_f64(nodes[i]))
                .chain(columns.iter().map(|c| fmt_f64(c.1[i])))
                .collect()
        }),
    )?;
    out.json(
        "spectrum.json",
        &SpectrumFile {
            reports: vec![
                SpectrumSummary::of(&mrep),
                SpectrumSummary::of(&krep),
                SpectrumSummary::of(&lrep),
            ],
            conjugacy: &conjugacy,
            solvability: &solvability,
            block_imaginary_part: brep.imaginary_part,
            block_brute_force_mismatch: brep.brute_force_mismatch,
            block_brute_force_pair_gap: brep.brute_force_pair_gap,
            block_verdicts: &brep.verdicts,
            reversibility: &reversibility,
        },
    )?;
    println!(
        "spectrum: lambda0(M) {} lambda(L) {} omega0 {}",
        fmt_f64(mrep.eigenvalues[0]),
        fmt_f64(lspec.lambda),
        fmt_f64(lspec.omega0)
    );

    let mut verdicts = Vec::new();
    verdicts.extend(mrep.verdicts.iter().cloned());
    verdicts.extend(krep.verdicts.iter().cloned());
    verdicts.push(conjugacy);
    verdicts.extend(lrep.verdicts.iter().cloned());
    verdicts.push(solvability);
    verdicts.extend(brep.verdicts.iter().cloned());
    verdicts.extend(reversibility);
    Ok(SpectralData { block, lspec, verdicts })
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let (grid, profile) = prepare(cfg)?;
    let mut out = Outputs::create(&cfg.output_dir)?;
    let data = spectrum_stage(cfg, &grid, &profile, &mut out)?;
    out.manifest("spectrum", cfg)?;
    print_verdicts(&data.verdicts);
    verdict_result(&data.verdicts)
}

#[derive(Serialize)]
struct ResolventFile<'a> {
    omega0: f64,
    slope_xx: f64,
    ratio_xy: f64,
    auxiliary_slopes: [f64; 3],
    spectral_identity_error: f64,
    verdicts: &'a [Verdict],
}

pub fn resolvent_stage(cfg: &RunConfig, block: &BlockOperator, lspec: &LSpectrum, out: &mut Outputs) -> Result<Vec<Verdict>, CliError> {
    let profile = at_stage("resolvent", resolvent_profile(lspec, &cfg.n_range))?;
    let aux = at_stage("auxiliary", auxiliary_estimates(lspec, &cfg.n_range))?;
    let (div_rows, div) = at_stage("divergence", resolvent_divergence(lspec))?;
    let lo = *cfg.n_range.iter().min_by_key(|k| k.abs()).unwrap();
    let hi = *cfg.n_range.iter().max_by_key(|k| k.abs()).unwrap();
    let inverse = at_stage("block_inverse", block_inverse_check(block, lspec, &[lo, hi]))?;

    let mut verdicts = profile.verdicts.clone();
    verdicts.extend(aux.verdicts.iter().cloned());
    verdicts.push(div);
    verdicts.push(inverse);

    out.csv(
        "resolvent.csv",
        &["n", "norm_xx", "norm_xy"],
        profile
            .rows
            .iter()
            .map(|r| vec![r.n.to_string(), fmt_f64(r.norm_xx), fmt_f64(r.norm_xy)]),
    )?;
    out.csv(
        "auxiliary.csv",
        &["n", "l2_l2", "l2_h2", "h2_h4"],
        aux.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.l2_l2),
                fmt_f64(r.l2_h2),
                fmt_f64(r.h2_h4),
            ]
        }),
    )?;
    out.csv(
        "divergence.csv",
        &["omega", "offset", "norm_xx"],
        div_rows
            .iter()
            .map(|r| vec![fmt_f64(r.omega), fmt_f64(r.offset), fmt_f64(r.norm_xx)]),
    )?;
    out.json(
        "resolvent.json",
        &ResolventFile {
            omega0: profile.omega0,
            slope_xx: profile.slope_xx,
            ratio_xy: profile.ratio_xy,
            auxiliary_slopes: [aux.slope_l2_l2, aux.slope_l2_h2, aux.slope_h2_h4],
            spectral_identity_error: aux.spectral_identity_error,
            verdicts: &verdicts,
        },
    )?;
    println!(
        "resolvent: X->X slope {} X->Y max/min {}",
        fmt_f64(profile.slope_xx),
        fmt_f64(profile.ratio_xy)
    );
    Ok(verdicts)
}

pub fn cmd_resolvent(cfg: &RunConfig) -> Result<(), CliError> {
    let (grid, profile) = prepare(cfg)?;
    let mut out = Outputs::create(&cfg.output_dir)?;
    let l = at_stage("assemble_L", assemble_l(&profile, &grid))?;
    let lspec = at_stage("eig_L", decompose_l(&l))?;
    let block = assemble_blocks(&l);
    let verdicts = resolvent_stage(cfg, &block, &lspec, &mut out)?;
    out.manifest("resolvent", cfg)?;
    print_verdicts(&verdicts);
    verdict_result(&verdicts)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub failed: Vec<String>,
    pub config: RunConfig,
    pub refinement: Vec<RefinementRow>,
    pub verdicts: Vec<Verdict>,
}

/// Every check of the line soliton and its linearization, in one report.
pub fn run_verify(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let (grid, profile) = prepare(cfg)?;
    let mut out = Outputs::create(&cfg.output_dir)?;
    let mut verdicts = soliton_stage(&profile, &mut out)?;
    verdicts.push(domain_truncation(&profile));
    let spectral = spectrum_stage(cfg, &grid, &profile, &mut out)?;
    verdicts.extend(spectral.verdicts);
    let sizes = [(cfg.n / 2).max(MIN_NODES), cfg.n, 2 * cfg.n];
    let (refinement, stability) = at_stage(
        "refinement",
        m_refinement(profile.params, cfg.l_dom, cfg.family, &sizes),
    )?;
    verdicts.extend(stability);
    verdicts.extend(resolvent_stage(cfg, &spectral.block, &spectral.lspec, &mut out)?);
    let report = VerifyReport {
        passed: all_pass(&verdicts),
        failed: failures(&verdicts),
        config: cfg.clone(),
        refinement,
        verdicts,
    };
    out.json("verify_report.json", &report)?;
    out.manifest("verify", cfg)?;
    Ok(report)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(), CliError> {
    let report = run_verify(cfg)?;
    print_verdicts(&report.verdicts);
    verdict_result(&report.verdicts)
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchReport {
    pub omega0: f64,
    pub lambda: f64,
    pub points: usize,
    pub truncated: Option<String>,
    pub diagnostics: Option<BranchDiagnostics>,
    pub diagnostics_error: Option<String>,
}

pub struct BranchRun {
    pub branch: Branch,
    pub report: BranchReport,
}

pub fn run_branch(cfg: &RunConfig) -> Result<BranchRun, CliError> {
    let (grid, profile) = prepare(cfg)?;
    let bcfg = cfg.branch();
    at_stage("config", bcfg.validate())?;
    let mut out = Outputs::create(&cfg.output_dir)?;
    let l = at_stage("assemble_L", assemble_l(&profile, &grid))?;
    let sys = at_stage("bifurcation", BranchSystem::new(&l, cfg.n_y))?;
    let branch = at_stage("continuation", continue_branch(&sys, &bcfg))?;

    let mut header: Vec<String> = ["s", "omega", "omega_shift", "residual", "raw_residual", "newton_iters"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..=cfg.n_y).map(|m| format!("norm_a{m}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(
        "branch.csv",
        &header,
        branch.points.iter().map(|p| {
            let mut row = vec![
                fmt_f64(p.s),
                fmt_f64(p.omega),
                fmt_f64(p.omega - branch.omega0),
                fmt_f64(p.final_residual),
                fmt_f64(p.raw_residual),
                p.newton_iters.to_string(),
            ];
            row.extend(p.mode_norms(&grid).into_iter().map(fmt_f64));
            row
        }),
    )?;
    let count = branch.points.len();
    for (i, p) in branch.points.iter().enumerate() {
        if i != 0 && (i + 1) % cfg.field_every != 0 && i + 1 != count {
            continue;
        }
        let rows = at_stage("fields", reconstruct(p, &profile, cfg.y_samples, cfg.x_stride))?;
        out.csv(
            &format!("fields/point_{:04}.csv", i + 1),
            &["x", "y", "psi", "phi", "v"],
            rows.iter()
                .map(|r| vec![fmt_f64(r.x), fmt_f64(r.y), fmt_f64(r.psi), fmt_f64(r.phi), fmt_f64(r.v)]),
        )?;
    }

    let (diagnostics, diagnostics_error) = if count == 0 {
        (None, None)
    } else {
        match diagnose(&sys, &profile, &branch, &bcfg) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let report = BranchReport {
        omega0: branch.omega0,
        lambda: branch.lambda,
        points: count,
        truncated: branch.truncated.clone(),
        diagnostics,
        diagnostics_error,
    };
    out.json("branch_report.json", &report)?;
    out.manifest("branch", cfg)?;

    println!("{:>24} {:>24} {:>6}", "s", "omega", "iters");
    for p in &branch.points {
        println!("{:>24} {:>24} {:>6}", fmt_f64(p.s), fmt_f64(p.omega), p.newton_iters);
    }
    if let Some(t) = &branch.truncated {
        println!("branch truncated at {t}");
    }
    Ok(BranchRun { branch, report })
}

pub fn cmd_branch(cfg: &RunConfig) -> Result<(), CliError> {
    let run = run_branch(cfg)?;
    if let Some(d) = &run.report.diagnostics {
        print_verdicts(&d.verdicts);
    }
    if run.branch.points.is_empty() {
        return Err(CliError::Solver {
            stage: "continuation".into(),
            source: LabError::Bifurcation(format!(
                "the first branch point did not converge ({})",
                run.branch.truncated.as_deref().unwrap_or("no reason recorded")
            )),
        });
    }
    Ok(())
}
