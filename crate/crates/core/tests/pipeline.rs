use chkp_core::branch::{continue_branch, diagnose, BranchConfig, BranchSystem};
use chkp_core::grid::{build_grid, NodeFamily, Parity};
use chkp_core::operators::{assemble_blocks, assemble_k, assemble_l_from_m, assemble_m, build_liouville};
use chkp_core::soliton::{solve_profile, summarize, verdicts, SolitonParams, SolitonProfile};
use chkp_core::spectra::{conjugacy_check, decompose_l, eig_blocks, eig_l_odd, eig_m, reversibility_check};

fn setup(l: f64, n: usize) -> (chkp_core::grid::Grid, SolitonProfile) {
    let grid = build_grid(l, n, NodeFamily::Spectral).unwrap();
    let p = SolitonParams::new(3.0, 1.0).unwrap();
    let profile = solve_profile(p, &grid).unwrap();
    (grid, profile)
}

fn kernel_residual(n: usize) -> f64 {
    let (g, prof) = setup(45.0, n);
    let m = assemble_m(&prof, &g, Parity::Odd).unwrap();
    let mq = m.apply(&prof.qx).unwrap();
    g.l2_norm(Parity::Odd, &mq) / g.l2_norm(Parity::Odd, &prof.qx)
}

#[test]
fn kernel_residual_shrinks_under_refinement() {
    let r: Vec<f64> = [128, 256, 512].iter().map(|&n| kernel_residual(n)).collect();
    // Spectral decay, then a rounding floor that grows like n⁴ε.
    assert!(r[1] < 0.1 * r[0], "{r:?}");
    assert!(r[1] <= 1e-8 && r[2] <= 1e-8, "{r:?}");
}

#[test]
fn conjugacy_improves_with_resolution() {
    let measure = |n: usize| {
        let (g, prof) = setup(45.0, n);
        let m = assemble_m(&prof, &g, Parity::Even).unwrap();
        let map = build_liouville(&prof);
        let zg = map.z_grid(n).unwrap();
        let k = assemble_k(&prof, &map, &zg).unwrap();
        conjugacy_check(&m, &k, &map, 3).unwrap()
    };
    let coarse = measure(128);
    let fine = measure(512);
    assert!(fine.measured <= coarse.measured, "{} {}", coarse.measured, fine.measured);
    assert!(fine.pass, "{fine:?}");
}

#[test]
fn soliton_to_branch() {
    let (g, prof) = setup(45.0, 384);
    assert!(verdicts(&summarize(&prof).unwrap()).iter().all(|v| v.pass));

    let me = assemble_m(&prof, &g, Parity::Even).unwrap();
    let mo = assemble_m(&prof, &g, Parity::Odd).unwrap();
    let mrep = eig_m(&me, &mo, &prof).unwrap();
    assert_eq!((mrep.counts.negative, mrep.counts.near_zero), (1, 1));

    let l = assemble_l_from_m(&me).unwrap();
    let spec = decompose_l(&l).unwrap();
    let lrep = eig_l_odd(&spec, 3.0);
    assert_eq!(lrep.counts.negative, 1);
    let lambda = lrep.eigenvalues[0];
    assert!(lambda < 0.0);

    let block = assemble_blocks(&l);
    let brep = eig_blocks(&block, &spec, false).unwrap();
    assert_eq!(brep.imaginary_pairs, 1);
    assert!((brep.omega0 - (-lambda).sqrt()).abs() <= 1e-12);
    assert!(reversibility_check(&block, 3).unwrap().iter().all(|v| v.pass));

    let cfg = BranchConfig {
        n_modes: 4,
        ds: 2e-3,
        s_max: 1e-2,
        ..Default::default()
    };
    let sys = BranchSystem::new(&l, cfg.n_modes).unwrap();
    let branch = continue_branch(&sys, &cfg).unwrap();
    assert!(branch.truncated.is_none(), "{:?}", branch.truncated);
    assert_eq!(branch.points.len(), 5);
    for p in &branch.points {
        assert!(p.final_residual <= cfg.tol);
        assert!(p.newton_iters <= cfg.max_iter);
        // Frequency correction is second order in the amplitude.
        assert!((p.omega - branch.omega0).abs() <= 10.0 * p.s * p.s, "{} {}", p.s, p.omega);
    }
    let diag = diagnose(&sys, &prof, &branch, &cfg).unwrap();
    assert!(diag.jacobian_error <= 1e-5, "{}", diag.jacobian_error);
    let complete = diag.verdicts.iter().find(|v| v.name == "branch.complete").unwrap();
    assert!(complete.pass);
}
