use coorddrift::fredholm::boundary_bounds;
use coorddrift::kernel::Curve;
use coorddrift::onedim::{solve_phi_star, value_1d};
use coorddrift::pde::{
    agreement_ratio, extract_boundary, gradient_norm, phi2_cell_at, smooth_fit_check, solve_vi, PsorSettings, VIGridSpec,
};
use coorddrift::quad::QuadratureSpec;
use coorddrift::ProblemParams;

fn spec(n: usize) -> VIGridSpec {
    VIGridSpec {
        n1: n,
        n2: n,
        ..VIGridSpec::default()
    }
}

#[test]
fn refinement_smooth_fit_and_strict_continuation() {
    let p = ProblemParams::symmetric_unit();
    let bb = boundary_bounds(&p).unwrap();
    let coarse = solve_vi(&p, &spec(100), &PsorSettings::default()).unwrap();
    let fine = solve_vi(&p, &spec(200), &PsorSettings::default()).unwrap();
    for g in [&coarse, &fine] {
        assert_eq!(g.mask_violations(&bb), 0);
        assert!(g.is_up_closed());
        assert!(g.complementarity_defect() < 1e-6);
    }
    let mut bc = extract_boundary(&coarse).unwrap();
    let bf = extract_boundary(&fine).unwrap();
    bc.node_errors.iter_mut().for_each(|e| *e = 0.0);
    // the ratio counts two cells, so 0.75 is a shift of 1.5 coarse cells
    let r = agreement_ratio(&coarse, &bf, &bc);
    assert!(r < 0.75, "refinement shift ratio {r}");

    let fit = smooth_fit_check(&fine, &bf);
    assert!(!fit.is_empty());
    for (k, d) in fit.iter().enumerate() {
        let x = fine.phi1_grid[k];
        assert!(*d < phi2_cell_at(&fine, bf.height(x)), "column {k}: {d}");
    }
    // inside the triangle V̂ < 0 and the gradient stays above anything seen on the boundary
    let fit_max = fit.iter().copied().fold(0.0, f64::max);
    for target in [0.3, 0.6, 0.9] {
        let i = fine.phi1_grid.partition_point(|x| *x < target);
        let j = fine.phi2_grid.partition_point(|y| *y < target);
        assert!(fine.value(i, j) < 0.0);
        assert!(gradient_norm(&fine, i, j) > fit_max, "({target}, {target})");
    }
}

#[test]
fn nearly_one_dimensional_problem() {
    let p = ProblemParams::new(1.0, 1.0, 1.0, 0.999, 0.0).unwrap();
    let g = solve_vi(&p, &spec(200), &PsorSettings::default()).unwrap();
    let b = extract_boundary(&g).unwrap();
    let one = p.marginal(1).unwrap();
    let star = solve_phi_star(&one, 1e-12).unwrap();
    assert!((b.phi_zero / star.phi_star - 1.0).abs() < 0.02, "{} vs {}", b.phi_zero, star.phi_star);
    // on the φ1 axis the value is p1 times the one-dimensional value at cost p1·c
    let q = QuadratureSpec::default();
    for target in [0.2, 0.6, 1.0] {
        let i = g.phi1_grid.partition_point(|x| *x < target);
        let x = g.phi1_grid[i];
        let want = p.p1 * value_1d(x, &star, &one, &q).unwrap();
        assert!((g.value(i, 0) - want).abs() < 2e-2, "phi1 {x}: {} vs {want}", g.value(i, 0));
    }
}
