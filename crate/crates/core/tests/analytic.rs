use coorddrift::kernel::flow::exact_step;
use coorddrift::mayer::{mayer_identity_residual, mayer_m_1d, mayer_m_2d};
use coorddrift::onedim::{f_of, g_of, solve_phi_star, value_1d};
use coorddrift::params::{lagrangian_l, validate_params};
use coorddrift::quad::QuadratureSpec;
use coorddrift::rng::{mean_and_se, normal, par_indexed, StreamId};
use coorddrift::{Point2, ProblemParams};
use proptest::prelude::*;

#[test]
fn identity_holds_away_from_unit_parameters() {
    let p = ProblemParams::new(2.0, 1.5, 0.5, 0.3, 0.0).unwrap();
    for (x, y) in [(0.3, 0.7), (1.0, 4.0), (2.5, 0.5)] {
        let r = mayer_identity_residual(Point2::new(x, y).unwrap(), &p, 1e-4).unwrap();
        assert!(r < 1e-5, "residual {r} at ({x}, {y})");
    }
}

fn sign_changes(lambda: f64, mu: f64, c: f64) -> usize {
    let kappa = 2.0 * lambda / (mu * mu);
    let lo = lambda / c;
    let hi = 1e3 * lo.max(1.0);
    let n = 10_000;
    let signs: Vec<bool> = (1..=n)
        .map(|k| {
            let phi = lo * (hi / lo).powf(k as f64 / n as f64);
            f_of(phi, kappa).unwrap() > g_of(phi, kappa, mu, c)
        })
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

#[test]
fn threshold_equation_has_one_crossing() {
    for (l, m, c) in [(1.0, 1.0, 1.0), (2.0, 1.0, 0.5), (0.5, 2.0, 1.0), (1.0, 1.0, 0.1)] {
        assert_eq!(sign_changes(l, m, c), 1, "lambda {l}, mu {m}, c {c}");
    }
}

/// `E ∫₀^τ e^{−λt}(Φ_t − λ/c) dt` for the threshold rule started at zero.
fn threshold_rule_value(params: &ProblemParams, phi_star: f64, n: usize) -> (f64, f64) {
    let dt = 1e-3;
    let xs = par_indexed(n, |i| {
        let mut rng = StreamId::new(21, i as u64).rng(0);
        let (mut phi, mut t, mut acc) = (0.0, 0.0, 0.0);
        while phi < phi_star {
            let next = exact_step(phi, params.lambda, params.mu, dt, dt.sqrt() * normal(&mut rng));
            let l = |x: f64, s: f64| (-params.lambda * s).exp() * (x - params.lambda_over_c());
            acc += 0.5 * dt * (l(phi, t) + l(next, t + dt));
            phi = next;
            t += dt;
        }
        acc
    });
    mean_and_se(&xs)
}

#[test]
fn one_dim_value_matches_simulated_threshold_rule() {
    let p = ProblemParams::one_dim(1.0, 1.0, 1.0).unwrap();
    let b = solve_phi_star(&p, 1e-12).unwrap();
    let v0 = value_1d(0.0, &b, &p, &QuadratureSpec::default()).unwrap();
    assert!(v0 > -1.0 && v0 < 0.0);
    let (mc, se) = threshold_rule_value(&p, b.phi_star, 8000);
    // discrete monitoring stops late by O(√dt); allow for it on top of the noise
    assert!((mc - v0).abs() < 3.0 * se + 5e-3, "{mc} ± {se} vs {v0}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn validation_is_idempotent(lambda in 0.01f64..10.0, mu in -5.0f64..5.0, c in 0.01f64..10.0, p1 in 0.0f64..=1.0, pi in 0.0f64..0.99) {
        prop_assume!(mu.abs() > 1e-3);
        let p = ProblemParams::new(lambda, mu, c, p1, pi).unwrap();
        prop_assert_eq!(validate_params(p).unwrap(), p);
        prop_assert_eq!(p.p1 + p.p2, 1.0);
        let d = p.derived();
        prop_assert!((d.kappa - 2.0 * lambda / (mu * mu)).abs() <= 1e-15 * d.kappa);
        prop_assert!(d.phi0_init >= 0.0);
        prop_assert_eq!(validate_params(p).unwrap().derived(), d);
    }

    #[test]
    fn lagrangian_symmetry_follows_the_weights(x in 0.0f64..5.0, y in 0.0f64..5.0, p1 in 0.0f64..=1.0) {
        let p = ProblemParams::new(1.0, 1.0, 1.0, p1, 0.0).unwrap();
        let a = lagrangian_l(Point2::new(x, y).unwrap(), &p);
        let b = lagrangian_l(Point2::new(y, x).unwrap(), &p);
        let sym = ProblemParams::new(1.0, 1.0, 1.0, 0.5, 0.0).unwrap();
        prop_assert_eq!(
            lagrangian_l(Point2::new(x, y).unwrap(), &sym),
            lagrangian_l(Point2::new(y, x).unwrap(), &sym)
        );
        if (p1 - 0.5).abs() > 1e-3 && (x - y).abs() > 1e-3 {
            prop_assert!(a != b);
        }
    }

    #[test]
    fn mayer_function_is_nonnegative_and_increasing(kappa in prop::sample::select(vec![0.5, 1.0, 2.0, 5.0]), a in 0.0f64..20.0, d in 1e-3f64..5.0) {
        let q = QuadratureSpec::default();
        let lo = mayer_m_1d(a, kappa, 1.0, &q).unwrap().value;
        let hi = mayer_m_1d(a + d, kappa, 1.0, &q).unwrap().value;
        prop_assert!(lo >= 0.0);
        prop_assert!(hi > lo);
    }

    #[test]
    fn two_dim_mayer_is_the_weighted_sum(x in 0.0f64..5.0, y in 0.0f64..5.0, p1 in 0.0f64..=1.0, c in 0.2f64..5.0) {
        let p = ProblemParams::new(1.0, 1.0, c, p1, 0.0).unwrap();
        let q = QuadratureSpec::default();
        let m = |z| mayer_m_1d(z, p.kappa(), p.mu, &q).unwrap().value;
        let two = mayer_m_2d(Point2::new(x, y).unwrap(), &p, &q).unwrap().value;
        let want = p.p1 * m(x) + p.p2 * m(y) + 1.0 / c;
        prop_assert!((two - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn one_dim_threshold_and_value_bounds(lambda in 0.2f64..3.0, mu in 0.3f64..3.0, c in 0.2f64..3.0, u in 0.0f64..1.5) {
        let p = ProblemParams::one_dim(lambda, mu, c).unwrap();
        let b = solve_phi_star(&p, 1e-12).unwrap();
        prop_assert!(b.phi_star > lambda / c);
        let q = QuadratureSpec::default();
        let v = value_1d(u * b.phi_star, &b, &p, &q).unwrap();
        prop_assert!(v <= 1e-12 && v >= -1.0 / c - 1e-12, "{}", v);
        if u >= 1.0 {
            prop_assert_eq!(v, 0.0);
        }
        let cheaper = solve_phi_star(&ProblemParams::one_dim(lambda, mu, 0.5 * c).unwrap(), 1e-12).unwrap();
        prop_assert!(cheaper.phi_star > b.phi_star);
    }
}
