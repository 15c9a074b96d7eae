mod common;

use coorddrift::kernel::flow::{mean_oracle, uniform_grid};
use coorddrift::kernel::{
    density_1d_fokker_planck, kernel_K, sample_flows, sample_phi_euler, sample_phi_exact, AffineCurve, DensityGridSpec,
    KernelBudget, KernelMethod,
};
use coorddrift::fredholm::boundary_bounds;
use coorddrift::rng::{mean_and_se, par_indexed, StreamId};
use coorddrift::{Point2, ProblemParams};
use proptest::prelude::*;

use common::{ks_critical_1pct, ks_statistic};

fn unit() -> ProblemParams {
    ProblemParams::symmetric_unit()
}

#[test]
fn exact_and_euler_flows_share_a_law() {
    let p = unit();
    let grid = uniform_grid(0.25, 250);
    let start = Point2::new(0.5, 0.5).unwrap();
    let n = 10_000;
    let exact = par_indexed(n, |i| sample_phi_exact(start, &grid, &p, StreamId::new(11, i as u64)).unwrap().phi1[250]);
    let euler = par_indexed(n, |i| sample_phi_euler(start, &grid, &p, StreamId::new(12, i as u64)).unwrap().phi1[250]);
    let d = ks_statistic(&exact, &euler);
    assert!(d < ks_critical_1pct(n, n), "KS {d}");
    let (m, se) = mean_and_se(&euler);
    assert!((m - mean_oracle(0.5, 1.0, 0.25)).abs() < 3.0 * se);
}

#[test]
fn sampled_marginal_matches_forward_density() {
    let p = unit();
    let (t, start) = (0.5, 0.5);
    let d = density_1d_fokker_planck(t, start, &p, &DensityGridSpec::default()).unwrap();
    assert!((d.mass - 1.0).abs() < 1e-3);
    let grid = uniform_grid(t, 500);
    let n = 100_000;
    let xs = par_indexed(n, |i| {
        sample_phi_exact(Point2::new(start, start).unwrap(), &grid, &p, StreamId::new(13, i as u64))
            .unwrap()
            .phi1[500]
    });
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let top = sorted[(0.995 * n as f64) as usize];
    let bins = 50;
    let width = top / bins as f64;
    let mut hist = vec![0.0; bins + 1];
    for x in &xs {
        hist[((x / width) as usize).min(bins)] += 1.0 / n as f64;
    }
    // cell masses of the density, binned by centre
    let mut dens = vec![0.0; bins + 1];
    for i in 0..d.psi_grid.len() {
        let lo = if i == 0 { 0.0 } else { 0.5 * (d.psi_grid[i - 1] + d.psi_grid[i]) };
        let hi = if i + 1 == d.psi_grid.len() { d.psi_grid[i] } else { 0.5 * (d.psi_grid[i] + d.psi_grid[i + 1]) };
        dens[((d.psi_grid[i] / width) as usize).min(bins)] += d.density[i] * (hi - lo);
    }
    let tv = 0.5 * hist.iter().zip(&dens).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn methods_agree_below_the_upper_line() {
    let p = unit();
    let bb = boundary_bounds(&p).unwrap();
    let budget = KernelBudget {
        n_paths: 40_000,
        ..KernelBudget::default()
    };
    let curve: AffineCurve = bb.upper;
    let mc = kernel_K(0.5, 0.2, 0.2, &curve, &p, KernelMethod::MonteCarlo, &budget).unwrap();
    let dq = kernel_K(0.5, 0.2, 0.2, &curve, &p, KernelMethod::DensityQuadrature, &budget).unwrap();
    let err = (mc.std_error.powi(2) + dq.std_error.powi(2)).sqrt();
    assert!((mc.value - dq.value).abs() < 3.0 * err, "{mc:?} {dq:?}");
}

#[test]
fn flow_bundle_mean_follows_linear_ode() {
    let p = unit();
    let times = [0.25, 0.5, 1.0];
    let flows = sample_flows(&times, &p, 50_000, 3, 0.01).unwrap();
    let start = Point2::new(0.3, 0.0).unwrap();
    for (j, t) in times.iter().enumerate() {
        let xs: Vec<f64> = (0..flows.n_paths).map(|i| flows.at(i, j, start).0).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - mean_oracle(0.3, 1.0, *t)).abs() < 3.0 * se, "t = {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_is_linear_and_monotone_in_the_start(
        a in 0.0f64..3.0, b in 0.0f64..3.0, w in 0.0f64..1.0, seed in 0u64..1000, lambda in 0.1f64..3.0, mu in 0.2f64..2.0,
    ) {
        let p = ProblemParams::new(lambda, mu, 1.0, 0.5, 0.0).unwrap();
        let grid = uniform_grid(1.0, 100);
        let run = |x: f64| sample_phi_exact(Point2::new(x, x).unwrap(), &grid, &p, StreamId::new(seed, 0)).unwrap();
        let (pa, pb, pm) = (run(a), run(b), run(w * a + (1.0 - w) * b));
        for k in 0..grid.len() {
            let mix = w * pa.phi1[k] + (1.0 - w) * pb.phi1[k];
            prop_assert!((pm.phi1[k] - mix).abs() <= 1e-9 * (1.0 + mix.abs()));
            if a <= b {
                prop_assert!(pa.phi2[k] <= pb.phi2[k]);
            }
        }
    }

    #[test]
    fn kernel_of_the_whole_space_is_the_mean_lagrangian(x in 0.0f64..2.0, y in 0.0f64..2.0, t in 0.05f64..0.5) {
        let p = unit();
        let budget = KernelBudget { n_paths: 2000, ..KernelBudget::default() };
        let all = coorddrift::kernel::ConstantCurve(f64::INFINITY);
        let k = kernel_K(t, x, y, &all, &p, KernelMethod::DensityQuadrature, &budget).unwrap();
        let mean = 0.5 * mean_oracle(x, 1.0, t) + 0.5 * mean_oracle(y, 1.0, t);
        // density means are good to 1% while the truncation at ten means holds the tail
        prop_assert!((k.value - (mean - 1.0)).abs() < 1e-2 * (1.0 + mean), "{} vs {}", k.value, mean - 1.0);
    }
}
