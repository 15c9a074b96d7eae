#![allow(dead_code)]

use std::sync::OnceLock;

use coorddrift::fredholm::{picard_solve, Boundary2D, PicardSettings};
use coorddrift::ProblemParams;

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic 1% critical value of the two-sample statistic.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.628 * ((n + m) / (n * m)).sqrt()
}

/// The boundary at unit parameters with default settings, solved once per test binary.
pub fn unit_boundary() -> &'static Boundary2D {
    static B: OnceLock<Boundary2D> = OnceLock::new();
    B.get_or_init(|| picard_solve(&ProblemParams::symmetric_unit(), &PicardSettings::default()).expect("unit boundary converges"))
}
