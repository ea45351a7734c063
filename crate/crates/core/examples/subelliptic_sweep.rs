// Sweep of the subelliptic ratio over `τ` and a family of localized probes.

use std::sync::Arc;

use carleman::grid::TimeSpaceGrid;
use carleman::schrodinger::SpatialScheme;
use carleman::verify::{subelliptic_sweep, ProbeFamily, ProbeKind, SweepConfig, WeightSource};

/// Returns the largest ratio per `τ` and whether the profile is bounded.
pub fn run_example() -> (Vec<f64>, bool) {
    let side = 0.03125;
    let g = Arc::new(TimeSpaceGrid::centered(1.0, side, 256, &[0.0], side, 256).unwrap());
    let cfg = SweepConfig {
        tau_grid: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
        mu: 1.0,
        probe_family: ProbeFamily { kind: ProbeKind::ModulatedGaussian, count: 4, seed: 0, radius: 0.0125 },
        metric_key: "flat".into(),
        weight_source: WeightSource::Convexified { lambda: None, delta: None, max_power: 8 },
        lot_key: "none".into(),
        d_margin: 1.0,
        center: vec![1.0, 0.0],
        surface_grad: vec![0.0, 1.0],
        ball_radius: 0.1,
        c0: 1.0,
        scheme: SpatialScheme::FluxDifference,
    };
    let report = subelliptic_sweep(&cfg, &g).unwrap();
    let maxima: Vec<f64> = report.summary.max_ratio_per_tau.iter().map(|m| m.max_ratio).collect();
    for m in &report.summary.max_ratio_per_tau {
        println!("tau {:>5}: max ratio {:.4}", m.tau, m.max_ratio);
    }
    println!(
        "median {:.4}, last-quartile max {:.4}: {:?}",
        report.summary.median, report.summary.last_quartile_max, report.summary.verdict
    );
    (maxima, report.summary.verdict.is_pass())
}

#[allow(dead_code)]
fn main() {
    run_example();
}
