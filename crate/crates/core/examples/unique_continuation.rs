// Certified vanishing region from the decay in `τ` of the conjugated norm of a
// manufactured solution supported below the surface.

use std::sync::Arc;

use carleman::grid::TimeSpaceGrid;
use carleman::schrodinger::{LowerOrderTerms, Metric, SpatialScheme};
use carleman::verify::{
    manufactured_solution, uc_certify, CertifyOptions, ManufacturedMode, ProbeFamily, ProbeKind, SweepConfig,
    WeightSource,
};

/// Returns `(certified δ, measured decay rate)`.
pub fn run_example() -> (f64, f64) {
    let g = Arc::new(TimeSpaceGrid::centered(1.0, 0.25, 256, &[0.0], 0.25, 256).unwrap());
    let cfg = SweepConfig {
        tau_grid: vec![32.0, 64.0, 96.0, 128.0, 192.0, 256.0, 384.0, 512.0],
        mu: 1.0,
        probe_family: ProbeFamily { kind: ProbeKind::ModulatedGaussian, count: 1, seed: 0, radius: 0.0125 },
        metric_key: "flat".into(),
        weight_source: WeightSource::Convexified { lambda: None, delta: None, max_power: 8 },
        lot_key: "exp_inverse".into(),
        d_margin: 1.0,
        center: vec![1.0, 0.0],
        surface_grad: vec![0.0, 1.0],
        ball_radius: 0.1,
        c0: 1.0,
        scheme: SpatialScheme::FluxDifference,
    };
    let psi = cfg.surface().unwrap();
    let m = Metric::flat(1);
    let lot = LowerOrderTerms::from_key("exp_inverse", 1).unwrap();
    let mode = ManufacturedMode::SublevelBump { depth: -0.04, radius: 0.0015, margin: 0.02 };
    let (u, _) = manufactured_solution(&psi, &g, &m, &lot, mode).unwrap();
    let res = uc_certify(&u, &psi, &m, &lot, &cfg, &CertifyOptions::default()).unwrap();
    let rate = res.decay_rate.unwrap_or(0.0);
    println!("lambda {}, eta {:.3e}", res.lambda, res.eta);
    println!(
        "decay rate {rate:.4} (R² {:.4}), certified delta {:.4}",
        res.decay_fit.map_or(0.0, |f| f.r_squared),
        res.delta_certified
    );
    (res.delta_certified, rate)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
