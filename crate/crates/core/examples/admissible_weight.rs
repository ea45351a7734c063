// Convexified weight `e^{λΨ} − 1` for a noncharacteristic surface and its
// admissibility margins on a small ball.

use carleman::schrodinger::Metric;
use carleman::weights::{auto_lambda, AdmissibilityConfig, SurfaceFunction};

/// Returns the selected `λ` and the smallest `B` margin.
pub fn run_example() -> (f64, f64) {
    let psi = SurfaceFunction::affine(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
    let m = Metric::flat(1);
    let cfg = AdmissibilityConfig::new(1.0, 0.1);
    let built = auto_lambda(&psi, &m, &cfg, None, 8).unwrap();
    let r = &built.report;
    println!("lambda {}, delta {:.1e}", built.lambda, built.delta);
    println!(
        "min B margin {:.4}, min E margin {:.4}, min |grad phi|² {:.4} over {} samples",
        r.min_b_eigen_margin,
        r.min_e_margin,
        r.min_grad_norm_sq,
        r.records.len()
    );
    (built.lambda, r.min_b_eigen_margin)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
