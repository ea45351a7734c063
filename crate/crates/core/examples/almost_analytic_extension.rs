// Almost analytic extension of a Gevrey function and the decay of its ∂̄ defect
// toward the real axis.

use carleman::gevrey::{almost_analytic_extend, defect_ladder, restriction_error, BumpScale, GevreyFunction};
use carleman::grid::C64;
use carleman::verify::decay_rate_fit;

/// Returns `(restriction error, slope of log defect against 1/|y|^(1/(s-1)))`.
pub fn run_example() -> (f64, f64) {
    let f = GevreyFunction::exp_inverse();
    let ext = almost_analytic_extend(&f, 1.0, BumpScale::Fixed(1.0)).unwrap();
    let xs: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
    let restriction = restriction_error(&ext, &xs).unwrap();
    println!("{}: max |f~(x) - f(x)| = {restriction:.2e}", f.name());
    println!("f~(0.4 + 0.1i) = {:.6}", ext.evaluate(C64::new(0.4, 0.1)).unwrap());

    let heights: Vec<f64> = (0..10).map(|i| 0.3 * 0.75f64.powi(i)).collect();
    let ladder = defect_ladder(&ext, 0.4, &heights).unwrap();
    for (x, d) in &ladder {
        println!("  abscissa {x:8.3}  defect {d:.3e}");
    }
    let fit = decay_rate_fit(&ladder).unwrap();
    println!("slope {:.3}, R² {:.4}", fit.slope, fit.r_squared);
    (restriction, fit.slope)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
