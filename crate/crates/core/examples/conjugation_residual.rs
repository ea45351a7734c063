// Weyl quantization of the conjugate symbol `F_h` and the decay of
// `∥e^{-(h/2)D_t²} f − F_h e^{-(h/2)D_t²}∥` as `h → 0`.

use std::sync::Arc;

use carleman::conjugation::{build_fh, conjugation_residual_with, CutoffSuite};
use carleman::gevrey::{BumpScale, GevreyFunction};
use carleman::grid::{Field, TimeSpaceGrid, C64};
use carleman::verify::decay_rate_fit;

/// Returns the fitted slope of `log residual` against `h^{-1/3}`.
pub fn run_example() -> f64 {
    let g = Arc::new(TimeSpaceGrid::new_1d((-4.0, 8.0, 1024), (0.0, 1.0, 4)).unwrap());
    let cs = CutoffSuite::new(0.0, 0.5, 4.0, 2.0).unwrap();
    let u = Field::from_fn(&g, |t, _| C64::new((3.0 * t).cos() + 0.5, 0.0));
    let f = GevreyFunction::sin(1.0);
    let mut ladder = vec![];
    for p in 4..=9 {
        let h = 2f64.powi(-p);
        let fh = build_fh(&f, &cs, h, &g, BumpScale::Fixed(1.0)).unwrap();
        let r = conjugation_residual_with(&fh, &f, &u, 0).unwrap();
        println!("h = 2^-{p}: depth {:2}, residual {r:.3e}", fh.depth());
        ladder.push((h.powf(-1.0 / 3.0), r));
    }
    let fit = decay_rate_fit(&ladder).unwrap();
    println!("slope {:.3}, R² {:.4}", fit.slope, fit.r_squared);
    fit.slope
}

#[allow(dead_code)]
fn main() {
    run_example();
}
