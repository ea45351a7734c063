// The Schrödinger operator conjugated by `Q = e^{-(h/2)D_t²} e^{τφ}`: the residual
// of the conjugation identity for the spectral and flux-difference schemes.

use std::sync::Arc;

use carleman::conjugation::{residual_conjugated_operator, ConjugatorParams};
use carleman::grid::{Field, TimeSpaceGrid, C64};
use carleman::schrodinger::{Metric, SpatialScheme};
use carleman::weights::{Quadratic, QuadraticWeight};
use nalgebra::DMatrix;

/// Returns `(spectral residual, flux-difference residual)`.
pub fn run_example() -> (f64, f64) {
    let phi = Quadratic::new(vec![0.0, 0.0], vec![0.1, 0.2], DMatrix::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.2]))
        .unwrap();
    let w = QuadraticWeight::new(phi, |_| 0.0).unwrap();
    let m = Metric::constant(DMatrix::from_element(1, 1, 1.5));
    let p = ConjugatorParams::new(1.0, 2.0).unwrap();
    let g = Arc::new(TimeSpaceGrid::new_1d((-8.0, 16.0, 256), (-4.0, 8.0, 256)).unwrap());
    let u = Field::from_fn(&g, |t, x| C64::new((-4.0 * (t * t + x[0] * x[0])).exp() * (1.0 + 0.5 * x[0]), 0.0));
    let spectral = residual_conjugated_operator(&u, &m, &w, &p, SpatialScheme::Spectral).unwrap();
    let flux = residual_conjugated_operator(&u, &m, &w, &p, SpatialScheme::FluxDifference).unwrap();
    println!("h = {:.4}: spectral residual {spectral:.2e}, flux-difference residual {flux:.2e}", p.h);
    (spectral, flux)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
