// Spectral time calculus on a periodic grid: the discrete Fourier transform of a
// Gaussian and the exact Gaussian conjugation identity.

use std::f64::consts::PI;
use std::sync::Arc;

use carleman::conjugation::residual_gaussian_conjugation;
use carleman::grid::{fourier_transform_samples, Field, TimeSpaceGrid, C64};

/// Returns `(max Fourier error, max conjugation residual)`.
pub fn run_example() -> (f64, f64) {
    let (n, t0, len) = (512, -16.0, 32.0);
    let dt = len / n as f64;
    let values: Vec<C64> = (0..n).map(|j| C64::new((-(t0 + j as f64 * dt).powi(2)).exp(), 0.0)).collect();
    let fourier_err = fourier_transform_samples(&values, t0, dt)
        .into_iter()
        .map(|(xi, f)| (f - PI.sqrt() * (-xi * xi / 4.0).exp()).norm())
        .fold(0.0, f64::max);
    println!("fourier transform of e^(-t^2): max error {fourier_err:.2e}");

    let g = Arc::new(TimeSpaceGrid::new_1d((t0, len, n), (0.0, 1.0, 4)).unwrap());
    let u = Field::from_fn(&g, |t, _| C64::from_polar((-(t - 1.0).powi(2)).exp(), 2.0 * t));
    let mut residual: f64 = 0.0;
    for varsigma in [1.0, 10.0, 100.0] {
        let r = residual_gaussian_conjugation(&u, varsigma).unwrap();
        println!("varsigma {varsigma:>5}: conjugation residual {r:.2e}");
        residual = residual.max(r);
    }
    (fourier_err, residual)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
