//! Globally adaptive Gauss–Kronrod (7, 15) quadrature for complex integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: C64,
    pub error: f64,
    pub evals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: C64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn gk15(f: &impl Fn(f64) -> C64, a: f64, b: f64) -> Piece {
    let (c, hw) = (0.5 * (a + b), 0.5 * (b - a));
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let s = f(c - hw * XGK[i]) + f(c + hw * XGK[i]);
        kron += s * WGK[i];
        if i % 2 == 1 {
            gauss += s * WG[i / 2];
        }
    }
    Piece { a, b, value: kron * hw, error: ((kron - gauss) * hw).norm() }
}

/// `∫_a^b f` to `max(abs_tol, rel_tol·|I|)`, splitting the worst interval first.
pub fn integrate(f: impl Fn(f64) -> C64, a: f64, b: f64, abs_tol: f64, rel_tol: f64, max_pieces: usize) -> Result<Quad> {
    if a == b {
        return Ok(Quad { value: C64::new(0.0, 0.0), error: 0.0, evals: 0 });
    }
    let first = gk15(&f, a, b);
    let (mut value, mut error) = (first.value, first.error);
    let mut heap = BinaryHeap::from([first]);
    let mut evals = 15;
    while error > abs_tol.max(rel_tol * value.norm()) {
        if heap.len() >= max_pieces {
            return Err(Error::Quadrature(error));
        }
        let worst = heap.pop().expect("heap is nonempty");
        let m = 0.5 * (worst.a + worst.b);
        let (l, r) = (gk15(&f, worst.a, m), gk15(&f, m, worst.b));
        evals += 30;
        value += l.value + r.value - worst.value;
        error += l.error + r.error - worst.error;
        heap.push(l);
        heap.push(r);
        if !error.is_finite() {
            return Err(Error::Quadrature(error));
        }
        if error <= abs_tol.max(rel_tol * value.norm()) {
            // the running sums can cancel catastrophically; confirm before stopping
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
        }
    }
    // recompute sums to shed accumulated cancellation
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(Quad { value, error, evals })
}

/// Sum of [`integrate`] over consecutive breakpoints.
pub fn integrate_pieces(f: impl Fn(f64) -> C64, breaks: &[f64], abs_tol: f64, rel_tol: f64, max_pieces: usize) -> Result<Quad> {
    let mut out = Quad { value: C64::new(0.0, 0.0), error: 0.0, evals: 0 };
    let n = breaks.len().saturating_sub(1).max(1) as f64;
    for w in breaks.windows(2) {
        let q = integrate(&f, w[0], w[1], abs_tol / n, rel_tol, max_pieces)?;
        out.value += q.value;
        out.error += q.error;
        out.evals += q.evals;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials_and_accurate_for_oscillations() {
        let q = integrate(|x| C64::new(x.powi(10), 0.0), -1.0, 2.0, 1e-13, 0.0, 100).unwrap();
        assert!((q.value.re - (2f64.powi(11) + 1.0) / 11.0).abs() < 1e-11);
        let q = integrate(|x| C64::from_polar(1.0, 50.0 * x), 0.0, 3.0, 1e-12, 0.0, 1000).unwrap();
        let exact = (C64::from_polar(1.0, 150.0) - 1.0) / C64::new(0.0, 50.0);
        assert!((q.value - exact).norm() < 1e-11);
        let q = integrate(|x| C64::new((-x * x).exp(), 0.0), -10.0, 10.0, 1e-14, 0.0, 1000).unwrap();
        assert!((q.value.re - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reports_nonconvergence() {
        let r = integrate(|x| C64::new(1.0 / x.abs().sqrt().max(1e-300), 0.0), -1.0, 1.0, 1e-15, 0.0, 8);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }
}
