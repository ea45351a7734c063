//! Truncated Taylor series in one variable, used to differentiate closed-form profiles exactly.

use std::ops::{Add, Mul, Neg, Sub};

/// Normalized Taylor coefficients `c_j = f^{(j)}(a)/j!` up to a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(c: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = c;
        Jet(v)
    }

    /// The identity function expanded at `a`.
    pub fn variable(a: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = a;
        if order > 0 {
            v[1] = 1.0;
        }
        Jet(v)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// `f^{(j)}(a)`.
    pub fn derivative(&self, j: usize) -> f64 {
        self.0[j] * (1..=j).map(|i| i as f64).product::<f64>()
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet(self.0.iter().map(|v| v * c).collect())
    }

    pub fn exp(&self) -> Jet {
        let n = self.order();
        let mut out = vec![0.0; n + 1];
        out[0] = self.0[0].exp();
        for m in 1..=n {
            let s: f64 = (1..=m).map(|k| k as f64 * self.0[k] * out[m - k]).sum();
            out[m] = s / m as f64;
        }
        Jet(out)
    }

    pub fn ln(&self) -> Jet {
        let n = self.order();
        let a = &self.0;
        let mut out = vec![0.0; n + 1];
        out[0] = a[0].ln();
        for m in 1..=n {
            let s: f64 = (1..m).map(|k| k as f64 * out[k] * a[m - k]).sum();
            out[m] = (m as f64 * a[m] - s) / (m as f64 * a[0]);
        }
        Jet(out)
    }

    pub fn recip(&self) -> Jet {
        let n = self.order();
        let a = &self.0;
        let mut out = vec![0.0; n + 1];
        out[0] = 1.0 / a[0];
        for m in 1..=n {
            let s: f64 = (1..=m).map(|k| a[k] * out[m - k]).sum();
            out[m] = -s / a[0];
        }
        Jet(out)
    }

    pub fn powf(&self, p: f64) -> Jet {
        self.ln().scale(p).exp()
    }

    pub fn div(&self, other: &Jet) -> Jet {
        self * &other.recip()
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let n = self.order();
        Jet((0..=n).map(|m| (0..=m).map(|k| self.0[k] * o.0[m - k]).sum()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_ln_recip_agree_with_closed_forms() {
        let x = Jet::variable(0.7, 6);
        let e = x.exp();
        for j in 0..=6 {
            assert!((e.derivative(j) - 0.7f64.exp()).abs() < 1e-12);
        }
        let l = x.ln();
        assert!((l.derivative(3) - 2.0 / 0.7f64.powi(3)).abs() < 1e-10);
        let r = x.recip();
        assert!((r.derivative(2) - 2.0 / 0.7f64.powi(3)).abs() < 1e-10);
        let p = x.powf(-0.5);
        assert!((p.derivative(1) + 0.5 * 0.7f64.powf(-1.5)).abs() < 1e-12);
    }
}
