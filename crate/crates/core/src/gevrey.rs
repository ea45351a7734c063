//! Gevrey-class functions, the interpolating bump family `ζ_{k,D}` and almost-analytic extensions.
//!
//! Derivative oracles return normalized Taylor coefficients `f^{(j)}(t)/j!`, which
//! stay representable far beyond the order where `j!` overflows.

use std::f64::consts::E;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{write_field, Field, TimeSpaceGrid};
use crate::jet::Jet;

type TaylorOracle = dyn Fn(f64, usize) -> Vec<f64> + Send + Sync;

/// `ln(k!)`.
pub fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Time-dependent coefficient with a derivative oracle and Gevrey metadata.
#[derive(Clone)]
pub struct GevreyFunction {
    name: String,
    taylor: Arc<TaylorOracle>,
    pub domain: (f64, f64),
    pub class_s: f64,
    pub radius_r: f64,
    pub j_max: usize,
}

impl std::fmt::Debug for GevreyFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GevreyFunction")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("class_s", &self.class_s)
            .field("radius_r", &self.radius_r)
            .field("j_max", &self.j_max)
            .finish()
    }
}

impl GevreyFunction {
    /// Builds a function from a Taylor-coefficient oracle `(t, n) ↦ [f^{(j)}(t)/j!]_{j≤n}`.
    pub fn from_taylor(
        name: impl Into<String>,
        domain: (f64, f64),
        class_s: f64,
        radius_r: f64,
        j_max: usize,
        oracle: impl Fn(f64, usize) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), taylor: Arc::new(oracle), domain, class_s, radius_r, j_max }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_domain(mut self, domain: (f64, f64)) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius_r = r;
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::from_taylor("constant", (-1e3, 1e3), 2.0, 1.0, 400, move |_, n| {
            let mut v = vec![0.0; n + 1];
            v[0] = c;
            v
        })
    }

    /// Polynomial `Σ a_i t^i`.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self::from_taylor("polynomial", (-1e3, 1e3), 2.0, 1.0, 400, move |t, n| {
            (0..=n)
                .map(|j| {
                    // f^{(j)}(t)/j! = Σ_{i≥j} C(i,j) a_i t^{i-j}
                    coeffs
                        .iter()
                        .enumerate()
                        .skip(j)
                        .map(|(i, a)| a * binomial(i, j) * t.powi((i - j) as i32))
                        .sum()
                })
                .collect()
        })
    }

    /// `sin(M t)`.
    pub fn sin(m: f64) -> Self {
        Self::from_taylor("sin", (-1e3, 1e3), 2.0, 1.0, 400, move |t, n| {
            let (sn, cs) = (m * t).sin_cos();
            let cycle = [sn, cs, -sn, -cs];
            let mut out = Vec::with_capacity(n + 1);
            let mut scale = 1.0;
            for j in 0..=n {
                if j > 0 {
                    scale *= m / j as f64;
                }
                out.push(scale * cycle[j % 4]);
            }
            out
        })
    }

    /// `e^t`.
    pub fn exp() -> Self {
        Self::from_taylor("exp", (-50.0, 50.0), 2.0, 1.0, 400, |t, n| {
            let mut out = Vec::with_capacity(n + 1);
            let mut c = t.exp();
            for j in 0..=n {
                if j > 0 {
                    c /= j as f64;
                }
                out.push(c);
            }
            out
        })
    }

    /// The non-analytic Gevrey-2 reference `exp(-1/t)` for `t > 0`, `0` otherwise.
    ///
    /// Coefficients come from the power series of `exp(G)` with `G(t+h) = -1/(t+h)`.
    pub fn exp_inverse() -> Self {
        Self::from_taylor("exp_inverse", (-1e3, 1e3), 2.0, 1.0, 160, |t, n| {
            let mut out = vec![0.0; n + 1];
            if t <= 0.0 {
                return out;
            }
            // series in s = δ/t, where -1/(t+δ) = -(1/t) Σ (-s)^k; rescaled by t^{-k} at the end
            let inv = 1.0 / t;
            let g: Vec<f64> = (0..=n).map(|k| if k % 2 == 0 { -inv } else { inv }).collect();
            out[0] = g[0].exp();
            for m in 1..=n {
                let s: f64 = (1..=m).map(|k| k as f64 * g[k] * out[m - k]).sum();
                out[m] = s / m as f64;
            }
            let mut scale = 1.0;
            for c in out.iter_mut().skip(1) {
                scale *= inv;
                *c *= scale;
            }
            out
        })
    }

    /// Registry lookup used by configuration files: `sin`, `exp`, `exp_inverse`.
    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "sin" => Ok(Self::sin(1.0)),
            "exp" => Ok(Self::exp()),
            "exp_inverse" => Ok(Self::exp_inverse()),
            _ => Err(param("function", format!("unknown function `{key}`"))),
        }
    }

    /// `α f + β g`, with the smaller depth and domain intersection.
    pub fn combine(alpha: f64, f: &Self, beta: f64, g: &Self) -> Self {
        let (tf, tg) = (f.taylor.clone(), g.taylor.clone());
        let domain = (f.domain.0.max(g.domain.0), f.domain.1.min(g.domain.1));
        Self::from_taylor(
            format!("{alpha}*{}+{beta}*{}", f.name, g.name),
            domain,
            f.class_s.max(g.class_s),
            f.radius_r.max(g.radius_r),
            f.j_max.min(g.j_max),
            move |t, n| tf(t, n).iter().zip(tg(t, n)).map(|(a, b)| alpha * a + beta * b).collect(),
        )
    }

    /// The j-th derivative as a function in its own right.
    pub fn derivative_function(&self, j: usize) -> Self {
        let base = self.taylor.clone();
        Self::from_taylor(
            format!("d{j}/dt{j} {}", self.name),
            self.domain,
            self.class_s,
            self.radius_r,
            self.j_max.saturating_sub(j),
            move |t, n| {
                let c = base(t, n + j);
                // f^{(j)} has coefficients (i+j)!/i! · c_{i+j}
                (0..=n).map(|i| c[i + j] * falling(i + j, j)).collect()
            },
        )
    }

    /// Normalized Taylor coefficients `f^{(j)}(t)/j!`, `j ≤ n`.
    pub fn taylor(&self, t: f64, n: usize) -> Result<Vec<f64>> {
        if n > self.j_max {
            return Err(Error::DerivativeDepth { needed: n, available: self.j_max });
        }
        Ok((self.taylor)(t, n))
    }

    /// Derivatives `f^{(j)}(t)`, `j ≤ n`.
    pub fn derivatives(&self, t: f64, n: usize) -> Result<Vec<f64>> {
        let c = self.taylor(t, n)?;
        Ok(c.into_iter().enumerate().map(|(j, v)| v * ln_factorial(j).exp()).collect())
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.taylor)(t, 0)[0]
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.domain.0 && t < self.domain.1
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

/// Nested sample points of `[a, b]`: the endpoints, then the base-2 van der Corput sequence.
fn nested_samples(a: f64, b: f64, count: usize) -> Vec<f64> {
    let mut pts = vec![a, b];
    let mut i = 1u64;
    while pts.len() < count {
        let mut x = 0.0;
        let (mut n, mut base) = (i, 0.5);
        while n > 0 {
            if n & 1 == 1 {
                x += base;
            }
            n >>= 1;
            base *= 0.5;
        }
        pts.push(a + (b - a) * x);
        i += 1;
    }
    pts.truncate(count.max(1));
    pts
}

/// `max_{j ≤ j_max} max_t |f^{(j)}(t)| / (R^j (j!)^s)` over nested samples of the domain.
pub fn gevrey_norm_estimate(f: &GevreyFunction, j_max: usize, sample_count: usize) -> Result<f64> {
    if j_max > f.j_max {
        return Err(Error::DerivativeDepth { needed: j_max, available: f.j_max });
    }
    let mut best: f64 = 0.0;
    for t in nested_samples(f.domain.0, f.domain.1, sample_count) {
        let c = f.taylor(t, j_max)?;
        for (j, cj) in c.iter().enumerate() {
            if !cj.is_finite() {
                return Err(param("derivative_oracle", format!("non-finite derivative of order {j} at {t}")));
            }
            let v = cj.abs() * ((1.0 - f.class_s) * ln_factorial(j)).exp() / f.radius_r.powi(j as i32);
            best = best.max(v);
        }
    }
    Ok(best)
}

/// Smooth plateau: `1` on `[-inner, inner]`, `0` outside `(-outer, outer)`,
/// built from the Gevrey-s profile `exp(-x^{-1/(s-1)})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub s: f64,
    pub inner: f64,
    pub outer: f64,
}

impl Plateau {
    pub fn new(s: f64, inner: f64, outer: f64) -> Self {
        assert!(s > 1.0 && inner >= 0.0 && outer > inner, "invalid plateau");
        Self { s, inner, outer }
    }

    /// The base plateau: `1` on `[-1/2, 1/2]`, supported in `[-1, 1]`.
    pub fn unit(s: f64) -> Self {
        Self::new(s, 0.5, 1.0)
    }

    fn psi(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            (-x.powf(-1.0 / (self.s - 1.0))).exp()
        }
    }

    /// Smooth step from 0 (x ≤ 0) to 1 (x ≥ 1).
    pub fn step(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            let a = self.psi(x);
            a / (a + self.psi(1.0 - x))
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.step((self.outer - t.abs()) / (self.outer - self.inner))
    }

    /// Taylor jet of the plateau at `t`.
    pub fn jet(&self, t: f64, order: usize) -> Jet {
        let x = (self.outer - t.abs()) / (self.outer - self.inner);
        if x <= 0.0 {
            return Jet::constant(0.0, order);
        }
        if x >= 1.0 {
            return Jet::constant(1.0, order);
        }
        // x as a function of t near t: slope ∓1/(outer-inner)
        let slope = -t.signum() / (self.outer - self.inner);
        let mut xj = Jet::variable(x, order);
        if order > 0 {
            xj.0[1] = slope;
        }
        let p = -1.0 / (self.s - 1.0);
        let a = (-&xj.powf(p)).exp();
        let one_minus = &Jet::constant(1.0, order) - &xj;
        let b = (-&one_minus.powf(p)).exp();
        a.div(&(&a + &b))
    }
}

/// The family `ζ_{k,D}(t) = b(D k^s t) t^k / k!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpFamily {
    pub d: f64,
    pub s: f64,
    pub plateau: Plateau,
}

impl BumpFamily {
    pub fn new(d: f64, s: f64) -> Result<Self> {
        if !(d >= 1.0 && d.is_finite()) {
            return Err(param("d", format!("must be >= 1, got {d}")));
        }
        if !(s > 1.0) {
            return Err(param("s", format!("must be > 1, got {s}")));
        }
        Ok(Self { d, s, plateau: Plateau::unit(s) })
    }

    /// `D = 2 R 2^s B e`, floored at 1.
    pub fn from_growth_constant(radius_r: f64, b: f64, s: f64) -> Result<Self> {
        Self::new((2.0 * radius_r * 2f64.powf(s) * b * E).max(1.0), s)
    }

    fn scale(&self, k: usize) -> f64 {
        self.d * (k as f64).powf(self.s)
    }

    /// Half-width of the support of `ζ_k`, `(D k^s)^{-1}` for `k ≥ 1`.
    pub fn support_radius(&self, k: usize) -> f64 {
        if k == 0 {
            f64::INFINITY
        } else {
            1.0 / self.scale(k)
        }
    }

    /// `a_{k,D}(t)`.
    pub fn cutoff(&self, k: usize, t: f64) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.plateau.value(self.scale(k) * t)
        }
    }

    pub fn zeta(&self, k: usize, t: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let a = self.cutoff(k, t);
        if a == 0.0 {
            return 0.0;
        }
        let sign = if t < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
        sign * a * (k as f64 * t.abs().ln() - ln_factorial(k)).exp()
    }

    /// Taylor jet of `ζ_k` at `t`.
    pub fn zeta_jet(&self, k: usize, t: f64, order: usize) -> Jet {
        if k == 0 {
            return Jet::constant(1.0, order);
        }
        let sc = self.scale(k);
        let mut a = self.plateau.jet(sc * t, order);
        for (j, c) in a.0.iter_mut().enumerate() {
            *c *= sc.powi(j as i32);
        }
        let x = Jet::variable(t, order);
        let mut mono = Jet::constant(1.0, order);
        for _ in 0..k {
            mono = &mono * &x;
        }
        (&a * &mono).scale((-ln_factorial(k)).exp())
    }
}

/// `ζ_{k,D}` as a callable.
pub fn zeta_bump(k: usize, family: BumpFamily) -> impl Fn(f64) -> f64 + Send + Sync {
    move |t| family.zeta(k, t)
}

/// Largest observed `(sup|ζ_k^{(j)}| / (C^{j+1} D^{j-k} k^{-ks} max(k,j)^{js}))^{1/k}`
/// over `1 ≤ k ≤ k_max`, `j ≤ k + extra_orders`. Independent of `D` for this family.
pub fn estimate_growth_constant(s: f64, k_max: usize, extra_orders: usize, c: f64, samples: usize) -> f64 {
    let fam = BumpFamily::new(1.0, s).expect("valid family");
    let mut b_hat: f64 = 0.0;
    for k in 1..=k_max {
        let order = k + extra_orders;
        let mut sup = vec![0.0f64; order + 1];
        let r = fam.support_radius(k);
        for i in 0..samples {
            let t = -r + 2.0 * r * (i as f64 + 0.5) / samples as f64;
            let jet = fam.zeta_jet(k, t, order);
            for (j, s_j) in sup.iter_mut().enumerate() {
                *s_j = s_j.max(jet.derivative(j).abs());
            }
        }
        for (j, s_j) in sup.iter().enumerate() {
            let kf = k as f64;
            let bound = c.powi(j as i32 + 1) * kf.powf(-kf * s) * (k.max(j) as f64).powf(j as f64 * s);
            b_hat = b_hat.max((s_j / bound).powf(1.0 / kf));
        }
    }
    b_hat
}

/// Growth constant of the `s = 2` family, measured once.
pub fn default_growth_constant() -> f64 {
    static B: OnceLock<f64> = OnceLock::new();
    *B.get_or_init(|| estimate_growth_constant(2.0, 6, 2, 1.0, 400))
}

/// How the extension's `D` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum BumpScale {
    /// `D = 2 R 2^s B e` with the measured growth constant `B`.
    GrowthRule,
    /// A fixed `D ≥ 1`.
    Fixed(f64),
}

/// Almost-analytic extension `f̃(x+iy) = g(y) Σ_{k ≤ K(y)} f^{(k)}(x) i^k ζ_{k,D}(y)`.
#[derive(Debug, Clone)]
pub struct AnalyticExtension {
    pub source: GevreyFunction,
    pub rho: f64,
    pub family: BumpFamily,
    pub cutoff: Plateau,
}

/// Gevrey index of the strip cutoff `g`.
pub const STRIP_CUTOFF_CLASS: f64 = 1.5;

/// Terms below this bound are numerically irrelevant.
const NEGLIGIBLE: f64 = 1e-18;

pub fn almost_analytic_extend(f: &GevreyFunction, rho: f64, scale: BumpScale) -> Result<AnalyticExtension> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(param("rho", format!("must be positive, got {rho}")));
    }
    let family = match scale {
        BumpScale::GrowthRule => BumpFamily::from_growth_constant(f.radius_r, default_growth_constant(), f.class_s)?,
        BumpScale::Fixed(d) => BumpFamily::new(d, f.class_s)?,
    };
    let cutoff = Plateau::new(STRIP_CUTOFF_CLASS, 0.5 * rho, rho);
    Ok(AnalyticExtension { source: f.clone(), rho, family, cutoff })
}

impl AnalyticExtension {
    /// Largest `k` with `ζ_k(y)` not identically zero at height `y`.
    fn support_depth(&self, y: f64) -> usize {
        if y == 0.0 {
            return 0;
        }
        let k = (self.family.d * y.abs()).powf(-1.0 / self.family.s).ceil() as usize;
        k.max(1)
    }

    /// Truncation index `K(y)`: the least term bound `R^k (k!)^s |ζ_k(y)|`, capped by the support.
    pub fn truncation_index(&self, y: f64) -> Result<usize> {
        if y == 0.0 {
            return Ok(0);
        }
        let (r, s) = (self.source.radius_r, self.family.s);
        let depth = self.support_depth(y);
        let cap = depth.min(self.source.j_max);
        let mut best = (0usize, 1.0f64);
        for k in 1..=cap {
            let z = self.family.zeta(k, y).abs();
            if z == 0.0 {
                continue;
            }
            let bound = (k as f64 * r.ln() + s * ln_factorial(k)).exp() * z;
            if bound < best.1 {
                best = (k, bound);
            }
            if bound < NEGLIGIBLE {
                return Ok(k);
            }
        }
        if depth > self.source.j_max && best.0 == cap && best.1 >= NEGLIGIBLE {
            return Err(Error::DerivativeDepth { needed: depth, available: self.source.j_max });
        }
        Ok(best.0)
    }

    /// Evaluates the series with precomputed Taylor coefficients of `f` at `x`.
    pub fn eval_with_taylor(&self, taylor: &[f64], y: f64, depth: usize) -> C64 {
        let g = self.cutoff.value(y);
        if g == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let mut sum = C64::new(taylor[0], 0.0);
        let mut iy = C64::new(1.0, 0.0);
        for (k, c) in taylor.iter().enumerate().take(depth + 1).skip(1) {
            iy *= C64::new(0.0, y);
            let a = self.family.cutoff(k, y);
            if a == 0.0 {
                break;
            }
            sum += iy * (c * a);
        }
        sum * g
    }

    /// Weights `w_k(y) = g(y)(iy)^k a_k(y)`, `k ≤ K(y)`, so that `f̃(x+iy) = Σ F_k(x) w_k(y)`.
    pub fn strip_weights(&self, y: f64) -> Result<Vec<C64>> {
        if y.abs() >= self.rho {
            return Ok(vec![]);
        }
        let depth = self.truncation_index(y)?;
        let g = self.cutoff.value(y);
        let mut out = Vec::with_capacity(depth + 1);
        let mut iy = C64::new(g, 0.0);
        for k in 0..=depth {
            let a = self.family.cutoff(k, y);
            if a == 0.0 {
                break;
            }
            out.push(iy * a);
            iy *= C64::new(0.0, y);
        }
        Ok(out)
    }

    pub fn evaluate(&self, z: C64) -> Result<C64> {
        if !self.source.contains(z.re) {
            return Err(Error::OutsideStrip(format!("{z}")));
        }
        if z.im.abs() >= self.rho {
            return Ok(C64::new(0.0, 0.0));
        }
        let depth = self.truncation_index(z.im)?;
        let taylor = self.source.taylor(z.re, depth)?;
        Ok(self.eval_with_taylor(&taylor, z.im, depth))
    }

    /// Deepest truncation index met for heights `|y| ≥ y_min`.
    pub fn max_depth(&self, y_min: f64) -> Result<usize> {
        let mut best = 0;
        let mut y = self.rho;
        while y >= y_min {
            best = best.max(self.truncation_index(y)?);
            y *= 0.9;
        }
        Ok(best.max(self.truncation_index(y_min)?))
    }

    /// Samples the extension on `Re z × Im z` and writes it in the field layout
    /// (time axis = Re z, space axis = Im z).
    pub fn export_strip(&self, re: (f64, f64, usize), im: (f64, f64, usize), w: impl Write) -> Result<()> {
        let grid = Arc::new(TimeSpaceGrid::new_1d(re, im)?);
        let field = Field::from_fn(&grid, |x, y| self.evaluate(C64::new(x, y[0])).unwrap_or_default());
        write_field(&field, w)
    }
}

const D1_STENCIL: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

fn central_derivative(f: &dyn Fn(f64) -> Result<C64>, x: f64, h: f64) -> Result<C64> {
    let mut s = C64::new(0.0, 0.0);
    for (m, c) in D1_STENCIL.iter().enumerate() {
        let d = (m + 1) as f64 * h;
        s += (f(x + d)? - f(x - d)?) * *c;
    }
    Ok(s / h)
}

/// `|∂_z̄ f̃(z)|` by eighth-order centered differences with step `|Im z|/16`
/// (or `ρ/1024` on the real axis).
pub fn dzbar_defect(ext: &AnalyticExtension, z: C64) -> Result<f64> {
    if z.im.abs() >= ext.rho || !ext.source.contains(z.re) {
        return Err(Error::OutsideStrip(format!("{z}")));
    }
    let h = if z.im == 0.0 { ext.rho / 1024.0 } else { z.im.abs() / 16.0 };
    if h < 1e-300 || z.re + h == z.re {
        return Err(param("step", "finite-difference step underflows"));
    }
    let dx = central_derivative(&|x| ext.evaluate(C64::new(x, z.im)), z.re, h)?;
    let dy = central_derivative(&|y| ext.evaluate(C64::new(z.re, y)), z.im, h)?;
    Ok((0.5 * (dx + C64::i() * dy)).norm())
}

/// `|∂_{Re z}^j f̃(z) − (f^{(j)})~(z)|`, the left side by nested centered differences.
pub fn derivative_commutation_check(f: &GevreyFunction, ext: &AnalyticExtension, j: usize, z: C64) -> Result<f64> {
    if j == 0 {
        return Ok(0.0);
    }
    let depth = ext.truncation_index(z.im)?;
    if j + depth > f.j_max {
        return Err(Error::DerivativeDepth { needed: j + depth, available: f.j_max });
    }
    let h = 0.02;
    fn nested(ext: &AnalyticExtension, j: usize, x: f64, y: f64, h: f64) -> Result<C64> {
        if j == 0 {
            return ext.evaluate(C64::new(x, y));
        }
        central_derivative(&|xx| nested(ext, j - 1, xx, y, h), x, h)
    }
    let lhs = nested(ext, j, z.re, z.im, h)?;
    let dext = AnalyticExtension { source: f.derivative_function(j), ..ext.clone() };
    let rhs = dext.evaluate(z)?;
    Ok((lhs - rhs).norm())
}

/// `[ζ_{k}^{(j)}(0)]_{j,k ≤ n}`, row `j`, column `k`; the identity in exact arithmetic.
pub fn zeta_interpolation_matrix(family: &BumpFamily, n: usize) -> Vec<Vec<f64>> {
    let jets: Vec<Jet> = (0..=n).map(|k| family.zeta_jet(k, 0.0, n)).collect();
    (0..=n).map(|j| jets.iter().map(|jet| jet.derivative(j)).collect()).collect()
}

/// Largest `|ζ_k(t)|` found at `|t| ≥ (D k^s)^{-1}`, sampled on `[r_k, 4 r_k]` for `1 ≤ k ≤ n`.
pub fn zeta_support_leak(family: &BumpFamily, n: usize, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 1..=n {
        let r = family.support_radius(k);
        for i in 0..samples {
            let t = r * (1.0 + 3.0 * i as f64 / samples.max(1) as f64);
            worst = worst.max(family.zeta(k, t).abs()).max(family.zeta(k, -t).abs());
        }
    }
    worst
}

/// `max |f̃(x) − f(x)|` over the real points `xs`.
pub fn restriction_error(ext: &AnalyticExtension, xs: &[f64]) -> Result<f64> {
    xs.iter().try_fold(0.0f64, |m, &x| Ok(m.max((ext.evaluate(C64::new(x, 0.0))? - ext.source.value(x)).norm())))
}

/// `(1/y, |∂_z̄ f̃(x + iy)|)` for each height `y`.
pub fn defect_ladder(ext: &AnalyticExtension, x: f64, heights: &[f64]) -> Result<Vec<(f64, f64)>> {
    heights.iter().map(|&y| Ok((1.0 / y, dzbar_defect(ext, C64::new(x, y))?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_inverse_matches_polynomial_recursion() {
        // f^{(j)} = p_j(1/t) e^{-1/t}, p_{j+1}(y) = y²(p_j(y) − p_j'(y))
        let f = GevreyFunction::exp_inverse();
        let mut p = vec![1.0f64];
        for j in 0..=8 {
            for &t in &[0.3, 0.7, 1.5] {
                let y: f64 = 1.0 / t;
                let pv: f64 = p.iter().enumerate().map(|(i, c)| c * y.powi(i as i32)).sum();
                let exact = pv * (-y).exp();
                let got = f.derivatives(t, j).unwrap()[j];
                assert!((got - exact).abs() <= 1e-10 * exact.abs().max(1e-3), "j={j} t={t}");
            }
            let mut next = vec![0.0; p.len() + 2];
            for (i, c) in p.iter().enumerate() {
                next[i + 2] += c;
                if i > 0 {
                    next[i + 1] -= i as f64 * c;
                }
            }
            p = next;
        }
        assert_eq!(f.derivatives(-0.5, 5).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn polynomial_and_derivative_function() {
        let f = GevreyFunction::polynomial(vec![1.0, 2.0, 3.0]);
        let d = f.derivatives(2.0, 3).unwrap();
        assert_eq!(d, vec![17.0, 14.0, 6.0, 0.0]);
        let df = f.derivative_function(1);
        assert_eq!(df.derivatives(2.0, 2).unwrap(), vec![14.0, 6.0, 0.0]);
    }

    #[test]
    fn gevrey_norm_of_exp_is_e() {
        let f = GevreyFunction::exp().with_domain((-1.0, 1.0));
        let v = gevrey_norm_estimate(&f, 10, 1000).unwrap();
        assert!((v - E).abs() < 1e-12);
        assert_eq!(gevrey_norm_estimate(&GevreyFunction::constant(0.0), 5, 10).unwrap(), 0.0);
    }

    #[test]
    fn gevrey_norm_of_sin_peaks_near_sqrt_m() {
        let m = 30.0;
        let f = GevreyFunction::sin(m).with_domain((-2.0, 2.0));
        let v = gevrey_norm_estimate(&f, 20, 2000).unwrap();
        let peak = (0..=20usize).map(|j| m.powi(j as i32) / ln_factorial(j).exp().powi(2)).fold(0.0, f64::max);
        assert!((v - peak).abs() < 1e-3 * peak);
        let jstar = (0..=20).max_by(|&a, &b| {
            let g = |j: usize| m.powi(j as i32) / ln_factorial(j).exp().powi(2);
            g(a).partial_cmp(&g(b)).unwrap()
        });
        assert!((jstar.unwrap() as f64 - m.sqrt()).abs() <= 1.5);
    }

    #[test]
    fn plateau_shape() {
        let b = Plateau::unit(2.0);
        assert_eq!(b.value(0.3), 1.0);
        assert_eq!(b.value(1.0), 0.0);
        assert!(b.value(0.75) > 0.0 && b.value(0.75) < 1.0);
        let jet = b.jet(0.7, 3);
        let h = 1e-5;
        let fd = (b.value(0.7 + h) - b.value(0.7 - h)) / (2.0 * h);
        assert!((jet.derivative(1) - fd).abs() < 1e-6);
    }

    #[test]
    fn zeta_support_and_values() {
        let fam = BumpFamily::new(3.0, 2.0).unwrap();
        assert_eq!(fam.zeta(0, 5.0), 1.0);
        let r2 = 1.0 / (3.0 * 4.0);
        assert_eq!(fam.zeta(2, r2 * 1.0001), 0.0);
        assert!(fam.zeta(2, r2 * 0.4) > 0.0);
        let t = 0.01;
        assert!((fam.zeta(3, t) - t.powi(3) / 6.0).abs() < 1e-18);
        assert!((fam.zeta(3, -t) + t.powi(3) / 6.0).abs() < 1e-18);
    }

    #[test]
    fn extension_of_linear_function() {
        let f = GevreyFunction::polynomial(vec![0.0, 1.0]);
        let ext = almost_analytic_extend(&f, 1.0, BumpScale::Fixed(2.0)).unwrap();
        let (x, y) = (0.3, 0.05);
        let expect = C64::new(x, ext.family.zeta(1, y)) * ext.cutoff.value(y);
        assert!((ext.evaluate(C64::new(x, y)).unwrap() - expect).norm() < 1e-15);
        assert_eq!(ext.evaluate(C64::new(x, 0.0)).unwrap(), C64::new(x, 0.0));
    }

    #[test]
    fn extension_of_sin_approaches_holomorphic() {
        let f = GevreyFunction::sin(1.0);
        let ext = almost_analytic_extend(&f, 1.0, BumpScale::Fixed(1.0)).unwrap();
        let mut prev = f64::INFINITY;
        for &y in &[0.2, 0.1, 0.05, 0.025] {
            let z = C64::new(0.4, y);
            let err = (ext.evaluate(z).unwrap() - z.sin()).norm();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn constant_defect_vanishes_on_plateau() {
        let ext = almost_analytic_extend(&GevreyFunction::constant(2.0), 1.0, BumpScale::Fixed(1.0)).unwrap();
        assert!(dzbar_defect(&ext, C64::new(0.1, 0.2)).unwrap() <= 1e-10);
        assert!(dzbar_defect(&ext, C64::new(0.1, 2.0)).is_err());
    }

    #[test]
    fn commutation_for_polynomials_and_sin() {
        let f = GevreyFunction::polynomial(vec![0.0, 0.0, 1.0]);
        let ext = almost_analytic_extend(&f, 1.0, BumpScale::Fixed(1.0)).unwrap();
        assert!(derivative_commutation_check(&f, &ext, 1, C64::new(0.4, 0.0)).unwrap() < 1e-9);
        assert_eq!(derivative_commutation_check(&f, &ext, 0, C64::new(0.4, 0.1)).unwrap(), 0.0);
        let s = GevreyFunction::sin(1.0);
        let ext = almost_analytic_extend(&s, 1.0, BumpScale::Fixed(1.0)).unwrap();
        assert!(derivative_commutation_check(&s, &ext, 2, C64::new(0.4, 0.1)).unwrap() < 1e-6);
    }

    #[test]
    fn growth_constant_is_finite() {
        let b = default_growth_constant();
        assert!(b.is_finite() && b > 0.0);
    }
}
