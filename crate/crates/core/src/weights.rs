//! Riemannian geometry of Carleman weights: Christoffel symbols, covariant Hessian,
//! the admissibility quantities `B` and `E`, and the convexification pipeline.
//!
//! Points are `y = (t, x₁, …, x_d)`; matrices indexed by space axes are `d × d`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::schrodinger::Metric;

/// A real C² function of `(t, x)` with exact gradient and Hessian.
pub trait C2Function: Send + Sync {
    /// Space dimension `d`; points have length `1 + d`.
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
    fn hessian(&self, y: &[f64]) -> DMatrix<f64>;
}

/// Quadratic polynomial `g·(y−y₀) + ½(y−y₀)ᵀH(y−y₀)` (plus a constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub origin: Vec<f64>,
    pub constant: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

impl Quadratic {
    pub fn new(origin: Vec<f64>, grad: Vec<f64>, hess: DMatrix<f64>) -> Result<Self> {
        let n = origin.len();
        if grad.len() != n || hess.nrows() != n || hess.ncols() != n || n < 2 {
            return Err(param("quadratic", "coefficient shapes disagree"));
        }
        if (&hess - hess.transpose()).amax() > 1e-14 * (1.0 + hess.amax()) {
            return Err(Error::NonQuadraticWeight);
        }
        Ok(Self { origin, constant: 0.0, grad, hess })
    }

    pub fn affine(origin: Vec<f64>, grad: Vec<f64>) -> Result<Self> {
        let n = origin.len();
        Self::new(origin, grad, DMatrix::zeros(n, n))
    }

    fn shift(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.origin).map(|(a, b)| a - b).collect()
    }
}

impl C2Function for Quadratic {
    fn dim(&self) -> usize {
        self.origin.len() - 1
    }

    fn value(&self, y: &[f64]) -> f64 {
        let z = self.shift(y);
        let n = z.len();
        let mut v = self.constant;
        for i in 0..n {
            v += self.grad[i] * z[i];
            for j in 0..n {
                v += 0.5 * self.hess[(i, j)] * z[i] * z[j];
            }
        }
        v
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let z = self.shift(y);
        (0..z.len()).map(|i| self.grad[i] + (0..z.len()).map(|j| self.hess[(i, j)] * z[j]).sum::<f64>()).collect()
    }

    fn hessian(&self, _: &[f64]) -> DMatrix<f64> {
        self.hess.clone()
    }
}

/// Level-set function `Ψ` with `Ψ(center) = 0`.
#[derive(Clone)]
pub struct SurfaceFunction {
    pub psi: Arc<dyn C2Function>,
    pub center: Vec<f64>,
}

impl std::fmt::Debug for SurfaceFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurfaceFunction").field("center", &self.center).finish()
    }
}

impl SurfaceFunction {
    pub fn new(psi: Arc<dyn C2Function>, center: Vec<f64>) -> Result<Self> {
        if center.len() != psi.dim() + 1 {
            return Err(param("center", "wrong number of coordinates"));
        }
        let v = psi.value(&center);
        if v.abs() > 1e-12 {
            return Err(param("psi", format!("Psi(center) = {v:.3e}, expected 0")));
        }
        Ok(Self { psi, center })
    }

    /// `Ψ(y) = a·(y − center)`.
    pub fn affine(center: Vec<f64>, grad: Vec<f64>) -> Result<Self> {
        let q = Quadratic::affine(center.clone(), grad)?;
        Self::new(Arc::new(q), center)
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.psi.value(y)
    }
}

/// Real quadratic weight `φ` paired with the auxiliary function `f`.
#[derive(Clone)]
pub struct QuadraticWeight {
    pub phi: Quadratic,
    pub f_aux: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for QuadraticWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadraticWeight").field("phi", &self.phi).finish()
    }
}

impl QuadraticWeight {
    /// Fails unless `φ(origin) = 0`.
    pub fn new(phi: Quadratic, f_aux: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if phi.constant.abs() > 1e-12 {
            return Err(param("phi", "phi(origin) must vanish"));
        }
        Ok(Self { phi, f_aux: Arc::new(f_aux) })
    }

    /// `φ = 0`, `f = 0`.
    pub fn zero(dim: usize) -> Self {
        let n = dim + 1;
        let phi = Quadratic::new(vec![0.0; n], vec![0.0; n], DMatrix::zeros(n, n)).expect("shapes agree");
        Self { phi, f_aux: Arc::new(|_| 0.0) }
    }

    pub fn with_f(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.f_aux = Arc::new(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn origin(&self) -> &[f64] {
        &self.phi.origin
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.phi.value(&point(t, x))
    }

    /// `(∂_tφ, ∂_{x₁}φ, …)` at `(t, x)`.
    pub fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.phi.gradient(&point(t, x))
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.phi.hess
    }

    pub fn f(&self, y: &[f64]) -> f64 {
        (self.f_aux)(y)
    }
}

impl C2Function for QuadraticWeight {
    fn dim(&self) -> usize {
        self.phi.dim()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.phi.value(y)
    }
    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.phi.gradient(y)
    }
    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        self.phi.hessian(y)
    }
}

pub(crate) fn point(t: f64, x: &[f64]) -> Vec<f64> {
    std::iter::once(t).chain(x.iter().copied()).collect()
}

/// Christoffel symbols `Γ^i_{jk}`, stored `[i][j][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Christoffel {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }
}

/// Default finite-difference step for metric derivatives.
pub const METRIC_FD_STEP: f64 = 1e-5;

/// `Γ^i_{jk} = ½ g^{il}(∂_j g_{kl} + ∂_k g_{lj} − ∂_l g_{jk})` with centered differences of `g_{..}`.
pub fn christoffel(m: &Metric, x: &[f64], step: f64) -> Result<Christoffel> {
    let d = m.dim();
    let inv = m.coeff(x);
    // dg[l] = ∂_l g_{..}
    let mut dg = Vec::with_capacity(d);
    for l in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[l] += step;
        xm[l] -= step;
        dg.push((m.lower(&xp)? - m.lower(&xm)?) / (2.0 * step));
    }
    m.lower(x)?;
    let mut data = vec![0.0; d * d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += inv[(i, l)] * (dg[j][(k, l)] + dg[k][(l, j)] - dg[l][(j, k)]);
                }
                data[(i * d + j) * d + k] = 0.5 * s;
            }
        }
    }
    Ok(Christoffel { dim: d, data })
}

/// Covariant Hessian in the space variables, `∂²_{ij}f − Γ^k_{ij} ∂_k f`.
pub fn hessian_g(f: &dyn C2Function, m: &Metric, y: &[f64]) -> Result<DMatrix<f64>> {
    let d = m.dim();
    let x = &y[1..];
    let gamma = christoffel(m, x, METRIC_FD_STEP)?;
    let grad = f.gradient(y);
    let full = f.hessian(y);
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let corr: f64 = (0..d).map(|k| gamma.get(k, i, j) * grad[k + 1]).sum();
            h[(i, j)] = full[(i + 1, j + 1)] - corr;
        }
    }
    // symmetrize away finite-difference noise
    Ok((&h + h.transpose()) * 0.5)
}

/// `Δ_g f = g^{ij} Hess(f)_{ij}`.
pub fn laplacian_g(f: &dyn C2Function, m: &Metric, y: &[f64]) -> Result<f64> {
    let h = hessian_g(f, m, y)?;
    Ok(m.coeff(&y[1..]).component_mul(&h).sum())
}

/// `∇_g f = g^{ij} ∂_j f`.
pub fn gradient_g(f: &dyn C2Function, m: &Metric, y: &[f64]) -> Vec<f64> {
    let g = f.gradient(y);
    let dx = nalgebra::DVector::from_iterator(m.dim(), g[1..].iter().copied());
    (m.coeff(&y[1..]) * dx).iter().copied().collect()
}

/// `|∇_g f|²_g = g^{ij} ∂_i f ∂_j f`.
pub fn grad_norm_sq_g(f: &dyn C2Function, m: &Metric, y: &[f64]) -> f64 {
    let g = f.gradient(y);
    let ng = gradient_g(f, m, y);
    ng.iter().zip(&g[1..]).map(|(a, b)| a * b).sum()
}

/// Matrix of `B(X) = 2 Hess φ(X, X̄) − Δ_gφ|X|²_g + f|X|²_g`: `2H + (f − Δ_gφ) G`.
pub fn b_form(m: &Metric, w: &QuadraticWeight, y: &[f64]) -> Result<DMatrix<f64>> {
    let h = hessian_g(w, m, y)?;
    let lap = m.coeff(&y[1..]).component_mul(&h).sum();
    let g = m.lower(&y[1..])?;
    Ok(h * 2.0 + g * (w.f(y) - lap))
}

/// `E = 2 Hess φ(∇_gφ, ∇_gφ) + Δ_gφ |∇_gφ|²_g − f |∇_gφ|²_g`.
pub fn e_scalar(m: &Metric, w: &QuadraticWeight, y: &[f64]) -> Result<f64> {
    let h = hessian_g(w, m, y)?;
    let lap = m.coeff(&y[1..]).component_mul(&h).sum();
    let ng = nalgebra::DVector::from_vec(gradient_g(w, m, y));
    let hess_term = (ng.transpose() * &h * &ng)[(0, 0)];
    let n2 = grad_norm_sq_g(w, m, y);
    Ok(2.0 * hess_term + lap * n2 - w.f(y) * n2)
}

/// `Σ g^{jk}(x₀) ∂_jΨ ∂_kΨ` at the surface center.
pub fn noncharacteristic_value(psi: &SurfaceFunction, m: &Metric, x0: &[f64]) -> f64 {
    grad_norm_sq_g(psi.psi.as_ref(), m, x0)
}

/// Smallest eigenvalue of `B` relative to `G`: `min XᵀBX / XᵀGX`.
pub fn min_generalized_eigenvalue(b: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let chol = g.clone().cholesky().ok_or_else(|| Error::SingularMetric(vec![]))?;
    let l_inv = chol.l().try_inverse().ok_or_else(|| Error::SingularMetric(vec![]))?;
    let m = &l_inv * b * l_inv.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigenvalues().min())
}

/// `φ̌ = e^{λΨ} − 1`.
#[derive(Clone)]
pub struct ExpConvexified {
    pub psi: SurfaceFunction,
    pub lambda: f64,
}

impl C2Function for ExpConvexified {
    fn dim(&self) -> usize {
        self.psi.dim()
    }

    fn value(&self, y: &[f64]) -> f64 {
        (self.lambda * self.psi.value(y)).exp() - 1.0
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let e = (self.lambda * self.psi.value(y)).exp();
        self.psi.psi.gradient(y).iter().map(|g| self.lambda * e * g).collect()
    }

    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let l = self.lambda;
        let e = (l * self.psi.value(y)).exp();
        let g = nalgebra::DVector::from_vec(self.psi.psi.gradient(y));
        (self.psi.psi.hessian(y) + &g * g.transpose() * l) * (l * e)
    }
}

/// Output of [`convexify`].
#[derive(Clone)]
pub struct Convexification {
    pub phi_check: ExpConvexified,
    pub f_aux: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

/// `φ̌ = e^{λΨ} − 1` and `f = 2λ² e^{λΨ} |∇_gΨ|²_g`.
pub fn convexify(psi: &SurfaceFunction, lambda: f64, m: &Metric) -> Result<Convexification> {
    if !(lambda > 0.0) {
        return Err(param("lambda", format!("must be positive, got {lambda}")));
    }
    let phi_check = ExpConvexified { psi: psi.clone(), lambda };
    let (p, metric) = (psi.clone(), m.clone());
    let f_aux = Arc::new(move |y: &[f64]| {
        2.0 * lambda * lambda * (lambda * p.value(y)).exp() * grad_norm_sq_g(p.psi.as_ref(), &metric, y)
    });
    Ok(Convexification { phi_check, f_aux })
}

/// Taylor-2 expansion of `φ̌` at `y₀` minus `δ|y − y₀|²` in all `1 + d` variables.
pub fn taylor2_weight(
    phi_check: &dyn C2Function,
    y0: &[f64],
    delta: f64,
    f_aux: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
) -> Result<QuadraticWeight> {
    if !(delta >= 0.0) {
        return Err(param("delta", format!("must be nonnegative, got {delta}")));
    }
    let n = y0.len();
    let mut phi = Quadratic::new(
        y0.to_vec(),
        phi_check.gradient(y0),
        phi_check.hessian(y0) - DMatrix::identity(n, n) * (2.0 * delta),
    )?;
    phi.constant = phi_check.value(y0);
    if phi.constant.abs() > 1e-12 {
        return Err(param("phi_check", "must vanish at the expansion point"));
    }
    phi.constant = 0.0;
    Ok(QuadraticWeight { phi, f_aux })
}

/// Admissibility demand: constant `C₀` on the ball `B(origin, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityConfig {
    pub c0: f64,
    pub ball_radius: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl AdmissibilityConfig {
    pub fn new(c0: f64, ball_radius: f64) -> Self {
        Self { c0, ball_radius, sample_count: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityRecord {
    pub sample_point: Vec<f64>,
    #[serde(rename = "B_margin")]
    pub b_margin: f64,
    #[serde(rename = "E_margin")]
    pub e_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub min_b_eigen_margin: f64,
    pub min_e_margin: f64,
    pub min_grad_norm_sq: f64,
    pub skipped_nonsmooth: usize,
    pub pass: bool,
    pub records: Vec<AdmissibilityRecord>,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut x, mut f) = (0.0, 1.0 / base as f64);
    while i > 0 {
        x += (i % base) as f64 * f;
        i /= base;
        f /= base as f64;
    }
    x
}

/// Deterministic points of the closed ball: center, axis extremes, then a
/// randomly shifted Halton sequence restricted to the ball.
pub fn ball_samples(center: &[f64], r: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 3] = [2, 3, 5];
    let n = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mut pts = vec![center.to_vec()];
    for a in 0..n {
        for s in [-1.0, 1.0] {
            let mut p = center.to_vec();
            p[a] += s * r;
            pts.push(p);
        }
    }
    let mut i = 1u64;
    while pts.len() < count.max(pts.len()) {
        let u: Vec<f64> = (0..n).map(|a| (radical_inverse(i, PRIMES[a]) + shift[a]).fract() * 2.0 - 1.0).collect();
        i += 1;
        if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            pts.push(center.iter().zip(&u).map(|(c, v)| c + r * v).collect());
        }
    }
    pts
}

/// Checks `B ≥ C₀|X|²_g` and `E ≥ C₀|∇_gφ|²_g` on samples of `B(origin, r)`.
pub fn admissibility_check(m: &Metric, w: &QuadraticWeight, cfg: &AdmissibilityConfig) -> Result<AdmissibilityReport> {
    if !(cfg.ball_radius > 0.0 && cfg.c0 >= 0.0) {
        return Err(param("admissibility", "need r > 0 and C0 >= 0"));
    }
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut min_grad = f64::INFINITY;
    for y in ball_samples(w.origin(), cfg.ball_radius, cfg.sample_count, cfg.seed) {
        if !m.is_smooth_at(&y[1..]) {
            skipped += 1;
            continue;
        }
        let b = b_form(m, w, &y)?;
        let g = m.lower(&y[1..])?;
        let b_margin = min_generalized_eigenvalue(&b, &g)? - cfg.c0;
        let n2 = grad_norm_sq_g(w, m, &y);
        let e_margin = e_scalar(m, w, &y)? - cfg.c0 * n2;
        min_grad = min_grad.min(n2);
        records.push(AdmissibilityRecord { sample_point: y, b_margin, e_margin });
    }
    let min_b = records.iter().map(|r| r.b_margin).fold(f64::INFINITY, f64::min);
    let min_e = records.iter().map(|r| r.e_margin).fold(f64::INFINITY, f64::min);
    Ok(AdmissibilityReport {
        min_b_eigen_margin: min_b,
        min_e_margin: min_e,
        min_grad_norm_sq: min_grad,
        skipped_nonsmooth: skipped,
        pass: min_b >= 0.0 && min_e >= 0.0 && min_grad > 0.0,
        records,
    })
}

/// A convexified, Taylor-truncated weight with its admissibility report.
#[derive(Debug, Clone)]
pub struct BuiltWeight {
    pub lambda: f64,
    pub delta: f64,
    pub weight: QuadraticWeight,
    pub report: AdmissibilityReport,
}

/// Convexify `Ψ` with `λ`, truncate at the surface center and check admissibility.
pub fn build_weight(
    psi: &SurfaceFunction,
    m: &Metric,
    lambda: f64,
    delta: f64,
    cfg: &AdmissibilityConfig,
) -> Result<BuiltWeight> {
    let conv = convexify(psi, lambda, m)?;
    let weight = taylor2_weight(&conv.phi_check, &psi.center, delta, conv.f_aux)?;
    let report = admissibility_check(m, &weight, cfg)?;
    Ok(BuiltWeight { lambda, delta, weight, report })
}

/// Smallest `λ = 2^p`, `p ≤ max_power`, whose weight passes with the given config.
/// `delta` defaults to `0.01 r²`.
pub fn auto_lambda(
    psi: &SurfaceFunction,
    m: &Metric,
    cfg: &AdmissibilityConfig,
    delta: Option<f64>,
    max_power: u32,
) -> Result<BuiltWeight> {
    let delta = delta.unwrap_or(0.01 * cfg.ball_radius * cfg.ball_radius);
    let mut last = None;
    for p in 0..=max_power {
        let built = build_weight(psi, m, 2f64.powi(p as i32), delta, cfg)?;
        if built.report.pass {
            return Ok(built);
        }
        last = Some(built);
    }
    let r = last.expect("at least one lambda tried").report;
    Err(Error::Inadmissible(format!(
        "no lambda <= 2^{max_power} passes: min B margin {:.3e}, min E margin {:.3e}",
        r.min_b_eigen_margin, r.min_e_margin
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(origin: Vec<f64>, grad: Vec<f64>, hess: Vec<f64>) -> Quadratic {
        let n = origin.len();
        Quadratic::new(origin, grad, DMatrix::from_row_slice(n, n, &hess)).unwrap()
    }

    #[test]
    fn flat_christoffel_vanishes() {
        let g = christoffel(&Metric::flat(2), &[0.3, -0.2], METRIC_FD_STEP).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conformal_christoffel_matches_hand_formula() {
        // g = e^{2f} δ with f = x₁: Γ^i_{jk} = δ_ij ∂_k f + δ_ik ∂_j f − δ_jk ∂_i f
        let m = Metric::conformal_exp(2);
        let g = christoffel(&m, &[0.1, 0.4], METRIC_FD_STEP).unwrap();
        let df = [1.0, 0.0];
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let exact = delta(i, j) * df[k] + delta(i, k) * df[j] - delta(j, k) * df[i];
                    assert!((g.get(i, j, k) - exact).abs() < 1e-8, "{i}{j}{k}");
                }
            }
        }
    }

    #[test]
    fn christoffel_symmetric_for_lipschitz_metric() {
        for m in [Metric::lipschitz_sin(2), Metric::anisotropic_cos()] {
            let g = christoffel(&m, &[0.7, 0.2], METRIC_FD_STEP).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        assert!((g.get(i, j, k) - g.get(i, k, j)).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn hessians_of_simple_weights() {
        let m = Metric::flat(2);
        let q = quad(vec![0.0; 3], vec![0.0; 3], vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
        let h = hessian_g(&q, &m, &[0.0, 0.3, 0.1]).unwrap();
        assert!((h - DMatrix::identity(2, 2) * 2.0).amax() < 1e-14);
        let lin = Quadratic::affine(vec![0.0; 3], vec![0.0, 1.0, 2.0]).unwrap();
        assert!(hessian_g(&lin, &m, &[0.0, 0.3, 0.1]).unwrap().amax() == 0.0);
    }

    #[test]
    fn hessian_on_conformal_metric() {
        // Ψ = x₁²: Hess_ij = 2δ_i1δ_j1 − Γ^1_{ij}·2x₁, Γ^1_{11} = 1, Γ^1_{22} = −1
        let m = Metric::conformal_exp(2);
        let q = quad(vec![0.0; 3], vec![0.0; 3], vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let x1 = 0.3;
        let h = hessian_g(&q, &m, &[0.0, x1, 0.5]).unwrap();
        assert!((h[(0, 0)] - (2.0 - 2.0 * x1)).abs() < 1e-8);
        assert!((h[(1, 1)] - 2.0 * x1).abs() < 1e-8);
        assert!(h[(0, 1)].abs() < 1e-8);
    }

    #[test]
    fn laplacian_matches_divergence_form() {
        // Δ_g f = (1/√g) ∂_i(√g g^{ij} ∂_j f), evaluated by nested finite differences
        let m = Metric::anisotropic_cos();
        let q = quad(vec![0.0; 3], vec![0.0, 0.5, -1.0], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.3, 0.0, 0.3, -0.4]);
        let y = [0.0, 0.4, 0.2];
        let flux = |x: &[f64], i: usize| {
            let grad = q.gradient(&[0.0, x[0], x[1]]);
            let c = m.coeff(x);
            m.sqrt_det(x) * (0..2).map(|j| c[(i, j)] * grad[j + 1]).sum::<f64>()
        };
        let h = 1e-4;
        let mut div = 0.0;
        for i in 0..2 {
            let mut xp = vec![y[1], y[2]];
            let mut xm = xp.clone();
            xp[i] += h;
            xm[i] -= h;
            div += (flux(&xp, i) - flux(&xm, i)) / (2.0 * h);
        }
        div /= m.sqrt_det(&y[1..]);
        assert!((laplacian_g(&q, &m, &y).unwrap() - div).abs() < 1e-6);
    }

    #[test]
    fn b_and_e_hand_values() {
        let m = Metric::flat(2);
        let w = QuadraticWeight::new(quad(vec![0.0; 3], vec![0.0; 3], vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]), |_| 0.0).unwrap();
        let y = [0.0, 0.3, -0.4];
        assert!(b_form(&m, &w, &y).unwrap().amax() < 1e-14);
        let r2 = 0.25;
        assert!((e_scalar(&m, &w, &y).unwrap() - 32.0 * r2).abs() < 1e-12);
        let lin = QuadraticWeight::new(Quadratic::affine(vec![0.0; 3], vec![0.0, 1.0, 1.0]).unwrap(), |_| 1.0).unwrap();
        assert!((b_form(&m, &lin, &y).unwrap() - DMatrix::identity(2, 2)).amax() < 1e-14);
        let lin0 = lin.clone().with_f(|_| 0.0);
        assert_eq!(e_scalar(&m, &lin0, &y).unwrap(), 0.0);
        let shifted = lin.clone().with_f(|_| 3.5);
        let n2 = grad_norm_sq_g(&lin, &m, &y);
        let diff = e_scalar(&m, &shifted, &y).unwrap() - e_scalar(&m, &lin, &y).unwrap();
        assert!((diff + 2.5 * n2).abs() < 1e-12);
    }

    #[test]
    fn noncharacteristic_values() {
        let m = Metric::flat(1);
        assert_eq!(noncharacteristic_value(&SurfaceFunction::affine(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap(), &m, &[0.0, 0.0]), 1.0);
        assert_eq!(noncharacteristic_value(&SurfaceFunction::affine(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap(), &m, &[0.0, 0.0]), 0.0);
        let g = Metric::constant(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0])));
        let psi = SurfaceFunction::affine(vec![0.0; 3], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(noncharacteristic_value(&psi, &g, &[0.0; 3]), 2.0);
    }

    #[test]
    fn convexify_values() {
        let m = Metric::flat(1);
        let psi = SurfaceFunction::affine(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap();
        let c = convexify(&psi, 2.0, &m).unwrap();
        assert_eq!(c.phi_check.value(&[0.0, 0.0]), 0.0);
        assert_eq!((c.f_aux)(&[0.0, 0.0]), 8.0);
    }

    #[test]
    fn taylor2_of_exponential() {
        let m = Metric::flat(1);
        let psi = SurfaceFunction::affine(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap();
        let c = convexify(&psi, 1.0, &m).unwrap();
        let w = taylor2_weight(&c.phi_check, &[0.0, 0.0], 0.0, c.f_aux).unwrap();
        for x in [-0.3, 0.2, 0.5] {
            assert!((w.value(0.7, &[x]) - (x + x * x / 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_weight_fails_admissibility() {
        let m = Metric::flat(1);
        let w = QuadraticWeight::new(Quadratic::affine(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap(), |_| 0.0).unwrap();
        let r = admissibility_check(&m, &w, &AdmissibilityConfig::new(1.0, 0.1)).unwrap();
        assert!(!r.pass);
        assert!((r.min_b_eigen_margin + 1.0).abs() < 1e-12);
    }

    #[test]
    fn convexified_weight_passes_and_c0_monotone() {
        let m = Metric::flat(1);
        let psi = SurfaceFunction::affine(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap();
        let cfg = AdmissibilityConfig::new(1.0, 0.1);
        let built = auto_lambda(&psi, &m, &cfg, None, 8).unwrap();
        assert!(built.report.pass);
        assert_eq!(built.lambda, 2.0);
        let weaker = admissibility_check(&m, &built.weight, &AdmissibilityConfig { c0: 0.0, ..cfg }).unwrap();
        assert!(weaker.pass);
    }

    #[test]
    fn ball_samples_stay_in_ball() {
        let pts = ball_samples(&[1.0, -1.0], 0.5, 100, 3);
        assert_eq!(pts.len(), 100);
        for p in &pts {
            assert!(((p[0] - 1.0).powi(2) + (p[1] + 1.0).powi(2)).sqrt() <= 0.5 + 1e-12);
        }
        assert_eq!(pts, ball_samples(&[1.0, -1.0], 0.5, 100, 3));
    }
}
