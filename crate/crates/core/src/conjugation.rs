//! The weight operator `Q = e^{-μ|D_t|²/(2τ³)} e^{τφ}`, exact conjugation identities,
//! the Weyl-quantized Gevrey conjugate `F_h`, its kernel oracle, and the
//! disjoint-support smallness of the Gaussian multiplier.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::gevrey::{almost_analytic_extend, AnalyticExtension, BumpScale, GevreyFunction, Plateau};
use crate::grid::{apply_time_symbol, besov_smoother, dt_apply, gaussian_time_multiplier, signed_bin, Field, TimeSpaceGrid};
use crate::quadrature::{integrate, integrate_pieces};
use crate::schrodinger::{Density, Metric, Schrodinger, SpatialScheme};
use crate::weights::QuadraticWeight;

/// Largest exponent accepted in `e^{τφ}`.
const MAX_EXPONENT: f64 = 700.0;

/// `μ`, `τ` and the semiclassical parameter `h = μ/τ³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugatorParams {
    pub mu: f64,
    pub tau: f64,
    pub h: f64,
}

impl ConjugatorParams {
    pub fn new(mu: f64, tau: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(param("mu", format!("must be positive, got {mu}")));
        }
        if !(tau >= 1.0 && tau.is_finite()) {
            return Err(param("tau", format!("must be >= 1, got {tau}")));
        }
        Ok(Self { mu, tau, h: mu / tau.powi(3) })
    }

    /// `h`-parameterization, realized as `μ = h`, `τ = 1`.
    pub fn from_h(h: f64) -> Result<Self> {
        Self::new(h, 1.0)
    }

    /// The Gaussian parameter `ς = 1/h`.
    pub fn varsigma(&self) -> f64 {
        1.0 / self.h
    }
}

/// `Q u = e^{-(h/2)|D_t|²}(e^{τφ} u)`.
pub fn apply_q(u: &Field, w: &QuadraticWeight, p: &ConjugatorParams) -> Result<Field> {
    let g = u.grid().clone();
    let ns = g.n_space();
    let points = g.space_points();
    let exponent = |it: usize, ix: usize| p.tau * w.value(g.t(it), &points[ix]);
    let worst = u
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > 0.0)
        .map(|(i, _)| exponent(i / ns, i % ns))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > MAX_EXPONENT {
        return Err(Error::WeightOverflow(worst));
    }
    let weighted = u.map_indexed(|v, it, ix| if v.norm() > 0.0 { v * exponent(it, ix).exp() } else { v });
    gaussian_time_multiplier(&weighted, p.h)
}

fn check_time_margin(u: &Field) -> Result<()> {
    let g = u.grid();
    let ns = g.n_space();
    let cut = 1e-13 * u.max_abs();
    let edge = |it: usize| u.values()[it * ns..(it + 1) * ns].iter().any(|v| v.norm() > cut);
    if cut > 0.0 && (edge(0) || edge(g.n_t - 1)) {
        return Err(param("u", "support reaches the edge of the box"));
    }
    Ok(())
}

fn relative(diff: &Field, u: &Field, volume: Option<&[f64]>) -> f64 {
    let n = match volume {
        Some(v) => u.l2_norm_weighted(v),
        None => u.l2_norm(),
    };
    if n == 0.0 {
        return 0.0;
    }
    let d = match volume {
        Some(v) => diff.l2_norm_weighted(v),
        None => diff.l2_norm(),
    };
    d / n
}

/// `‖e^{-|D_t|²/(2ς)}(tu) − (t + iD_t/ς) e^{-|D_t|²/(2ς)} u‖ / ‖u‖`.
pub fn residual_gaussian_conjugation(u: &Field, varsigma: f64) -> Result<f64> {
    if !(varsigma > 0.0 && varsigma.is_finite()) {
        return Err(param("varsigma", format!("must be positive, got {varsigma}")));
    }
    check_time_margin(u)?;
    let g = u.grid().clone();
    let h = 1.0 / varsigma;
    let tu = u.map_indexed(|v, it, _| v * g.t(it));
    let lhs = gaussian_time_multiplier(&tu, h)?;
    let gu = gaussian_time_multiplier(u, h)?;
    let rhs = gu.map_indexed(|v, it, _| v * g.t(it)).add(&dt_apply(&gu).scale(C64::new(0.0, h)));
    Ok(relative(&lhs.sub(&rhs), u, None))
}

/// `‖Q(P u) − P_{φ,μ}(Q u)‖ / ‖u‖` in the Riemannian volume.
pub fn residual_conjugated_operator(
    u: &Field,
    m: &Metric,
    w: &QuadraticWeight,
    p: &ConjugatorParams,
    scheme: SpatialScheme,
) -> Result<f64> {
    check_time_margin(u)?;
    let op = Schrodinger::new(m, u.grid(), scheme, Density::Riemannian)?;
    let lhs = apply_q(&op.apply_p0(u), w, p)?;
    let rhs = op.apply_p_phi_mu(&apply_q(u, w, p)?, w, p.mu, p.tau)?;
    Ok(relative(&lhs.sub(&rhs), u, Some(op.volume())))
}

/// Time cutoffs `χ, θ` and the frequency cutoff `η`, scaled from fixed profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSuite {
    pub t0: f64,
    pub r: f64,
    pub r0: f64,
    pub rho: f64,
    pub chi0: Plateau,
    pub theta0: Plateau,
    pub eta0: Plateau,
}

impl CutoffSuite {
    /// Requires `0 < r < min(r₀/4, ρ/3)`.
    pub fn new(t0: f64, r: f64, r0: f64, rho: f64) -> Result<Self> {
        if !(r > 0.0 && r < (r0 / 4.0).min(rho / 3.0)) {
            return Err(param("r", format!("need 0 < r < min(r0/4, rho/3), got r={r}, r0={r0}, rho={rho}")));
        }
        Ok(Self {
            t0,
            r,
            r0,
            rho,
            chi0: Plateau::new(2.0, 3.2, 3.8),
            theta0: Plateau::new(2.0, 0.25, 0.9),
            eta0: Plateau::new(2.0, 2.2, 2.8),
        })
    }

    pub fn chi(&self, t: f64) -> f64 {
        self.chi0.value((t - self.t0) / self.r)
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.theta0.value((t - self.t0) / self.r)
    }

    pub fn eta(&self, xi: f64) -> f64 {
        self.eta0.value(xi / self.r)
    }

    /// `χ` is supported in `[t₀ − chi_radius, t₀ + chi_radius]`.
    pub fn chi_radius(&self) -> f64 {
        self.chi0.outer * self.r
    }

    pub fn theta_radius(&self) -> f64 {
        self.theta0.outer * self.r
    }

    /// `η(h^{2/3}ξ)` vanishes for `|ξ| ≥` this.
    pub fn band(&self, h: f64) -> f64 {
        self.eta0.outer * self.r * h.powf(-2.0 / 3.0)
    }

    /// `η(h^{2/3}ξ) = 1` for `|ξ| ≤` this.
    pub fn plateau_band(&self, h: f64) -> f64 {
        self.eta0.inner * self.r * h.powf(-2.0 / 3.0)
    }
}

/// A symbol `a(t, ξ)` sampled column by column.
pub trait WeylSymbol: Sync {
    /// Writes `a(t, ξ_m)` into `out[m]`.
    fn column(&self, t: f64, xi: &[f64], out: &mut [C64]) -> Result<()>;
    /// `sup |ξ|` over the ξ-support, `∞` if unbounded.
    fn band(&self) -> f64;
    /// Oversampling factor of the frequency lattice, see [`weyl_lattice`].
    fn padding(&self) -> usize {
        1
    }
}

/// A symbol given in closed form.
pub struct ClosedFormSymbol<F> {
    pub symbol: F,
    pub band: f64,
}

impl<F: Fn(f64, f64) -> C64 + Sync> WeylSymbol for ClosedFormSymbol<F> {
    fn column(&self, t: f64, xi: &[f64], out: &mut [C64]) -> Result<()> {
        for (o, &x) in out.iter_mut().zip(xi) {
            *o = (self.symbol)(t, x);
        }
        Ok(())
    }

    fn band(&self) -> f64 {
        self.band
    }
}

/// Oversampling of the lattice of [`ConjugateSymbol`]. The cutoffs in `ξ` have slowly
/// decaying Fourier transforms, so the kernel needs a period well beyond `2T`.
pub const FH_LATTICE_PADDING: usize = 4;

/// Frequency lattice used by [`weyl_quantize`]: `M = 2 n_t pad` points of spacing `2π/(M Δt)`.
/// The kernel is then periodic in `t − s` with period `M Δt`.
pub fn weyl_lattice(grid: &TimeSpaceGrid, pad: usize) -> Vec<f64> {
    let m = 2 * grid.n_t * pad.max(1);
    (0..m).map(|k| 2.0 * PI * signed_bin(k, m) as f64 / (m as f64 * grid.dt())).collect()
}

/// `op^w(a)` along `t`, with `x` a passive slot.
///
/// The kernel `(1/2π)∫ e^{i(t−s)ξ} a((t+s)/2, ξ) dξ` is evaluated at every midpoint of
/// the time grid by an inverse FFT over [`weyl_lattice`]; the `s`-integral is the grid sum.
pub fn weyl_quantize(a: &(impl WeylSymbol + ?Sized), u: &Field) -> Result<Field> {
    let g = u.grid().clone();
    let (n, ns) = (g.n_t, g.n_space());
    let m_len = 2 * n * a.padding().max(1);
    let nyquist = g.nyquist_t();
    if a.band() > nyquist {
        return Err(Error::Nyquist { needed: a.band(), nyquist });
    }
    let xi = weyl_lattice(&g, a.padding());
    let fft = FftPlanner::new().plan_fft_inverse(m_len);
    let vals = u.values();
    let zero = C64::new(0.0, 0.0);
    // fixed chunks summed in order, so the result does not depend on the thread schedule
    let mids: Vec<usize> = (0..2 * n - 1).collect();
    let chunk = mids.len().div_ceil(64).max(1);
    let partials = mids
        .par_chunks(chunk)
        .map(|ps| -> Result<Vec<C64>> {
            let mut acc = vec![zero; n * ns];
            let mut col = vec![zero; m_len];
            for &p in ps {
                let t = g.t_start + 0.5 * p as f64 * g.dt();
                a.column(t, &xi, &mut col)?;
                if col.iter().all(|c| *c == zero) {
                    continue;
                }
                fft.process(&mut col);
                let (lo, hi) = (p.saturating_sub(n - 1), p.min(n - 1));
                for j in lo..=hi {
                    let i = p - j;
                    let q = (i as isize - j as isize).rem_euclid(m_len as isize) as usize;
                    let k = col[q] / m_len as f64;
                    for ix in 0..ns {
                        acc[i * ns + ix] += k * vals[j * ns + ix];
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![zero; n * ns];
    for part in &partials {
        acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
    }
    Field::from_values(&g, acc)
}

/// Samples of `f̃^r(t + ihξ) = χ(t) η(h^{2/3}ξ) f̃(t + ihξ)` in factorized form:
/// per-ξ weights of the extension series and per-t Taylor coefficients of `f`.
#[derive(Debug, Clone)]
pub struct ConjugateSymbol {
    pub h: f64,
    pub cutoffs: CutoffSuite,
    pub extension: AnalyticExtension,
    lattice: Vec<f64>,
    weights: Vec<Vec<C64>>,
    depth: usize,
}

/// Builds the symbol of `F_h` on the lattice of `grid`, extending `f` with bump scale `scale`.
pub fn build_fh(f: &GevreyFunction, cs: &CutoffSuite, h: f64, grid: &TimeSpaceGrid, scale: BumpScale) -> Result<ConjugateSymbol> {
    if !(h > 0.0 && h < 1.0) {
        return Err(param("h", format!("must lie in (0, 1), got {h}")));
    }
    let band = cs.band(h);
    if band > grid.nyquist_t() {
        return Err(Error::Nyquist { needed: band, nyquist: grid.nyquist_t() });
    }
    let height = h * band;
    if height >= cs.rho {
        return Err(Error::StripTooThin { needed: height, rho: cs.rho });
    }
    let lo = cs.t0 - cs.chi_radius();
    let hi = cs.t0 + cs.chi_radius();
    if !(f.contains(lo) && f.contains(hi)) {
        return Err(param("f", format!("domain {:?} does not cover [{lo}, {hi}]", f.domain)));
    }
    let extension = almost_analytic_extend(f, cs.rho, scale)?;
    let lattice = weyl_lattice(grid, FH_LATTICE_PADDING);
    let weights = lattice
        .par_iter()
        .map(|&xi| {
            let e = cs.eta(h.powf(2.0 / 3.0) * xi);
            if e == 0.0 {
                return Ok(vec![]);
            }
            Ok(extension.strip_weights(h * xi)?.into_iter().map(|w| w * e).collect())
        })
        .collect::<Result<Vec<Vec<C64>>>>()?;
    let depth = weights.iter().map(|w| w.len()).max().unwrap_or(1).saturating_sub(1);
    Ok(ConjugateSymbol { h, cutoffs: *cs, extension, lattice, weights, depth })
}

impl ConjugateSymbol {
    /// Largest series depth used on the lattice.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `f̃^r(t + ihξ)` at an arbitrary point.
    pub fn evaluate(&self, t: f64, xi: f64) -> Result<C64> {
        let c = self.cutoffs.chi(t) * self.cutoffs.eta(self.h.powf(2.0 / 3.0) * xi);
        if c == 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        Ok(self.extension.evaluate(C64::new(t, self.h * xi))? * c)
    }

    /// `sup |f̃^r|` over the midpoints of `grid` and the lattice.
    pub fn sup_abs(&self, grid: &TimeSpaceGrid) -> Result<f64> {
        let mut col = vec![C64::new(0.0, 0.0); self.lattice.len()];
        let mut best = 0.0f64;
        for p in 0..2 * grid.n_t - 1 {
            self.column(grid.t_start + 0.5 * p as f64 * grid.dt(), &self.lattice, &mut col)?;
            best = col.iter().map(|c| c.norm()).fold(best, f64::max);
        }
        Ok(best)
    }
}

impl WeylSymbol for ConjugateSymbol {
    fn column(&self, t: f64, xi: &[f64], out: &mut [C64]) -> Result<()> {
        if xi.len() != self.lattice.len() || xi.first() != self.lattice.first() {
            return Err(Error::Shape);
        }
        let c = self.cutoffs.chi(t);
        if c == 0.0 {
            out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
            return Ok(());
        }
        let taylor = self.extension.source.taylor(t, self.depth)?;
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(&taylor).map(|(wk, fk)| wk * *fk).sum::<C64>() * c;
        }
        Ok(())
    }

    fn band(&self) -> f64 {
        self.cutoffs.band(self.h)
    }

    fn padding(&self) -> usize {
        FH_LATTICE_PADDING
    }
}

fn sample_f_theta(f: &GevreyFunction, cs: &CutoffSuite, g: &TimeSpaceGrid) -> Vec<(f64, f64)> {
    (0..g.n_t)
        .map(|it| {
            let th = cs.theta(g.t(it));
            (th, if th == 0.0 { 0.0 } else { f.value(g.t(it)) })
        })
        .collect()
}

/// `χ F_h e^{-(h/2)|D_t|²} θu` and `e^{-(h/2)|D_t|²} fθu`.
fn conjugation_sides(fh: &ConjugateSymbol, f: &GevreyFunction, u: &Field) -> Result<(Field, Field)> {
    let cs = &fh.cutoffs;
    let g = u.grid().clone();
    let ft = sample_f_theta(f, cs, &g);
    let theta_u = u.map_indexed(|v, it, _| v * ft[it].0);
    let f_theta_u = u.map_indexed(|v, it, _| v * ft[it].0 * ft[it].1);
    let lhs = weyl_quantize(fh, &gaussian_time_multiplier(&theta_u, fh.h)?)?.map_indexed(|v, it, _| v * cs.chi(g.t(it)));
    let rhs = gaussian_time_multiplier(&f_theta_u, fh.h)?;
    Ok((lhs, rhs))
}

/// `χ F_h e^{-(h/2)|D_t|²} θu − e^{-(h/2)|D_t|²} fθu` for a prebuilt symbol.
pub fn conjugation_defect(fh: &ConjugateSymbol, f: &GevreyFunction, u: &Field) -> Result<Field> {
    let (lhs, rhs) = conjugation_sides(fh, f, u)?;
    Ok(lhs.sub(&rhs))
}

/// `R_h u = χ F_h e^{-(h/2)|D_t|²} θu − χ e^{-(h/2)|D_t|²} fθu`, the operator with kernel `K_h`.
pub fn apply_rh(fh: &ConjugateSymbol, f: &GevreyFunction, u: &Field) -> Result<Field> {
    let (lhs, rhs) = conjugation_sides(fh, f, u)?;
    let g = u.grid().clone();
    let cs = fh.cutoffs;
    Ok(lhs.sub(&rhs.map_indexed(|v, it, _| v * cs.chi(g.t(it)))))
}

/// `‖χ F_h e^{-(h/2)|D_t|²} θu − e^{-(h/2)|D_t|²} fθu‖ / ‖u‖_{H^{-k}}`, normalized so the
/// `k = 0` value is the operator gain on `u`.
pub fn conjugation_residual(f: &GevreyFunction, u: &Field, cs: &CutoffSuite, h: f64, k: u32, scale: BumpScale) -> Result<f64> {
    let fh = build_fh(f, cs, h, u.grid(), scale)?;
    conjugation_residual_with(&fh, f, u, k)
}

/// [`conjugation_residual`] with a prebuilt symbol.
pub fn conjugation_residual_with(fh: &ConjugateSymbol, f: &GevreyFunction, u: &Field, k: u32) -> Result<f64> {
    let norm = besov_smoother(u, k).l2_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(conjugation_defect(fh, f, u)?.l2_norm() / norm)
}

/// Tolerances of the kernel quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelQuadrature {
    pub abs_tol: f64,
    pub max_pieces: usize,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self { abs_tol: 1e-11, max_pieces: 4000 }
    }
}

/// `K_h(t, s) = −K_{1,h}/(2π) + C_h K_{2,h}` by direct adaptive quadrature.
pub fn kernel_oracle_rh(
    cs: &CutoffSuite,
    ext: &AnalyticExtension,
    h: f64,
    t: f64,
    s: f64,
    q: KernelQuadrature,
) -> Result<C64> {
    let (chi_t, theta_s) = (cs.chi(t), cs.theta(s));
    if chi_t == 0.0 || theta_s == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let f = &ext.source;
    let fs = f.value(s);
    let h23 = h.powf(2.0 / 3.0);
    let (inner_band, band) = (cs.plateau_band(h), cs.band(h));

    // K_1: the even integrand lives on |ξ| ≥ inner_band; the Gaussian is below e^{-60} past xi_max
    let xi_max = (120.0 / h).sqrt().max(band);
    let k1_integrand = |xi: f64| C64::new(2.0 * (1.0 - cs.eta(h23 * xi)) * (-0.5 * h * xi * xi).exp() * ((s - t) * xi).cos(), 0.0);
    let k1 = integrate_pieces(k1_integrand, &[inner_band, band, xi_max], q.abs_tol, 0.0, q.max_pieces)?.value;
    let k1 = k1 * (chi_t * theta_s * fs);

    // K_2: w-integral against the Gaussian of width √h around s, then the ξ-integral
    let half = (2.0 * 40.0 * h).sqrt();
    let inner = |xi: f64| -> Result<C64> {
        let e = cs.eta(h23 * xi);
        if e == 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        let weights = ext.strip_weights(h * xi)?;
        let depth = weights.len().saturating_sub(1);
        let err = std::cell::Cell::new(None);
        let integrand = |w: f64| {
            let x = 0.5 * (t + w);
            let c = cs.chi(x);
            if c == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let taylor = match f.taylor(x, depth) {
                Ok(v) => v,
                Err(e) => {
                    err.set(Some(e.to_string()));
                    return C64::new(0.0, 0.0);
                }
            };
            let ft: C64 = weights.iter().zip(&taylor).map(|(wk, fk)| wk * *fk).sum();
            ft * (c * e * (-(w - s) * (w - s) / (2.0 * h)).exp()) * C64::from_polar(1.0, (t - w) * xi)
        };
        let v = integrate(integrand, s - half, s + half, 0.1 * q.abs_tol, 0.0, q.max_pieces)?.value;
        if let Some(m) = err.take() {
            return Err(Error::OutsideStrip(m));
        }
        let exact = C64::from_polar(e * fs * (2.0 * PI * h).sqrt() * (-0.5 * h * xi * xi).exp(), (t - s) * xi);
        Ok(v - exact)
    };
    let failure = std::sync::Mutex::new(None);
    let outer = |xi: f64| match inner(xi) {
        Ok(v) => v,
        Err(e) => {
            failure.lock().expect("poisoned").get_or_insert(e);
            C64::new(0.0, 0.0)
        }
    };
    let k2 = integrate_pieces(outer, &[-band, -inner_band, 0.0, inner_band, band], q.abs_tol, 0.0, q.max_pieces)?.value;
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    let k2 = k2 * (chi_t * theta_s);
    let c_h = (1.0 / (2.0 * PI)) * (1.0 / (2.0 * PI * h)).sqrt();
    Ok(-k1 / (2.0 * PI) + k2 * c_h)
}

/// One row of a kernel sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub h: f64,
    pub t: f64,
    pub s: f64,
    pub re: f64,
    pub im: f64,
}

/// `max |K_h|` over the products of `ts × ss`, for every `h`.
pub fn kernel_sup_ladder(
    cs: &CutoffSuite,
    ext: &AnalyticExtension,
    hs: &[f64],
    ts: &[f64],
    ss: &[f64],
    q: KernelQuadrature,
) -> Result<(Vec<(f64, f64)>, Vec<KernelSample>)> {
    let pairs: Vec<(f64, f64, f64)> =
        hs.iter().flat_map(|&h| ts.iter().flat_map(move |&t| ss.iter().map(move |&s| (h, t, s)))).collect();
    let samples = pairs
        .par_iter()
        .map(|&(h, t, s)| {
            let k = kernel_oracle_rh(cs, ext, h, t, s, q)?;
            Ok(KernelSample { h, t, s, re: k.re, im: k.im })
        })
        .collect::<Result<Vec<_>>>()?;
    let sups = hs
        .iter()
        .map(|&h| {
            let m = samples.iter().filter(|k| k.h == h).map(|k| k.re.hypot(k.im)).fold(0.0, f64::max);
            (h, m)
        })
        .collect();
    Ok((sups, samples))
}

/// A time cutoff for the disjoint-support estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeCutoff {
    /// `1_{[lo, hi]}`.
    Indicator { lo: f64, hi: f64 },
    /// A plateau profile centered at `center`.
    Smooth { center: f64, profile: Plateau },
}

impl TimeCutoff {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeCutoff::Indicator { lo, hi } => {
                if (lo..=hi).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            TimeCutoff::Smooth { center, profile } => profile.value(t - center),
        }
    }

    /// Closed interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            TimeCutoff::Indicator { lo, hi } => (lo, hi),
            TimeCutoff::Smooth { center, profile } => (center - profile.outer, center + profile.outer),
        }
    }
}

/// Distance between the grid supports of two cutoffs.
pub fn grid_support_distance(a: &TimeCutoff, b: &TimeCutoff, g: &TimeSpaceGrid) -> f64 {
    let nodes = |c: &TimeCutoff| -> Vec<f64> { (0..g.n_t).map(|i| g.t(i)).filter(|&t| c.value(t) != 0.0).collect() };
    let (na, nb) = (nodes(a), nodes(b));
    let mut d = f64::INFINITY;
    for x in &na {
        for y in &nb {
            d = d.min((x - y).abs());
        }
    }
    d
}

/// `‖χ₁ e^{-|D_t|²/λ}(χ₂u)‖_{H^k} / ‖u‖_{H^{-m}}`.
///
/// The Gaussian acts by direct convolution, `(λ/4π)^{1/2} ∫ e^{-λ(t−s)²/4} ·(s) ds`, so
/// values far below the FFT roundoff floor remain meaningful.
pub fn disjoint_support_smallness(
    chi1: &TimeCutoff,
    chi2: &TimeCutoff,
    lambda: f64,
    u: &Field,
    k: u32,
    m: u32,
) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(param("lambda", format!("must be positive, got {lambda}")));
    }
    let g = u.grid().clone();
    let d = grid_support_distance(chi1, chi2, &g);
    if !(d > 0.0) {
        return Err(Error::OverlappingSupports(d));
    }
    let denom = besov_smoother(u, m).l2_norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    let (n, ns, dt) = (g.n_t, g.n_space(), g.dt());
    let c1: Vec<f64> = (0..n).map(|i| chi1.value(g.t(i))).collect();
    let c2: Vec<f64> = (0..n).map(|i| chi2.value(g.t(i))).collect();
    let src: Vec<usize> = (0..n).filter(|&j| c2[j] != 0.0).collect();
    let pref = (lambda / (4.0 * PI)).sqrt() * dt;
    let vals = u.values();
    let mut out = vec![C64::new(0.0, 0.0); n * ns];
    out.par_chunks_mut(ns).enumerate().for_each(|(i, row)| {
        if c1[i] == 0.0 {
            return;
        }
        for &j in &src {
            let dtij = g.t(i) - g.t(j);
            let kern = pref * c1[i] * c2[j] * (-0.25 * lambda * dtij * dtij).exp();
            for ix in 0..ns {
                row[ix] += vals[j * ns + ix] * kern;
            }
        }
    });
    let w = Field::from_values(&g, out)?;
    let w = if k == 0 { w } else { apply_time_symbol(&w, |xi| C64::new((1.0 + xi * xi).powf(k as f64 / 2.0), 0.0), false) };
    Ok(w.l2_norm() / denom)
}

/// Discrete norm of `D_t^k e^{-ε|D_t|²}`: the symbol maximum over the frequency lattice.
pub fn operator_norm_dtk_gaussian(k: u32, eps: f64, grid: &TimeSpaceGrid) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(param("eps", format!("must be positive, got {eps}")));
    }
    let arg = (k as f64 / (2.0 * eps)).sqrt();
    if arg > grid.nyquist_t() {
        return Err(Error::Nyquist { needed: arg, nyquist: grid.nyquist_t() });
    }
    Ok((0..grid.n_t)
        .map(|m| {
            let xi = grid.xi_t(m).abs();
            xi.powi(k as i32) * (-eps * xi * xi).exp()
        })
        .fold(0.0, f64::max))
}

/// `(k/(2eε))^{k/2}`.
pub fn dtk_gaussian_bound(k: u32, eps: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        (k as f64 / (2.0 * std::f64::consts::E * eps)).powf(k as f64 / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Quadratic;
    use std::sync::Arc;

    fn grid_1d(t: (f64, f64, usize)) -> Arc<TimeSpaceGrid> {
        Arc::new(TimeSpaceGrid::new_1d(t, (0.0, 1.0, 4)).unwrap())
    }

    fn gaussian(g: &Arc<TimeSpaceGrid>, c: f64, w: f64) -> Field {
        Field::from_fn(g, move |t, _| C64::new((-(t - c) * (t - c) / (2.0 * w * w)).exp(), 0.0))
    }

    #[test]
    fn params_derive_h() {
        let p = ConjugatorParams::new(2.0, 4.0).unwrap();
        assert_eq!(p.h, 2.0 / 64.0);
        assert!(ConjugatorParams::new(1.0, 0.5).is_err());
        assert!(ConjugatorParams::new(0.0, 2.0).is_err());
    }

    #[test]
    fn q_on_eigenfunction() {
        let g = grid_1d((0.0, 8.0, 64));
        let omega = 2.0 * PI * 3.0 / 8.0;
        let u = Field::from_fn(&g, |t, _| C64::from_polar(1.0, omega * t));
        let p = ConjugatorParams::new(1.0, 2.0).unwrap();
        let q = apply_q(&u, &QuadraticWeight::zero(1), &p).unwrap();
        let factor = (-p.mu * omega * omega / (2.0 * p.tau.powi(3))).exp();
        assert!(q.sub(&u.scale(C64::new(factor, 0.0))).max_abs() < 1e-13);
    }

    #[test]
    fn q_matches_convolution_quadrature() {
        let g = Arc::new(TimeSpaceGrid::new_1d((-8.0, 16.0, 256), (-2.0, 4.0, 8)).unwrap());
        let w = QuadraticWeight::new(Quadratic::affine(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap(), |_| 0.0).unwrap();
        let p = ConjugatorParams::new(1.0, 1.5).unwrap();
        let u = Field::from_fn(&g, |t, x| C64::new((-t * t - x[0] * x[0]).exp(), 0.0));
        let q = apply_q(&u, &w, &p).unwrap();
        let h = p.h;
        for (it, ix) in [(128, 4), (140, 2), (100, 6)] {
            let (t, x) = (g.t(it), g.x(0, ix));
            let integrand = |s: f64| C64::new((-s * s - x * x + p.tau * x).exp() * (-(t - s) * (t - s) / (2.0 * h)).exp(), 0.0);
            let v = integrate(integrand, t - 12.0 * h.sqrt(), t + 12.0 * h.sqrt(), 1e-14, 0.0, 200).unwrap().value / (2.0 * PI * h).sqrt();
            assert!((q.values()[it * 8 + ix] - v).norm() < 1e-8 * v.norm().max(1e-3));
        }
    }

    #[test]
    fn q_overflow_is_reported() {
        let g = grid_1d((0.0, 1.0, 8));
        let w = QuadraticWeight::new(Quadratic::affine(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap(), |_| 0.0).unwrap();
        let u = Field::from_fn(&g, |_, _| C64::new(1.0, 0.0));
        let p = ConjugatorParams::new(1.0, 2000.0).unwrap();
        assert!(matches!(apply_q(&u, &w, &p), Err(Error::WeightOverflow(_))));
    }

    #[test]
    fn gaussian_conjugation_identity() {
        let g = grid_1d((-10.0, 20.0, 512));
        let u = gaussian(&g, 0.3, 0.7);
        for s in [1.0, 10.0, 100.0] {
            assert!(residual_gaussian_conjugation(&u, s).unwrap() < 1e-9);
        }
        assert_eq!(residual_gaussian_conjugation(&Field::zeros(&g), 1.0).unwrap(), 0.0);
        // large ς: both sides approach t·u
        let tu = u.map_indexed(|v, it, _| v * g.t(it));
        let lhs = gaussian_time_multiplier(&tu, 1e-6).unwrap();
        assert!(lhs.sub(&tu).l2_norm() / u.l2_norm() < 1e-5);
    }

    #[test]
    fn weyl_closed_forms() {
        let g = grid_1d((-8.0, 16.0, 128));
        let u = gaussian(&g, 0.5, 0.8);
        let one = ClosedFormSymbol { symbol: |_, _| C64::new(1.0, 0.0), band: 0.0 };
        assert!(weyl_quantize(&one, &u).unwrap().sub(&u).max_abs() < 1e-10);
        let xi = ClosedFormSymbol { symbol: |_, x| C64::new(x, 0.0), band: 0.0 };
        assert!(weyl_quantize(&xi, &u).unwrap().sub(&dt_apply(&u)).max_abs() < 1e-8);
        let t = ClosedFormSymbol { symbol: |t, _| C64::new(t, 0.0), band: 0.0 };
        let tu = u.map_indexed(|v, it, _| v * g.t(it));
        assert!(weyl_quantize(&t, &u).unwrap().sub(&tu).max_abs() < 1e-8);
        let wide = ClosedFormSymbol { symbol: |_, _| C64::new(1.0, 0.0), band: 1e6 };
        assert!(matches!(weyl_quantize(&wide, &u), Err(Error::Nyquist { .. })));
    }

    #[test]
    fn weyl_of_mixed_symbol_matches_kernel_quadrature() {
        // a(t, ξ) = t·ξ is op^w = (t D_t + D_t t)/2
        let g = grid_1d((-8.0, 16.0, 128));
        let u = gaussian(&g, 0.2, 0.6);
        let a = ClosedFormSymbol { symbol: |t, x| C64::new(t * x, 0.0), band: 0.0 };
        let tu = u.map_indexed(|v, it, _| v * g.t(it));
        let expected = dt_apply(&u).map_indexed(|v, it, _| v * g.t(it)).add(&dt_apply(&tu)).scale(C64::new(0.5, 0.0));
        assert!(weyl_quantize(&a, &u).unwrap().sub(&expected).max_abs() < 1e-8);
    }

    #[test]
    fn cutoff_suite_supports() {
        assert!(CutoffSuite::new(0.0, 1.0, 2.0, 10.0).is_err());
        let cs = CutoffSuite::new(1.0, 0.5, 4.0, 2.0).unwrap();
        assert_eq!(cs.chi(1.0 + 1.5), 1.0);
        assert_eq!(cs.chi(1.0 + 2.0), 0.0);
        assert_eq!(cs.theta(1.0 + 0.5), 0.0);
        assert!(cs.theta(1.0) > 0.99);
        assert_eq!(cs.eta(1.0), 1.0);
        assert_eq!(cs.eta(1.5), 0.0);
    }

    #[test]
    fn fh_symbol_hand_values() {
        let g = TimeSpaceGrid::new_1d((-4.0, 8.0, 256), (0.0, 1.0, 4)).unwrap();
        let cs = CutoffSuite::new(0.0, 0.5, 4.0, 2.0).unwrap();
        let h = 2f64.powi(-6);
        let c = build_fh(&GevreyFunction::constant(2.5), &cs, h, &g, BumpScale::Fixed(1.0)).unwrap();
        assert!((c.evaluate(0.3, 5.0).unwrap() - 2.5).norm() < 1e-14);
        let lin = build_fh(&GevreyFunction::polynomial(vec![0.0, 1.0]), &cs, h, &g, BumpScale::Fixed(1.0)).unwrap();
        for t in [-1.0, 0.4, 1.7] {
            assert!((lin.evaluate(t, 0.0).unwrap() - cs.chi(t) * t).norm() < 1e-14);
        }
        // f(t) = t: f̃(t + iy) = t + iy·a_1(y) inside the strip plateau
        let y = h * 3.0;
        let expected = C64::new(0.4, y * lin.extension.family.cutoff(1, y));
        assert!((lin.evaluate(0.4, 3.0).unwrap() - expected).norm() < 1e-14);
        let s = build_fh(&GevreyFunction::sin(1.0), &cs, h, &g, BumpScale::Fixed(1.0)).unwrap();
        let ext_sup = (0..200)
            .map(|i| s.extension.evaluate(C64::new(-2.0 + 0.02 * i as f64, h * cs.band(h) * 0.5)).unwrap().norm())
            .fold(0.0, f64::max);
        assert!(s.sup_abs(&g).unwrap() <= ext_sup.max(1.0) * 1.05);
    }

    #[test]
    fn fh_rejects_unresolved_band() {
        let g = TimeSpaceGrid::new_1d((-4.0, 8.0, 32), (0.0, 1.0, 4)).unwrap();
        let cs = CutoffSuite::new(0.0, 0.5, 4.0, 2.0).unwrap();
        assert!(matches!(
            build_fh(&GevreyFunction::sin(1.0), &cs, 2f64.powi(-12), &g, BumpScale::Fixed(1.0)),
            Err(Error::Nyquist { .. })
        ));
    }

    #[test]
    fn quadrature_kernel_reproduces_grid_operator() {
        let g = Arc::new(TimeSpaceGrid::new_1d((-4.0, 8.0, 128), (0.0, 1.0, 4)).unwrap());
        let cs = CutoffSuite::new(0.0, 0.5, 4.0, 2.0).unwrap();
        let f = GevreyFunction::sin(1.0);
        let h = 2f64.powi(-4);
        let fh = build_fh(&f, &cs, h, &g, BumpScale::Fixed(1.0)).unwrap();
        let u = Field::from_fn(&g, |t, _| C64::new((3.0 * t).cos() + 0.5, 0.0));
        let grid_rh = apply_rh(&fh, &f, &u).unwrap();
        let ss: Vec<usize> = (0..g.n_t).filter(|&j| cs.theta(g.t(j)) != 0.0).collect();
        let q = KernelQuadrature::default();
        let mut diff = 0.0f64;
        for it in (0..g.n_t).filter(|&i| cs.chi(g.t(i)) != 0.0).step_by(9) {
            let t = g.t(it);
            let v: C64 = ss
                .iter()
                .map(|&j| kernel_oracle_rh(&cs, &fh.extension, h, t, g.t(j), q).unwrap() * u.values()[j * 4] * g.dt())
                .sum();
            diff = diff.max((v - grid_rh.values()[it * 4]).norm());
        }
        assert!(diff < 1e-6 * grid_rh.max_abs(), "{diff} vs {}", grid_rh.max_abs());
        assert_eq!(kernel_oracle_rh(&cs, &fh.extension, h, 3.0, 0.0, q).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(kernel_oracle_rh(&cs, &fh.extension, h, 0.0, 0.6, q).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn disjoint_support_decay() {
        let g = grid_1d((-4.0, 8.0, 512));
        let u = Field::from_fn(&g, |t, _| C64::new(1.0 + 0.3 * t.sin(), 0.0));
        let c1 = TimeCutoff::Indicator { lo: -3.0, hi: -0.5 };
        let c2 = TimeCutoff::Indicator { lo: 0.5, hi: 3.0 };
        let d = grid_support_distance(&c1, &c2, &g);
        assert!((d - 1.0).abs() < 1e-12);
        let v = disjoint_support_smallness(&c1, &c2, 100.0, &u, 0, 0).unwrap();
        assert!(v < (-100.0 * d * d / 8.0f64).exp());
        assert_eq!(disjoint_support_smallness(&c1, &c2, 100.0, &Field::zeros(&g), 0, 0).unwrap(), 0.0);
        assert!(matches!(disjoint_support_smallness(&c1, &c1, 1.0, &u, 0, 0), Err(Error::OverlappingSupports(_))));
    }

    #[test]
    fn dtk_gaussian_norms() {
        let g = TimeSpaceGrid::new_1d((0.0, 400.0, 4096), (0.0, 1.0, 4)).unwrap();
        assert_eq!(operator_norm_dtk_gaussian(0, 1.0, &g).unwrap(), 1.0);
        for (k, e, v) in [(2, 1.0, (-1.0f64).exp()), (1, 0.5, (-1.0f64).exp().sqrt())] {
            let m = operator_norm_dtk_gaussian(k, e, &g).unwrap();
            assert!((m - v).abs() < 1e-3 * v);
            assert!((dtk_gaussian_bound(k, e) - v).abs() < 1e-14);
        }
        assert!(operator_norm_dtk_gaussian(2, 1e-9, &g).is_err());
    }
}
