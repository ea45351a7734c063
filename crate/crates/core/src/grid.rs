//! Periodic time × space grids, spectral time multipliers and the anisotropic norms.
//!
//! Values are stored t-major: index `it * n_space + ix`, and for two space
//! dimensions `ix = i1 * n_x[1] + i2`. Time derivatives and multipliers act on
//! time-Fourier coefficients; space derivatives are centered differences.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub type C64 = Complex64;

/// Uniform periodic grid on `[t_start, t_start + t_period) × Π [x_start, x_start + x_period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSpaceGrid {
    pub t_start: f64,
    pub t_period: f64,
    pub n_t: usize,
    pub x_start: Vec<f64>,
    pub x_period: Vec<f64>,
    pub n_x: Vec<usize>,
}

impl TimeSpaceGrid {
    pub fn new(
        (t_start, t_period, n_t): (f64, f64, usize),
        space: &[(f64, f64, usize)],
    ) -> Result<Self> {
        let grid = Self {
            t_start,
            t_period,
            n_t,
            x_start: space.iter().map(|s| s.0).collect(),
            x_period: space.iter().map(|s| s.1).collect(),
            n_x: space.iter().map(|s| s.2).collect(),
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid in 1+1 dimensions.
    pub fn new_1d(t: (f64, f64, usize), x: (f64, f64, usize)) -> Result<Self> {
        Self::new(t, &[x])
    }

    /// Box centered at `(t0, x0)` with the given side lengths.
    pub fn centered(t0: f64, t_len: f64, n_t: usize, x0: &[f64], x_len: f64, n_x: usize) -> Result<Self> {
        let space: Vec<_> = x0.iter().map(|&c| (c - x_len / 2.0, x_len, n_x)).collect();
        Self::new((t0 - t_len / 2.0, t_len, n_t), &space)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if !(1..=2).contains(&dim) || self.x_start.len() != dim || self.n_x.len() != dim {
            return Err(Error::Grid(format!("space dimension must be 1 or 2, got {dim}")));
        }
        let counts = std::iter::once(self.n_t).chain(self.n_x.iter().copied());
        for n in counts {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::Grid(format!("sample count {n} must be a power of two >= 4")));
            }
        }
        let periods = std::iter::once(self.t_period).chain(self.x_period.iter().copied());
        for p in periods {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Grid(format!("period {p} must be positive")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x_period.len()
    }

    pub fn dt(&self) -> f64 {
        self.t_period / self.n_t as f64
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.x_period[axis] / self.n_x[axis] as f64
    }

    /// Number of spatial points per time slice.
    pub fn n_space(&self) -> usize {
        self.n_x.iter().product()
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_space()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one grid cell, `Δt Π Δx`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).fold(self.dt(), |v, a| v * self.dx(a))
    }

    pub fn t(&self, it: usize) -> f64 {
        self.t_start + it as f64 * self.dt()
    }

    pub fn x(&self, axis: usize, i: usize) -> f64 {
        self.x_start[axis] + i as f64 * self.dx(axis)
    }

    /// Spatial multi-index of a flat spatial index.
    pub fn space_index(&self, ix: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [ix, 0]
        } else {
            [ix / self.n_x[1], ix % self.n_x[1]]
        }
    }

    /// Coordinates of a flat spatial index.
    pub fn space_point(&self, ix: usize) -> Vec<f64> {
        let idx = self.space_index(ix);
        (0..self.dim()).map(|a| self.x(a, idx[a])).collect()
    }

    /// All spatial points in storage order.
    pub fn space_points(&self) -> Vec<Vec<f64>> {
        (0..self.n_space()).map(|ix| self.space_point(ix)).collect()
    }

    /// Flat-index stride of one step along a space axis.
    pub fn space_stride(&self, axis: usize) -> usize {
        if self.dim() == 2 && axis == 0 {
            self.n_x[1]
        } else {
            1
        }
    }

    /// Flat spatial index of the periodic neighbour `ix + shift·e_axis`.
    pub fn shift_space(&self, ix: usize, axis: usize, shift: isize) -> usize {
        let mut idx = self.space_index(ix);
        let n = self.n_x[axis] as isize;
        idx[axis] = (idx[axis] as isize + shift).rem_euclid(n) as usize;
        if self.dim() == 1 {
            idx[0]
        } else {
            idx[0] * self.n_x[1] + idx[1]
        }
    }

    /// Angular time frequency of FFT bin `m` on the symmetric lattice.
    pub fn xi_t(&self, m: usize) -> f64 {
        2.0 * PI * signed_bin(m, self.n_t) as f64 / self.t_period
    }

    pub fn nyquist_t(&self) -> f64 {
        PI / self.dt()
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim() {
            return Err(Error::Axis { axis, dim: self.dim() });
        }
        Ok(())
    }
}

/// Signed frequency index of FFT bin `m` (Nyquist bin maps to `-n/2`).
pub fn signed_bin(m: usize, n: usize) -> isize {
    if m < n / 2 {
        m as isize
    } else {
        m as isize - n as isize
    }
}

/// Complex samples on a [`TimeSpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<TimeSpaceGrid>,
    values: Vec<C64>,
}

impl Field {
    pub fn zeros(grid: &Arc<TimeSpaceGrid>) -> Self {
        Self { grid: grid.clone(), values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_values(grid: &Arc<TimeSpaceGrid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape);
        }
        Ok(Self { grid: grid.clone(), values })
    }

    /// Samples `f(t, x)` at every grid node.
    pub fn from_fn(grid: &Arc<TimeSpaceGrid>, f: impl Fn(f64, &[f64]) -> C64 + Sync) -> Self {
        let points = grid.space_points();
        let ns = grid.n_space();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(grid.t(i / ns), &points[i % ns]))
            .collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<TimeSpaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::Shape)
        }
    }

    pub fn map(&self, f: impl Fn(C64) -> C64 + Sync) -> Field {
        Field { grid: self.grid.clone(), values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise `f(value, t, x_index)`.
    pub fn map_indexed(&self, f: impl Fn(C64, usize, usize) -> C64 + Sync) -> Field {
        let ns = self.grid.n_space();
        let values = self.values.par_iter().enumerate().map(|(i, &v)| f(v, i / ns, i % ns)).collect();
        Field { grid: self.grid.clone(), values }
    }

    pub fn zip(&self, other: &Field, f: impl Fn(C64, C64) -> C64 + Sync) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid.clone(), values }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: C64) -> Field {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Discrete L² norm with flat volume element.
    pub fn l2_norm(&self) -> f64 {
        (sum_sq(&self.values) * self.grid.cell_volume()).sqrt()
    }

    /// Discrete L² norm with a spatial volume weight per spatial point.
    pub fn l2_norm_weighted(&self, volume: &[f64]) -> f64 {
        let ns = self.grid.n_space();
        let s: f64 = self.values.iter().enumerate().map(|(i, v)| v.norm_sqr() * volume[i % ns]).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Discrete inner product `Σ u v̄ · cell volume`, optionally volume-weighted.
    pub fn inner(&self, other: &Field, volume: Option<&[f64]>) -> C64 {
        let ns = self.grid.n_space();
        let s: C64 = self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| a * b.conj() * volume.map_or(1.0, |w| w[i % ns]))
            .sum();
        s * self.grid.cell_volume()
    }

    /// Smallest distance, in grid cells, from the support `{|u| > tol·max|u|}` to the box edge.
    pub fn support_margin_cells(&self, tol: f64) -> usize {
        let g = &self.grid;
        let cut = tol * self.max_abs();
        if cut == 0.0 {
            return usize::MAX;
        }
        let ns = g.n_space();
        let mut margin = usize::MAX;
        for (i, v) in self.values.iter().enumerate() {
            if v.norm() <= cut {
                continue;
            }
            let it = i / ns;
            margin = margin.min(it).min(g.n_t - 1 - it);
            let idx = g.space_index(i % ns);
            for a in 0..g.dim() {
                margin = margin.min(idx[a]).min(g.n_x[a] - 1 - idx[a]);
            }
        }
        margin
    }
}

fn sum_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Applies the multiplier `symbol(ξ_t)` on time-Fourier coefficients of every spatial column.
/// `odd` zeroes the Nyquist bin so odd symbols keep real fields real.
pub fn apply_time_symbol(u: &Field, symbol: impl Fn(f64) -> C64 + Sync, odd: bool) -> Field {
    let g = u.grid.clone();
    let (nt, ns) = (g.n_t, g.n_space());
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);
    let mult: Vec<C64> = (0..nt)
        .map(|m| {
            if odd && m == nt / 2 {
                C64::new(0.0, 0.0)
            } else {
                symbol(g.xi_t(m)) / nt as f64
            }
        })
        .collect();
    let mut cols = transpose(&u.values, nt, ns);
    cols.par_chunks_mut(nt).for_each(|col| {
        fwd.process(col);
        for (c, m) in col.iter_mut().zip(&mult) {
            *c *= m;
        }
        inv.process(col);
    });
    Field { grid: g, values: transpose(&cols, ns, nt) }
}

fn transpose(v: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v[r * cols + c];
        }
    }
    out
}

/// `D_t u = -i ∂_t u`, spectral in t.
pub fn dt_apply(u: &Field) -> Field {
    apply_time_symbol(u, |xi| C64::new(xi, 0.0), true)
}

/// `e^{-(h/2)|D_t|²} u`.
pub fn gaussian_time_multiplier(u: &Field, h: f64) -> Result<Field> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(param("h", format!("must be positive, got {h}")));
    }
    Ok(apply_time_symbol(u, |xi| C64::new((-0.5 * h * xi * xi).exp(), 0.0), false))
}

/// `⟨D_t⟩^{-k} u`.
pub fn besov_smoother(u: &Field, k: u32) -> Field {
    if k == 0 {
        return u.clone();
    }
    apply_time_symbol(u, |xi| C64::new((1.0 + xi * xi).powf(-(k as f64) / 2.0), 0.0), false)
}

/// Generic space stencil `Σ c_s u(x + s e_axis)`.
fn space_stencil(u: &Field, axis: usize, taps: &[(isize, C64)]) -> Field {
    let g = u.grid.clone();
    let ns = g.n_space();
    let shifts: Vec<Vec<usize>> =
        taps.iter().map(|&(s, _)| (0..ns).map(|ix| g.shift_space(ix, axis, s)).collect()).collect();
    let mut out = vec![C64::new(0.0, 0.0); u.values.len()];
    out.par_chunks_mut(ns).zip(u.values.par_chunks(ns)).for_each(|(o, row)| {
        for ix in 0..ns {
            o[ix] = taps.iter().zip(&shifts).map(|(&(_, c), sh)| c * row[sh[ix]]).sum();
        }
    });
    Field { grid: g, values: out }
}

/// `D_{x_axis} u` by second-order centered differences (axis is zero-based).
pub fn dx_apply(u: &Field, axis: usize) -> Result<Field> {
    u.grid.check_axis(axis)?;
    let c = C64::new(0.0, -1.0) / (2.0 * u.grid.dx(axis));
    Ok(space_stencil(u, axis, &[(1, c), (-1, -c)]))
}

/// Forward difference `(u(x+Δ) - u(x)) / (iΔ)`.
pub fn dx_forward(u: &Field, axis: usize) -> Result<Field> {
    u.grid.check_axis(axis)?;
    let c = C64::new(0.0, -1.0) / u.grid.dx(axis);
    Ok(space_stencil(u, axis, &[(1, c), (0, -c)]))
}

/// Backward difference `(u(x) - u(x-Δ)) / (iΔ)`.
pub fn dx_backward(u: &Field, axis: usize) -> Result<Field> {
    u.grid.check_axis(axis)?;
    let c = C64::new(0.0, -1.0) / u.grid.dx(axis);
    Ok(space_stencil(u, axis, &[(0, c), (-1, -c)]))
}

/// `D_{x_axis} u` spectrally along the space axis.
pub fn dx_spectral(u: &Field, axis: usize) -> Result<Field> {
    u.grid.check_axis(axis)?;
    let g = u.grid.clone();
    let n = g.n_x[axis];
    let stride = g.space_stride(axis);
    let ns = g.n_space();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let period = g.x_period[axis];
    let mult: Vec<f64> = (0..n)
        .map(|m| if m == n / 2 { 0.0 } else { 2.0 * PI * signed_bin(m, n) as f64 / period / n as f64 })
        .collect();
    let mut out = u.values.clone();
    // Lines along `axis` within one time slice start at every index whose axis-coordinate is 0.
    let starts: Vec<usize> = (0..ns).filter(|&ix| g.space_index(ix)[axis] == 0).collect();
    out.par_chunks_mut(ns).for_each(|slice| {
        let mut line = vec![C64::new(0.0, 0.0); n];
        for &s in &starts {
            for (i, l) in line.iter_mut().enumerate() {
                *l = slice[s + i * stride];
            }
            fwd.process(&mut line);
            for (l, m) in line.iter_mut().zip(&mult) {
                *l *= m;
            }
            inv.process(&mut line);
            for (i, l) in line.iter().enumerate() {
                slice[s + i * stride] = *l;
            }
        }
    });
    Ok(Field { grid: g, values: out })
}

/// Large parameter τ and negative time-Sobolev index k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub tau: f64,
    pub k: u32,
}

impl NormParams {
    pub fn new(tau: f64, k: u32) -> Result<Self> {
        if !(tau >= 1.0 && tau.is_finite()) {
            return Err(param("tau", format!("must be >= 1, got {tau}")));
        }
        Ok(Self { tau, k })
    }
}

fn l2_sq(u: &Field, volume: Option<&[f64]>) -> f64 {
    match volume {
        Some(w) => u.l2_norm_weighted(w).powi(2),
        None => u.l2_norm().powi(2),
    }
}

fn dx_sq(u: &Field, volume: Option<&[f64]>) -> f64 {
    (0..u.grid.dim()).map(|a| l2_sq(&dx_apply(u, a).expect("axis in range"), volume)).sum()
}

/// `(τ²∥u∥² + ∥D_x u∥² + τ^{-2}∥D_t u∥²)^{1/2}`; `volume` weights the spatial measure.
pub fn norm_anisotropic(u: &Field, p: NormParams, volume: Option<&[f64]>) -> f64 {
    let tau2 = p.tau * p.tau;
    (tau2 * l2_sq(u, volume) + dx_sq(u, volume) + l2_sq(&dt_apply(u), volume) / tau2).sqrt()
}

/// `∥⟨D_t⟩^{-k} u∥_{L²_t H¹_x}`.
pub fn norm_hk_t_h1_x(u: &Field, p: NormParams, volume: Option<&[f64]>) -> f64 {
    l2_h1_norm(&besov_smoother(u, p.k), volume)
}

/// `(∥u∥² + ∥D_x u∥²)^{1/2}`.
pub fn l2_h1_norm(u: &Field, volume: Option<&[f64]>) -> f64 {
    (l2_sq(u, volume) + dx_sq(u, volume)).sqrt()
}

/// Continuous Fourier transform `∫ e^{-itξ} f(t) dt` of uniform samples, by the
/// trapezoidal rule. Returns `(ξ_m, F(ξ_m))` in FFT bin order.
pub fn fourier_transform_samples(values: &[C64], t_start: f64, dt: f64) -> Vec<(f64, C64)> {
    let n = values.len();
    let mut buf = values.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let period = n as f64 * dt;
    buf.into_iter()
        .enumerate()
        .map(|(m, v)| {
            let xi = 2.0 * PI * signed_bin(m, n) as f64 / period;
            (xi, v * dt * C64::from_polar(1.0, -t_start * xi))
        })
        .collect()
}

// Binary layout: u64 dim, f64 t_period, f64 x_period[dim], u64 n_t, u64 n_x[dim],
// f64 t_start, f64 x_start[dim], then (re, im) f64 pairs in storage order. All little-endian.

pub fn write_field(u: &Field, mut w: impl Write) -> Result<()> {
    let g = &u.grid;
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    w.write_all(&g.t_period.to_le_bytes())?;
    for p in &g.x_period {
        w.write_all(&p.to_le_bytes())?;
    }
    w.write_all(&(g.n_t as u64).to_le_bytes())?;
    for n in &g.n_x {
        w.write_all(&(*n as u64).to_le_bytes())?;
    }
    w.write_all(&g.t_start.to_le_bytes())?;
    for s in &g.x_start {
        w.write_all(&s.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(u.values.len() * 16);
    for v in &u.values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field(mut r: impl Read) -> Result<Field> {
    let mut b = [0u8; 8];
    let mut u64_ = |r: &mut dyn Read| -> Result<u64> {
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let dim = u64_(&mut r)? as usize;
    if !(1..=2).contains(&dim) {
        return Err(Error::Grid(format!("bad dimension {dim} in header")));
    }
    let f = |x: u64| f64::from_bits(x);
    let t_period = f(u64_(&mut r)?);
    let x_period = (0..dim).map(|_| u64_(&mut r).map(f)).collect::<Result<Vec<_>>>()?;
    let n_t = u64_(&mut r)? as usize;
    let n_x = (0..dim).map(|_| u64_(&mut r).map(|n| n as usize)).collect::<Result<Vec<_>>>()?;
    let t_start = f(u64_(&mut r)?);
    let x_start = (0..dim).map(|_| u64_(&mut r).map(f)).collect::<Result<Vec<_>>>()?;
    let grid = TimeSpaceGrid { t_start, t_period, n_t, x_start, x_period, n_x };
    grid.validate()?;
    let mut payload = vec![0u8; grid.len() * 16];
    r.read_exact(&mut payload)?;
    let values = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    Field::from_values(&Arc::new(grid), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n_t: usize, n_x: usize) -> Arc<TimeSpaceGrid> {
        Arc::new(TimeSpaceGrid::new_1d((-4.0, 8.0, n_t), (-4.0, 8.0, n_x)).unwrap())
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(TimeSpaceGrid::new_1d((0.0, 1.0, 6), (0.0, 1.0, 8)).is_err());
        assert!(TimeSpaceGrid::new_1d((0.0, 1.0, 2), (0.0, 1.0, 8)).is_err());
        assert!(TimeSpaceGrid::new_1d((0.0, -1.0, 8), (0.0, 1.0, 8)).is_err());
    }

    #[test]
    fn dt_of_grid_mode_is_frequency() {
        let g = grid1(64, 8);
        let omega = 2.0 * PI * 5.0 / g.t_period;
        let u = Field::from_fn(&g, |t, _| C64::from_polar(1.0, omega * t));
        let du = dt_apply(&u);
        let err = du.sub(&u.scale(C64::new(omega, 0.0))).max_abs();
        assert!(err < 1e-12 * omega, "{err}");
        let c = Field::from_fn(&g, |_, _| C64::new(3.0, 0.0));
        assert!(dt_apply(&c).max_abs() < 1e-13);
    }

    #[test]
    fn dt_matches_finite_differences() {
        let g = grid1(256, 4);
        let w = 2.0 * PI / g.t_period;
        let u = Field::from_fn(&g, |t, x| C64::new((w * t).sin() * (1.0 + x[0] * x[0]), 0.0));
        let du = dt_apply(&u);
        let dt = g.dt();
        let ns = g.n_space();
        for it in 0..g.n_t {
            let ip = (it + 1) % g.n_t;
            let im = (it + g.n_t - 1) % g.n_t;
            for ix in 0..ns {
                let fd = (u.values()[ip * ns + ix] - u.values()[im * ns + ix]) / (2.0 * dt) * C64::new(0.0, -1.0);
                let scale = 1.0 + g.space_point(ix)[0].powi(2);
                assert!((fd - du.values()[it * ns + ix]).norm() < w.powi(3) * dt * dt * scale);
            }
        }
    }

    #[test]
    fn dx_symbol_on_grid_mode() {
        let g = grid1(4, 64);
        let k = 2.0 * PI * 7.0 / g.x_period[0];
        let u = Field::from_fn(&g, |_, x| C64::from_polar(1.0, k * x[0]));
        let du = dx_apply(&u, 0).unwrap();
        let s = (k * g.dx(0)).sin() / g.dx(0);
        assert!(du.sub(&u.scale(C64::new(s, 0.0))).max_abs() < 1e-12);
        assert!(dx_apply(&u, 1).is_err());
    }

    #[test]
    fn dx_converges_to_spectral_second_order() {
        let err = |n: usize| {
            let g = grid1(4, n);
            let u = Field::from_fn(&g, |_, x| C64::new((-x[0] * x[0]).exp(), 0.0));
            dx_apply(&u, 0).unwrap().sub(&dx_spectral(&u, 0).unwrap()).max_abs()
        };
        let ratio = err(128) / err(256);
        assert!((3.6..4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn spectral_dx_2d_axes() {
        let g = Arc::new(TimeSpaceGrid::new((0.0, 1.0, 4), &[(0.0, 2.0 * PI, 16), (0.0, 2.0 * PI, 8)]).unwrap());
        let u = Field::from_fn(&g, |_, x| C64::from_polar(1.0, 3.0 * x[0] - 2.0 * x[1]));
        let d0 = dx_spectral(&u, 0).unwrap();
        let d1 = dx_spectral(&u, 1).unwrap();
        assert!(d0.sub(&u.scale(C64::new(3.0, 0.0))).max_abs() < 1e-12);
        assert!(d1.sub(&u.scale(C64::new(-2.0, 0.0))).max_abs() < 1e-12);
    }

    #[test]
    fn gaussian_multiplier_closed_form() {
        let g = Arc::new(TimeSpaceGrid::new_1d((-8.0, 16.0, 512), (0.0, 1.0, 4)).unwrap());
        let (sigma, h) = (0.5_f64, 0.3_f64);
        let u = Field::from_fn(&g, |t, _| C64::new((-t * t / (2.0 * sigma * sigma)).exp(), 0.0));
        let s2 = sigma * sigma + h;
        let exact = Field::from_fn(&g, |t, _| C64::new(sigma / s2.sqrt() * (-t * t / (2.0 * s2)).exp(), 0.0));
        let got = gaussian_time_multiplier(&u, h).unwrap();
        assert!(got.sub(&exact).max_abs() < 1e-12);
        assert!(gaussian_time_multiplier(&u, 0.0).is_err());
    }

    #[test]
    fn besov_inverse_pair() {
        let g = grid1(128, 4);
        let u = Field::from_fn(&g, |t, _| C64::new((-t * t).exp(), t.sin() * (-t * t).exp()));
        let up = apply_time_symbol(&u, |xi| C64::new(1.0 + xi * xi, 0.0), false);
        let back = besov_smoother(&up, 2);
        assert!(back.sub(&u).max_abs() < 1e-10);
        assert_eq!(besov_smoother(&u, 0), u);
    }

    #[test]
    fn single_mode_anisotropic_norm() {
        let g = grid1(64, 64);
        let omega = 2.0 * PI * 3.0 / g.t_period;
        let k = 2.0 * PI * 5.0 / g.x_period[0];
        let mass = (g.t_period * g.x_period[0]).sqrt();
        let u = Field::from_fn(&g, |t, x| C64::from_polar(1.0 / mass, omega * t + k * x[0]));
        let tau = 3.0;
        let s = (k * g.dx(0)).sin() / g.dx(0);
        let expect = (tau * tau + s * s + omega * omega / (tau * tau)).sqrt();
        let got = norm_anisotropic(&u, NormParams::new(tau, 0).unwrap(), None);
        assert!((got - expect).abs() < 1e-12 * expect);
        let hk = norm_hk_t_h1_x(&u, NormParams::new(tau, 1).unwrap(), None);
        assert!((hk - (1.0 + s * s).sqrt() / (1.0 + omega * omega).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fourier_of_gaussian() {
        let n = 512;
        let (t0, dt) = (-16.0, 32.0 / n as f64);
        let lam = 1.0;
        let v: Vec<C64> = (0..n).map(|j| C64::new((-(t0 + j as f64 * dt).powi(2) / lam).exp(), 0.0)).collect();
        for (xi, f) in fourier_transform_samples(&v, t0, dt) {
            let exact = (PI * lam).sqrt() * (-lam * xi * xi / 4.0).exp();
            assert!((f - exact).norm() < 1e-12, "{xi}");
        }
    }

    #[test]
    fn binary_roundtrip() {
        let g = Arc::new(TimeSpaceGrid::new((0.5, 2.0, 8), &[(-1.0, 3.0, 4), (0.0, 1.0, 4)]).unwrap());
        let u = Field::from_fn(&g, |t, x| C64::new(t + x[0], x[1] - t));
        let mut buf = Vec::new();
        write_field(&u, &mut buf).unwrap();
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(buf.len(), 8 * (1 + 1 + 2 + 1 + 2 + 1 + 2) + 16 * g.len());
        let back = read_field(buf.as_slice()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn support_margin() {
        let g = grid1(32, 32);
        let u = Field::from_fn(&g, |t, x| C64::new(if t.abs() < 1.0 && x[0].abs() < 1.0 { 1.0 } else { 0.0 }, 0.0));
        assert_eq!(u.support_margin_cells(1e-12), 12);
    }
}
