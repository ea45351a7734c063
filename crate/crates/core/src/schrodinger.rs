//! The Schrödinger operator `P = i∂_t + Δ_g` in divergence form, its lower-order
//! perturbation `P_{b,q}` and the explicitly conjugated operator `P_{φ,μ}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::gevrey::GevreyFunction;
use crate::grid::{dt_apply, dx_apply, dx_backward, dx_forward, dx_spectral, Field, TimeSpaceGrid};
use crate::weights::QuadraticWeight;

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type PointPredicate = dyn Fn(&[f64]) -> bool + Send + Sync;

/// Space-dependent symmetric elliptic coefficient matrix `g^{jk}(x)`.
#[derive(Clone)]
pub struct Metric {
    name: String,
    dim: usize,
    coeff: Arc<MatrixFn>,
    smooth_at: Option<Arc<PointPredicate>>,
    pub ellipticity_c0: f64,
    pub lipschitz_bound: f64,
}

impl std::fmt::Debug for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Metric")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("ellipticity_c0", &self.ellipticity_c0)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish()
    }
}

impl Metric {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        ellipticity_c0: f64,
        lipschitz_bound: f64,
        coeff: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, coeff: Arc::new(coeff), smooth_at: None, ellipticity_c0, lipschitz_bound }
    }

    /// Marks the points where the coefficients are differentiable.
    pub fn with_smooth_set(mut self, pred: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.smooth_at = Some(Arc::new(pred));
        self
    }

    pub fn flat(dim: usize) -> Self {
        Self::new("flat", dim, 1.0, 0.0, move |_| DMatrix::identity(dim, dim))
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let c0 = m.clone().symmetric_eigenvalues().min();
        Self::new("constant", dim, c0, 0.0, move |_| m.clone())
    }

    /// `(1 + 0.3|sin x₁|)·I`, Lipschitz but not C¹.
    pub fn lipschitz_sin(dim: usize) -> Self {
        Self::new("lipschitz_sin", dim, 1.0, 0.3, move |x| {
            DMatrix::identity(dim, dim) * (1.0 + 0.3 * x[0].sin().abs())
        })
        .with_smooth_set(|x| x[0].sin().abs() > 1e-6)
    }

    /// `diag(1 + 0.5 cos x₁, 1)` in two space dimensions.
    pub fn anisotropic_cos() -> Self {
        Self::new("anisotropic_cos", 2, 0.5, 0.5, |x| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 + 0.5 * x[0].cos(), 1.0])))
    }

    /// Conformal metric `g_{jk} = e^{2x₁} δ_{jk}`, i.e. coefficients `e^{-2x₁} δ^{jk}`.
    pub fn conformal_exp(dim: usize) -> Self {
        Self::new("conformal_exp", dim, 0.0, 0.0, move |x| DMatrix::identity(dim, dim) * (-2.0 * x[0]).exp())
    }

    /// Registry lookup used by configuration files.
    pub fn from_key(key: &str, dim: usize) -> Result<Self> {
        match key {
            "flat" => Ok(Self::flat(dim)),
            "lipschitz_sin" => Ok(Self::lipschitz_sin(dim)),
            "anisotropic_cos" if dim == 2 => Ok(Self::anisotropic_cos()),
            "conformal_exp" => Ok(Self::conformal_exp(dim)),
            _ => Err(param("metric", format!("unknown metric `{key}` for dimension {dim}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `g^{jk}(x)`.
    pub fn coeff(&self, x: &[f64]) -> DMatrix<f64> {
        (self.coeff)(x)
    }

    /// The metric matrix `g_{jk}(x)`, inverse of the coefficients.
    pub fn lower(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.coeff(x).try_inverse().ok_or_else(|| Error::SingularMetric(x.to_vec()))
    }

    /// `√det g_{jk}(x)`.
    pub fn sqrt_det(&self, x: &[f64]) -> f64 {
        1.0 / self.coeff(x).determinant().sqrt()
    }

    pub fn is_smooth_at(&self, x: &[f64]) -> bool {
        self.smooth_at.as_ref().is_none_or(|p| p(x))
    }

    /// Smallest eigenvalue of `g^{jk}(x)`; errors when below `c₀`.
    pub fn check_ellipticity(&self, x: &[f64]) -> Result<f64> {
        let eig = self.coeff(x).symmetric_eigenvalues().min();
        if !(eig >= self.ellipticity_c0 * (1.0 - 1e-12)) || eig <= 0.0 {
            return Err(Error::Ellipticity { point: x.to_vec(), eigen: eig });
        }
        Ok(eig)
    }
}

/// Which measure the divergence form and the norms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    #[default]
    Riemannian,
    Euclidean,
}

/// Spatial discretization of `D_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpatialScheme {
    /// Forward inner / backward outer differences, coefficients at staggered points.
    #[default]
    FluxDifference,
    /// Fourier differentiation, coefficients at nodes.
    Spectral,
}

/// A coefficient `c(t, x) = a(t)·β(x)` with `a` Gevrey in time.
#[derive(Clone)]
pub struct SpaceTimeCoefficient {
    pub time: GevreyFunction,
    pub space: Arc<dyn Fn(&[f64]) -> C64 + Send + Sync>,
}

impl std::fmt::Debug for SpaceTimeCoefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpaceTimeCoefficient").field("time", &self.time).finish()
    }
}

impl SpaceTimeCoefficient {
    pub fn time_only(time: GevreyFunction) -> Self {
        Self { time, space: Arc::new(|_| C64::new(1.0, 0.0)) }
    }

    fn sample(&self, grid: &TimeSpaceGrid) -> Field {
        let g = Arc::new(grid.clone());
        let a: Vec<f64> = (0..grid.n_t).map(|it| self.time.value(grid.t(it))).collect();
        let b: Vec<C64> = grid.space_points().iter().map(|x| (self.space)(x)).collect();
        Field::zeros(&g).map_indexed(|_, it, ix| b[ix] * a[it])
    }
}

/// Lower-order terms `Σ b^j ∂_{x_j} + q`.
#[derive(Debug, Clone, Default)]
pub struct LowerOrderTerms {
    pub b: Vec<Option<SpaceTimeCoefficient>>,
    pub q: Option<SpaceTimeCoefficient>,
}

impl LowerOrderTerms {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.q.is_none() && self.b.iter().all(Option::is_none)
    }

    /// Registry lookup used by configuration files.
    pub fn from_key(key: &str, dim: usize) -> Result<Self> {
        let mut b = vec![None; dim];
        let q;
        match key {
            "none" => return Ok(Self::none()),
            "unit_potential" => q = Some(SpaceTimeCoefficient::time_only(GevreyFunction::constant(1.0))),
            "sin_drift" => {
                b[0] = Some(SpaceTimeCoefficient::time_only(GevreyFunction::sin(1.0)));
                q = None;
            }
            "exp_inverse" => {
                b[0] = Some(SpaceTimeCoefficient::time_only(GevreyFunction::exp_inverse()));
                q = Some(SpaceTimeCoefficient::time_only(GevreyFunction::exp_inverse()));
            }
            _ => return Err(param("lot", format!("unknown lower-order terms `{key}`"))),
        }
        Ok(Self { b, q })
    }

    /// Time coefficients, for Gevrey certification.
    pub fn time_functions(&self) -> Vec<&GevreyFunction> {
        self.b.iter().flatten().chain(self.q.iter()).map(|c| &c.time).collect()
    }
}

/// Discretized operator bound to a grid: precomputed densities and flux coefficients.
#[derive(Debug, Clone)]
pub struct Schrodinger {
    grid: Arc<TimeSpaceGrid>,
    scheme: SpatialScheme,
    rho: Vec<f64>,
    // a[j*d + k][ix] = √det g · g^{jk}
    a: Vec<Vec<f64>>,
}

impl Schrodinger {
    pub fn new(metric: &Metric, grid: &Arc<TimeSpaceGrid>, scheme: SpatialScheme, density: Density) -> Result<Self> {
        let d = grid.dim();
        if metric.dim() != d {
            return Err(param("metric", format!("dimension {} does not match grid {d}", metric.dim())));
        }
        let points = grid.space_points();
        let rho_at = |x: &[f64]| match density {
            Density::Riemannian => metric.sqrt_det(x),
            Density::Euclidean => 1.0,
        };
        let mut rho = Vec::with_capacity(points.len());
        for x in &points {
            metric.check_ellipticity(x)?;
            rho.push(rho_at(x));
        }
        let mut a = vec![Vec::with_capacity(points.len()); d * d];
        for x in &points {
            for j in 0..d {
                for k in 0..d {
                    let mut y = x.clone();
                    if scheme == SpatialScheme::FluxDifference {
                        y[j] += 0.25 * grid.dx(j);
                        y[k] += 0.25 * grid.dx(k);
                    }
                    let c = metric.coeff(&y);
                    if j == k && c[(j, j)] <= 0.0 {
                        return Err(Error::Ellipticity { point: y, eigen: c[(j, j)] });
                    }
                    a[j * d + k].push(rho_at(&y) * c[(j, k)]);
                }
            }
        }
        Ok(Self { grid: grid.clone(), scheme, rho, a })
    }

    pub fn grid(&self) -> &Arc<TimeSpaceGrid> {
        &self.grid
    }

    pub fn scheme(&self) -> SpatialScheme {
        self.scheme
    }

    /// Volume element per spatial point.
    pub fn volume(&self) -> &[f64] {
        &self.rho
    }

    fn inner_d(&self, u: &Field, k: usize) -> Field {
        match self.scheme {
            SpatialScheme::FluxDifference => dx_forward(u, k),
            SpatialScheme::Spectral => dx_spectral(u, k),
        }
        .expect("axis in range")
    }

    fn outer_d(&self, u: &Field, j: usize) -> Field {
        match self.scheme {
            SpatialScheme::FluxDifference => dx_backward(u, j),
            SpatialScheme::Spectral => dx_spectral(u, j),
        }
        .expect("axis in range")
    }

    /// Centered first derivative `D_{x_j}` for lower-order terms.
    pub fn first_derivative(&self, u: &Field, j: usize) -> Field {
        match self.scheme {
            SpatialScheme::FluxDifference => dx_apply(u, j),
            SpatialScheme::Spectral => dx_spectral(u, j),
        }
        .expect("axis in range")
    }

    /// `Σ_{j,k} (1/√det g) D_j(√det g g^{jk} D_k u) = −Δ_g u`, with each `D` supplied.
    fn divergence_part(
        &self,
        u: &Field,
        inner: impl Fn(&Field, usize) -> Field,
        outer: impl Fn(&Field, usize) -> Field,
    ) -> Field {
        let d = self.grid.dim();
        let du: Vec<Field> = (0..d).map(|k| inner(u, k)).collect();
        let mut acc = Field::zeros(&self.grid);
        for j in 0..d {
            let mut flux = Field::zeros(&self.grid);
            for (k, duk) in du.iter().enumerate() {
                let a = &self.a[j * d + k];
                flux = flux.add(&duk.map_indexed(|v, _, ix| v * a[ix]));
            }
            acc = acc.add(&outer(&flux, j));
        }
        acc.map_indexed(|v, _, ix| v / self.rho[ix])
    }

    /// `−Δ_g u` in divergence form.
    pub fn minus_laplacian(&self, u: &Field) -> Field {
        self.divergence_part(u, |v, k| self.inner_d(v, k), |v, j| self.outer_d(v, j))
    }

    /// `P u = −D_t u − Σ (1/√det g) D_j √det g g^{jk} D_k u`.
    pub fn apply_p0(&self, u: &Field) -> Field {
        dt_apply(u).add(&self.minus_laplacian(u)).scale(C64::new(-1.0, 0.0))
    }

    /// `P_{b,q} u = P u + Σ b^j ∂_{x_j} u + q u`.
    pub fn apply_pbq(&self, u: &Field, lot: &LowerOrderTerms) -> Field {
        let mut out = self.apply_p0(u);
        for (j, b) in lot.b.iter().enumerate() {
            if let Some(b) = b {
                // ∂_j = i D_j
                let du = self.first_derivative(u, j).scale(C64::i());
                out = out.add(&du.zip(&b.sample(&self.grid), |v, c| v * c));
            }
        }
        if let Some(q) = &lot.q {
            out = out.add(&u.zip(&q.sample(&self.grid), |v, c| v * c));
        }
        out
    }

    /// `P_{φ,μ} v`, every `D_k` replaced by `D_k + iτ∂_kφ − μφ''_{t,k} D_t/τ²`.
    pub fn apply_p_phi_mu(&self, v: &Field, w: &QuadraticWeight, mu: f64, tau: f64) -> Result<Field> {
        let d = self.grid.dim();
        if w.dim() != d {
            return Err(Error::NonQuadraticWeight);
        }
        if !(tau > 0.0) {
            return Err(param("tau", format!("must be positive, got {tau}")));
        }
        let grid = self.grid.clone();
        let points = grid.space_points();
        let ns = grid.n_space();
        // ∂_kφ on the grid, k = 0 is time
        let grads: Vec<Vec<f64>> = (0..=d)
            .map(|k| (0..grid.len()).map(|i| w.gradient(grid.t(i / ns), &points[i % ns])[k]).collect())
            .collect();
        let hess = w.hessian();
        let conj = |u: &Field, k: usize, base: Field| -> Field {
            let g = &grads[k];
            let c = mu * hess[(0, k)] / (tau * tau);
            let mut out = base.add(&u.map_indexed(|z, it, ix| z * C64::new(0.0, tau * g[it * ns + ix])));
            if c != 0.0 {
                out = out.sub(&dt_apply(u).scale(C64::new(c, 0.0)));
            }
            out
        };
        let time_part = conj(v, 0, dt_apply(v));
        let space = self.divergence_part(
            v,
            |u, k| conj(u, k + 1, self.inner_d(u, k)),
            |u, j| conj(u, j + 1, self.outer_d(u, j)),
        );
        Ok(time_part.add(&space).scale(C64::new(-1.0, 0.0)))
    }
}

/// `P u` with flux differencing and the Riemannian density.
pub fn apply_p0(u: &Field, m: &Metric) -> Result<Field> {
    Ok(Schrodinger::new(m, u.grid(), SpatialScheme::FluxDifference, Density::Riemannian)?.apply_p0(u))
}

/// `P_{b,q} u` with flux differencing and the Riemannian density.
pub fn apply_pbq(u: &Field, m: &Metric, lot: &LowerOrderTerms) -> Result<Field> {
    Ok(Schrodinger::new(m, u.grid(), SpatialScheme::FluxDifference, Density::Riemannian)?.apply_pbq(u, lot))
}

/// `P_{φ,μ} v` with flux differencing and the Riemannian density.
pub fn apply_p_phi_mu(v: &Field, m: &Metric, w: &QuadraticWeight, mu: f64, tau: f64) -> Result<Field> {
    Schrodinger::new(m, v.grid(), SpatialScheme::FluxDifference, Density::Riemannian)?.apply_p_phi_mu(v, w, mu, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Quadratic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: &Arc<TimeSpaceGrid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        Field::from_values(g, v).unwrap()
    }

    #[test]
    fn flux_laplacian_matches_three_point_formula() {
        let g = Arc::new(TimeSpaceGrid::new_1d((0.0, 1.0, 4), (0.0, 2.0 * std::f64::consts::PI, 16)).unwrap());
        let m = Metric::lipschitz_sin(1);
        let op = Schrodinger::new(&m, &g, SpatialScheme::FluxDifference, Density::Riemannian).unwrap();
        let u = random_field(&g, 1);
        let lap = op.minus_laplacian(&u);
        let h = g.dx(0);
        let n = 16;
        let a = |x: f64| m.sqrt_det(&[x]) * m.coeff(&[x])[(0, 0)];
        for it in 0..4 {
            for i in 0..n {
                let x = g.x(0, i);
                let at = |k: usize| u.values()[it * n + k % n];
                let right = a(x + h / 2.0) * (at(i + 1) - at(i));
                let left = a(x - h / 2.0) * (at(i) - at(i + n - 1));
                let expected = -(right - left) / (h * h * m.sqrt_det(&[x]));
                assert!((lap.values()[it * n + i] - expected).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_symmetric_in_weighted_inner_product() {
        let g = Arc::new(TimeSpaceGrid::new((0.0, 1.0, 4), &[(0.0, 6.0, 8), (0.0, 5.0, 8)]).unwrap());
        for scheme in [SpatialScheme::FluxDifference, SpatialScheme::Spectral] {
            for m in [Metric::anisotropic_cos(), Metric::conformal_exp(2)] {
                let op = Schrodinger::new(&m, &g, scheme, Density::Riemannian).unwrap();
                let (u, v) = (random_field(&g, 2), random_field(&g, 3));
                let vol = op.volume();
                let lhs = op.minus_laplacian(&u).inner(&v, Some(vol));
                let rhs = u.inner(&op.minus_laplacian(&v), Some(vol));
                if scheme == SpatialScheme::FluxDifference {
                    assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
                }
                // nonnegativity
                assert!(op.minus_laplacian(&u).inner(&u, Some(vol)).re > -1e-10 || scheme == SpatialScheme::Spectral);
            }
        }
    }

    #[test]
    fn single_mode_symbol() {
        let (lt, lx) = (4.0, 2.0 * std::f64::consts::PI);
        let g = Arc::new(TimeSpaceGrid::new_1d((0.0, lt, 16), (0.0, lx, 32)).unwrap());
        let (w, k) = (2.0 * std::f64::consts::PI * 3.0 / lt, 5.0);
        let u = Field::from_fn(&g, |t, x| C64::from_polar(1.0, w * t + k * x[0]));
        let spectral = Schrodinger::new(&Metric::flat(1), &g, SpatialScheme::Spectral, Density::Riemannian).unwrap();
        let pu = spectral.apply_p0(&u);
        let exact = u.scale(C64::new(-(w + k * k), 0.0));
        assert!(pu.sub(&exact).max_abs() < 1e-10);
        let fd = Schrodinger::new(&Metric::flat(1), &g, SpatialScheme::FluxDifference, Density::Riemannian).unwrap();
        let h = g.dx(0);
        let k_fd = 2.0 * (k * h / 2.0).sin() / h;
        let exact = u.scale(C64::new(-(w + k_fd * k_fd), 0.0));
        assert!(fd.apply_p0(&u).sub(&exact).max_abs() < 1e-10);
    }

    #[test]
    fn lower_order_terms_add_hand_expansion() {
        let g = Arc::new(TimeSpaceGrid::new_1d((0.0, 2.0, 8), (0.0, 2.0 * std::f64::consts::PI, 16)).unwrap());
        let m = Metric::flat(1);
        let u = random_field(&g, 4);
        let p = apply_p0(&u, &m).unwrap();
        let unit = apply_pbq(&u, &m, &LowerOrderTerms::from_key("unit_potential", 1).unwrap()).unwrap();
        assert!(unit.sub(&p).sub(&u).max_abs() < 1e-14);
        let drift = apply_pbq(&u, &m, &LowerOrderTerms::from_key("sin_drift", 1).unwrap()).unwrap();
        let du = dx_apply(&u, 0).unwrap().scale(C64::i());
        let expected = du.map_indexed(|v, it, _| v * g.t(it).sin());
        assert!(drift.sub(&p).sub(&expected).max_abs() < 1e-12);
        assert!(apply_pbq(&u, &m, &LowerOrderTerms::none()).unwrap().sub(&p).max_abs() == 0.0);
    }

    #[test]
    fn conjugation_by_exponential_weight() {
        // μ = 0: P_φ v = e^{τφ} P (e^{−τφ} v) for smooth compactly supported v
        let g = Arc::new(TimeSpaceGrid::new_1d((-4.0, 8.0, 64), (-4.0, 8.0, 128)).unwrap());
        let m = Metric::flat(1);
        let phi = Quadratic::new(vec![0.0, 0.0], vec![0.3, 0.5], nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.4])).unwrap();
        let w = QuadraticWeight::new(phi, |_| 0.0).unwrap();
        let tau = 2.0;
        let v = Field::from_fn(&g, |t, x| C64::new((-2.0 * t * t - 2.0 * x[0] * x[0]).exp(), 0.0));
        let op = Schrodinger::new(&m, &g, SpatialScheme::Spectral, Density::Riemannian).unwrap();
        let lhs = op.apply_p_phi_mu(&v, &w, 0.0, tau).unwrap();
        let e = |s: f64| {
            let (w, g) = (w.clone(), g.clone());
            move |z: C64, it: usize, ix: usize| z * (s * tau * w.value(g.t(it), &[g.x(0, ix)])).exp()
        };
        let rhs = op.apply_p0(&v.map_indexed(e(-1.0))).map_indexed(e(1.0));
        assert!(lhs.sub(&rhs).max_abs() < 1e-8 * lhs.max_abs());
    }

    #[test]
    fn ellipticity_failure_is_reported() {
        let g = Arc::new(TimeSpaceGrid::new_1d((0.0, 1.0, 4), (0.0, 1.0, 4)).unwrap());
        let bad = Metric::new("bad", 1, 0.5, 0.0, |_| nalgebra::DMatrix::from_element(1, 1, -1.0));
        assert!(Schrodinger::new(&bad, &g, SpatialScheme::FluxDifference, Density::Riemannian).is_err());
    }
}
