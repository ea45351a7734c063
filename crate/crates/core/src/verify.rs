//! Large-parameter sweeps of the subelliptic and Carleman inequalities, exponential
//! decay fits, manufactured data and the vanishing-region certifier.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugation::{apply_q, ConjugatorParams};
use crate::error::{param, Error, Result};
use crate::gevrey::Plateau;
use crate::grid::{dt_apply, norm_anisotropic, norm_hk_t_h1_x, l2_h1_norm, Field, NormParams, TimeSpaceGrid, C64};
use crate::schrodinger::{Density, LowerOrderTerms, Metric, Schrodinger, SpatialScheme};
use crate::weights::{
    admissibility_check, auto_lambda, ball_samples, build_weight, noncharacteristic_value, AdmissibilityConfig,
    BuiltWeight, C2Function, Quadratic, QuadraticWeight, SurfaceFunction,
};

/// Least-squares line `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares. An exact fit has `R² = 1`, including a constant ladder.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<DecayFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::Fit { needed: 2, got: n.min(ys.len()) });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(param("ladder", "abscissae are all equal"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let scale = ys.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE);
    let r_squared = if ss_tot <= 1e-24 * scale { if ss_res <= 1e-24 * scale { 1.0 } else { 0.0 } } else { 1.0 - ss_res / ss_tot };
    Ok(DecayFit { slope, intercept, r_squared })
}

/// Fit of `log(value)` against `x`; needs at least 4 positive values.
pub fn decay_rate_fit(ladder: &[(f64, f64)]) -> Result<DecayFit> {
    let positive = ladder.iter().filter(|(_, v)| *v > 0.0 && v.is_finite()).count();
    if ladder.len() < 4 || positive < ladder.len() {
        return Err(Error::Fit { needed: 4.max(ladder.len()), got: positive });
    }
    let xs: Vec<f64> = ladder.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = ladder.iter().map(|p| p.1.ln()).collect();
    linear_fit(&xs, &ys)
}

/// PASS/FAIL verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Boundedness rule for a profile: the max over the last quarter of the entries is at
/// most twice the median of all entries. Returns `(median, last_quartile_max, pass)`.
pub fn bounded_profile(values: &[f64]) -> (f64, f64, bool) {
    let n = values.len();
    let tail = n.div_ceil(4).max(1).min(n);
    let med = median(values);
    let lq = values[n - tail..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (med, lq, n > 0 && lq.is_finite() && lq <= 2.0 * med)
}

/// Kind of test fields used by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// `e^{iωt + ik n·x}` times a bump, `(ω, k) = (a|∇φ|²τ², b|∇φ|τ)` on a fixed lattice of `(a, b)`.
    ModulatedGaussian,
    /// A bump times a seeded random sum of modes in the same anisotropic scaling.
    RandomBandLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFamily {
    pub kind: ProbeKind,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Support radius of the probes around the center.
    pub radius: f64,
}

/// `(a, b)` lattice; `(1, 0)` is the characteristic point of the conjugated symbol.
const ANISO_LATTICE: [(f64, f64); 16] = [
    (1.0, 0.0),
    (0.0, 0.0),
    (1.0, 0.5),
    (0.5, 0.0),
    (2.0, 0.0),
    (0.0, 1.0),
    (1.0, 1.0),
    (-1.0, 0.0),
    (1.0, -1.0),
    (0.5, 0.5),
    (1.5, 0.0),
    (0.0, 2.0),
    (2.0, 1.0),
    (-1.0, 1.0),
    (0.25, 0.0),
    (1.0, 0.25),
];

const RANDOM_MODES: usize = 6;

/// Smooth bump `exp(1 − 1/(1 − s²))`, `s = |y − c|/ρ`, equal to 1 at the center.
pub fn bump(y: &[f64], c: &[f64], rho: f64) -> f64 {
    let s2 = y.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (rho * rho);
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

fn y_of(g: &TimeSpaceGrid, it: usize, x: &[f64]) -> Vec<f64> {
    std::iter::once(g.t(it)).chain(x.iter().copied()).collect()
}

struct Probe {
    label: String,
    clamped: bool,
    field: Field,
}

struct ProbeScales {
    center: Vec<f64>,
    grad_norm: f64,
    direction: Vec<f64>,
    omega_cap: f64,
    k_cap: f64,
}

impl ProbeScales {
    fn new(grid: &TimeSpaceGrid, w: &QuadraticWeight, center: &[f64]) -> Self {
        let grad = w.gradient(center[0], &center[1..]);
        let gx = &grad[1..];
        let grad_norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let direction = if grad_norm > 0.0 {
            gx.iter().map(|v| v / grad_norm).collect()
        } else {
            let mut e = vec![0.0; gx.len()];
            e[0] = 1.0;
            e
        };
        let k_cap = (0..grid.dim()).map(|a| 0.5 * std::f64::consts::PI / grid.dx(a)).fold(f64::INFINITY, f64::min);
        Self { center: center.to_vec(), grad_norm: grad_norm.max(1.0), direction, omega_cap: 0.5 * grid.nyquist_t(), k_cap }
    }

    /// Frequencies for lattice point `(a, b)` at `τ`, clamped to half the grid Nyquist.
    fn mode(&self, a: f64, b: f64, tau: f64) -> (f64, f64, bool) {
        let g = self.grad_norm;
        let (om, k) = (a * g * g * tau * tau, b * g * tau);
        let (omc, kc) = (om.clamp(-self.omega_cap, self.omega_cap), k.clamp(-self.k_cap, self.k_cap));
        (omc, kc, omc != om || kc != k)
    }
}

fn make_probes(family: &ProbeFamily, grid: &Arc<TimeSpaceGrid>, sc: &ProbeScales, tau: f64) -> Result<Vec<Probe>> {
    let c = &sc.center;
    let phase = |t: f64, x: &[f64], om: f64, k: f64| {
        let xn: f64 = x.iter().zip(&c[1..]).zip(&sc.direction).map(|((a, b), n)| (a - b) * n).sum();
        C64::from_polar(1.0, om * (t - c[0]) + k * xn)
    };
    let envelope = |t: f64, x: &[f64]| {
        let y: Vec<f64> = std::iter::once(t).chain(x.iter().copied()).collect();
        bump(&y, c, family.radius)
    };
    match family.kind {
        ProbeKind::ModulatedGaussian => {
            if family.count > ANISO_LATTICE.len() {
                return Err(param("probe_family.count", format!("at most {} lattice probes", ANISO_LATTICE.len())));
            }
            Ok(ANISO_LATTICE[..family.count]
                .iter()
                .map(|&(a, b)| {
                    let (om, k, clamped) = sc.mode(a, b, tau);
                    let field = Field::from_fn(grid, |t, x| phase(t, x, om, k) * envelope(t, x));
                    Probe { label: format!("lattice(a={a},b={b})"), clamped, field }
                })
                .collect())
        }
        ProbeKind::RandomBandLimited => Ok((0..family.count)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(family.seed);
                rng.set_stream(j as u64);
                let mut clamped = false;
                let modes: Vec<(f64, f64, C64)> = (0..RANDOM_MODES)
                    .map(|_| {
                        let a = rng.gen_range(-1.0..2.0);
                        let b = rng.gen_range(-1.5..1.5);
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        let (om, k, cl) = sc.mode(a, b, tau);
                        clamped |= cl;
                        (om, k, C64::new(re, im))
                    })
                    .collect();
                let field = Field::from_fn(grid, |t, x| {
                    let e = envelope(t, x);
                    if e == 0.0 {
                        return C64::new(0.0, 0.0);
                    }
                    modes.iter().map(|&(om, k, z)| z * phase(t, x, om, k)).sum::<C64>() * e
                });
                Probe { label: format!("random#{j}"), clamped, field }
            })
            .collect()),
    }
}

/// Where the weight of a sweep or certification comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSource {
    /// `e^{λΨ} − 1`, Taylor-truncated at the center; `λ = 2^p` auto-selected when absent.
    Convexified {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default = "default_max_power")]
        max_power: u32,
    },
    /// `φ = Ψ` with `f = 0`, so that `B ≡ 0`.
    Linear,
}

fn default_max_power() -> u32 {
    8
}

fn default_scheme() -> SpatialScheme {
    SpatialScheme::FluxDifference
}

/// Parameters shared by the sweeps and the certifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    pub mu: f64,
    pub probe_family: ProbeFamily,
    pub metric_key: String,
    pub weight_source: WeightSource,
    pub lot_key: String,
    /// Exponent `𝖽` of the error term.
    pub d_margin: f64,
    /// `(t₀, x₀)`.
    pub center: Vec<f64>,
    /// Gradient of the affine surface function `Ψ` in `(t, x)`.
    pub surface_grad: Vec<f64>,
    /// Radius `r` of the admissibility ball.
    pub ball_radius: f64,
    /// Demanded constant `C₀`.
    pub c0: f64,
    #[serde(default = "default_scheme")]
    pub scheme: SpatialScheme,
}

impl SweepConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.tau_grid.is_empty() {
            return Err(param("tau_grid", "must not be empty"));
        }
        if self.tau_grid.iter().any(|t| !(*t >= 1.0 && t.is_finite())) || self.tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param("tau_grid", "values must be >= 1 and strictly ascending"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(param("mu", "must be positive"));
        }
        if !(self.d_margin > 0.0 && self.d_margin.is_finite()) {
            return Err(param("d_margin", "must be positive"));
        }
        if self.center.len() != dim + 1 {
            return Err(param("center", format!("needs {} coordinates (t, x)", dim + 1)));
        }
        if self.surface_grad.len() != dim + 1 {
            return Err(param("surface_grad", format!("needs {} components (t, x)", dim + 1)));
        }
        if !(self.ball_radius > 0.0) {
            return Err(param("ball_radius", "must be positive"));
        }
        if !(self.c0 >= 0.0) {
            return Err(param("c0", "must be nonnegative"));
        }
        if !(self.probe_family.radius > 0.0) || self.probe_family.count == 0 {
            return Err(param("probe_family", "need a positive radius and count"));
        }
        Ok(())
    }

    /// The affine `Ψ` of the configuration.
    pub fn surface(&self) -> Result<SurfaceFunction> {
        SurfaceFunction::affine(self.center.clone(), self.surface_grad.clone())
    }

    fn admissibility(&self) -> AdmissibilityConfig {
        AdmissibilityConfig { seed: self.probe_family.seed, ..AdmissibilityConfig::new(self.c0, self.ball_radius) }
    }
}

/// Builds the weight of `source` for `psi` and checks admissibility on `B(center, r)`.
pub fn weight_from_source(source: &WeightSource, psi: &SurfaceFunction, m: &Metric, cfg: &SweepConfig) -> Result<BuiltWeight> {
    let adm = cfg.admissibility();
    match *source {
        WeightSource::Convexified { lambda: Some(l), delta, .. } => {
            build_weight(psi, m, l, delta.unwrap_or(0.01 * cfg.ball_radius * cfg.ball_radius), &adm)
        }
        WeightSource::Convexified { lambda: None, delta, max_power } => auto_lambda(psi, m, &adm, delta, max_power),
        WeightSource::Linear => {
            let c = psi.center.clone();
            let grad = psi.psi.gradient(&c);
            let weight = QuadraticWeight::new(Quadratic::affine(c, grad)?, |_| 0.0)?;
            let report = admissibility_check(m, &weight, &adm)?;
            Ok(BuiltWeight { lambda: 0.0, delta: 0.0, weight, report })
        }
    }
}

fn require_admissible(b: &BuiltWeight) -> Result<()> {
    let r = &b.report;
    if r.pass {
        return Ok(());
    }
    Err(Error::Inadmissible(format!(
        "min B margin {:.3e}, min E margin {:.3e}, min |grad phi|^2 {:.3e}",
        r.min_b_eigen_margin, r.min_e_margin, r.min_grad_norm_sq
    )))
}

fn check_support_in_grid(grid: &TimeSpaceGrid, center: &[f64], radius: f64) -> Result<()> {
    let inside = |start: f64, period: f64, step: f64, c: f64| c - radius > start + step && c + radius < start + period - step;
    let ok = inside(grid.t_start, grid.t_period, grid.dt(), center[0])
        && (0..grid.dim()).all(|a| inside(grid.x_start[a], grid.x_period[a], grid.dx(a), center[a + 1]));
    if !ok {
        return Err(param("grid", "the probe support does not fit inside the box"));
    }
    Ok(())
}

/// One `(τ, probe)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub tau: f64,
    pub probe: usize,
    pub label: String,
    pub clamped: bool,
    pub op_norm_sq: f64,
    pub error_term: f64,
    pub tau_times_aniso_norm_sq: f64,
    pub ratio: f64,
    /// Carleman sweeps only: the error term and ratio with `𝖽/2`.
    pub error_term_half_d: Option<f64>,
    pub ratio_half_d: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMax {
    pub tau: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub max_ratio_per_tau: Vec<TauMax>,
    pub median: f64,
    pub last_quartile_max: f64,
    /// Fit of `log(max ratio)` against `log τ`, when there are at least 4 values of `τ`.
    pub trend: Option<DecayFit>,
    /// Smallest `τ` from which every later max ratio is at most twice the median.
    pub tau0_estimate: Option<f64>,
    /// Largest `|ratio(𝖽/2)/ratio(𝖽) − 1|` over the upper half of the `τ` grid.
    pub max_change_half_d: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: String,
    pub mu: f64,
    pub k: u32,
    pub d_margin: f64,
    pub with_lot: bool,
    pub lambda: f64,
    pub min_b_eigen_margin: f64,
    pub cells: Vec<SweepCell>,
    pub summary: SweepSummary,
}

#[derive(Clone, Copy)]
enum SweepKind {
    Subelliptic,
    Carleman { with_lot: bool, k: u32 },
}

struct SweepSetup {
    op: Schrodinger,
    built: BuiltWeight,
    lot: LowerOrderTerms,
    scales: ProbeScales,
}

fn setup(cfg: &SweepConfig, grid: &Arc<TimeSpaceGrid>, support_limit: f64, with_lot: bool) -> Result<SweepSetup> {
    cfg.validate(grid.dim())?;
    if cfg.probe_family.radius > support_limit * (1.0 + 1e-12) {
        return Err(param("probe_family.radius", format!("must be at most {support_limit:.4e}")));
    }
    check_support_in_grid(grid, &cfg.center, cfg.probe_family.radius)?;
    let m = Metric::from_key(&cfg.metric_key, grid.dim())?;
    let lot = if with_lot { LowerOrderTerms::from_key(&cfg.lot_key, grid.dim())? } else { LowerOrderTerms::none() };
    for f in lot.time_functions() {
        if f.class_s > 2.0 {
            return Err(param("lot_key", format!("`{}` is not certified Gevrey-2 (s = {})", f.name(), f.class_s)));
        }
    }
    let psi = cfg.surface()?;
    let built = weight_from_source(&cfg.weight_source, &psi, &m, cfg)?;
    require_admissible(&built)?;
    let op = Schrodinger::new(&m, grid, cfg.scheme, Density::Riemannian)?;
    let scales = ProbeScales::new(grid, &built.weight, &cfg.center);
    Ok(SweepSetup { op, built, lot, scales })
}

fn exp_weighted(u: &Field, w: &QuadraticWeight, tau: f64) -> Field {
    let g = u.grid().clone();
    let pts = g.space_points();
    u.map_indexed(|v, it, ix| if v == C64::new(0.0, 0.0) { v } else { v * (tau * w.value(g.t(it), &pts[ix])).exp() })
}

fn measure(s: &SweepSetup, cfg: &SweepConfig, kind: SweepKind, tau: f64, probe: usize, pr: &Probe) -> Result<SweepCell> {
    let vol = Some(s.op.volume());
    let w = &s.built.weight;
    let sq = |f: &Field| f.l2_norm_weighted(s.op.volume()).powi(2);
    let aniso = NormParams::new(tau, 0)?;
    let v = &pr.field;
    let (op_norm_sq, error_term, rhs, half) = match kind {
        SweepKind::Subelliptic => {
            let pv = s.op.apply_p_phi_mu(v, w, cfg.mu, tau)?;
            let op = sq(&pv);
            let err = sq(&dt_apply(v)) / tau;
            (op, err, tau * norm_anisotropic(v, aniso, vol).powi(2), None)
        }
        SweepKind::Carleman { with_lot, k } => {
            let p = ConjugatorParams::new(cfg.mu, tau)?;
            let pw = if with_lot { s.op.apply_pbq(v, &s.lot) } else { s.op.apply_p0(v) };
            let qpw = apply_q(&pw, w, &p)?;
            let qw = apply_q(v, w, &p)?;
            let e_norm_sq = norm_hk_t_h1_x(&exp_weighted(v, w, tau), NormParams::new(tau, k)?, vol).powi(2);
            let op = sq(&qpw);
            let err = (-cfg.d_margin * tau).exp() * e_norm_sq;
            let err_half = (-0.5 * cfg.d_margin * tau).exp() * e_norm_sq;
            (op, err, tau * norm_anisotropic(&qw, aniso, vol).powi(2), Some(err_half))
        }
    };
    let ratio = rhs / (op_norm_sq + error_term);
    let values = [op_norm_sq, error_term, rhs, ratio];
    if values.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(param("probe_family", format!("non-finite or negative measurement at tau = {tau}, probe {probe}")));
    }
    Ok(SweepCell {
        tau,
        probe,
        label: pr.label.clone(),
        clamped: pr.clamped,
        op_norm_sq,
        error_term,
        tau_times_aniso_norm_sq: rhs,
        ratio,
        error_term_half_d: half,
        ratio_half_d: half.map(|e| rhs / (op_norm_sq + e)),
    })
}

fn summarize(taus: &[f64], cells: &[SweepCell]) -> Result<SweepSummary> {
    let maxes: Vec<f64> = taus
        .iter()
        .map(|&t| cells.iter().filter(|c| c.tau == t).map(|c| c.ratio).fold(0.0, f64::max))
        .collect();
    let (med, lq, pass) = bounded_profile(&maxes);
    let trend = if taus.len() >= 4 && maxes.iter().all(|m| *m > 0.0) {
        Some(decay_rate_fit(&taus.iter().zip(&maxes).map(|(t, m)| (t.ln(), *m)).collect::<Vec<_>>())?)
    } else {
        None
    };
    let tau0_estimate = (0..taus.len()).find(|&i| maxes[i..].iter().all(|m| *m <= 2.0 * med)).map(|i| taus[i]);
    let upper = taus[taus.len() / 2];
    let max_change_half_d = cells
        .iter()
        .filter(|c| c.tau >= upper)
        .filter_map(|c| c.ratio_half_d.map(|r| (r / c.ratio - 1.0).abs()))
        .reduce(f64::max);
    Ok(SweepSummary {
        max_ratio_per_tau: taus.iter().zip(&maxes).map(|(&tau, &max_ratio)| TauMax { tau, max_ratio }).collect(),
        median: med,
        last_quartile_max: lq,
        trend,
        tau0_estimate,
        max_change_half_d,
        verdict: Verdict::from_bool(pass),
    })
}

fn run_sweep(cfg: &SweepConfig, grid: &Arc<TimeSpaceGrid>, kind: SweepKind) -> Result<SweepReport> {
    let (limit, with_lot, k, name) = match kind {
        SweepKind::Subelliptic => (cfg.ball_radius, false, 0, "subelliptic"),
        SweepKind::Carleman { with_lot, k } => (cfg.ball_radius / 8.0, with_lot, k, "carleman"),
    };
    let s = setup(cfg, grid, limit, with_lot)?;
    let per_tau = cfg
        .tau_grid
        .par_iter()
        .map(|&tau| {
            let probes = make_probes(&cfg.probe_family, grid, &s.scales, tau)?;
            probes.iter().enumerate().map(|(j, p)| measure(&s, cfg, kind, tau, j, p)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<SweepCell> = per_tau.into_iter().flatten().collect();
    let summary = summarize(&cfg.tau_grid, &cells)?;
    Ok(SweepReport {
        kind: name.into(),
        mu: cfg.mu,
        k,
        d_margin: cfg.d_margin,
        with_lot,
        lambda: s.built.lambda,
        min_b_eigen_margin: s.built.report.min_b_eigen_margin,
        cells,
        summary,
    })
}

/// Ratios `τ∥v∥²_{H¹_τ} / (∥P_{φ,μ}v∥² + τ^{-1}∥D_t v∥²)` over the `τ` grid and the probes.
/// Refuses to run when the weight is not admissible.
pub fn subelliptic_sweep(cfg: &SweepConfig, grid: &Arc<TimeSpaceGrid>) -> Result<SweepReport> {
    run_sweep(cfg, grid, SweepKind::Subelliptic)
}

/// Ratios `τ∥Qw∥²_{H¹_τ} / (∥QPw∥² + e^{-𝖽τ}∥e^{τφ}w∥²_{H^{-k}H¹})`, with `P` replaced by
/// `P_{b,q}` when `with_lot`. Probes must lie in `B(center, r/8)`.
pub fn carleman_sweep(cfg: &SweepConfig, grid: &Arc<TimeSpaceGrid>, with_lot: bool, k: u32) -> Result<SweepReport> {
    run_sweep(cfg, grid, SweepKind::Carleman { with_lot, k })
}

/// Manufactured data for the certifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManufacturedMode {
    Zero,
    /// Bump of radius `radius` centered where `Ψ = depth < 0`; its support must stay in `{Ψ < −margin}`.
    SublevelBump { depth: f64, radius: f64, margin: f64 },
    /// Bump of radius `radius` at the surface center, cut off by `1{Ψ ≤ 0}`.
    Forcing { radius: f64 },
}

/// Grid mask of the points within one cell (in every direction) of the support of `u`.
fn support_mask(u: &Field) -> Vec<bool> {
    let g = u.grid();
    let ns = g.n_space();
    let nz: Vec<bool> = u.values().iter().map(|v| *v != C64::new(0.0, 0.0)).collect();
    let mut mask = nz.clone();
    for (i, &on) in nz.iter().enumerate() {
        if !on {
            continue;
        }
        let (it, ix) = (i / ns, i % ns);
        for dt in [g.n_t - 1, 1] {
            mask[((it + dt) % g.n_t) * ns + ix] = true;
        }
        for a in 0..g.dim() {
            for s in [-1, 1] {
                mask[it * ns + g.shift_space(ix, a, s)] = true;
            }
        }
    }
    mask
}

/// `P_{b,q}u` restricted to the support of `u` and its neighbouring cells. `P` is a
/// differential operator, so anything outside is spectral round-off of `D_t`.
fn local_pbq(op: &Schrodinger, u: &Field, lot: &LowerOrderTerms) -> Field {
    let mask = support_mask(u);
    let mut pu = op.apply_pbq(u, lot);
    pu.values_mut().iter_mut().zip(&mask).for_each(|(v, &on)| {
        if !on {
            *v = C64::new(0.0, 0.0);
        }
    });
    pu
}

/// `(u, P_{b,q} u)` for the given mode.
pub fn manufactured_solution(
    psi: &SurfaceFunction,
    grid: &Arc<TimeSpaceGrid>,
    m: &Metric,
    lot: &LowerOrderTerms,
    mode: ManufacturedMode,
) -> Result<(Field, Field)> {
    if psi.dim() != grid.dim() {
        return Err(param("psi", "dimension does not match the grid"));
    }
    let op = Schrodinger::new(m, grid, SpatialScheme::FluxDifference, Density::Riemannian)?;
    let u = match mode {
        ManufacturedMode::Zero => return Ok((Field::zeros(grid), Field::zeros(grid))),
        ManufacturedMode::SublevelBump { depth, radius, margin } => {
            if !(depth < 0.0 && radius > 0.0 && margin >= 0.0) {
                return Err(param("mode", "need depth < 0, radius > 0, margin >= 0"));
            }
            let c0 = &psi.center;
            let grad = psi.psi.gradient(c0);
            let n2: f64 = grad.iter().map(|v| v * v).sum();
            if n2 == 0.0 {
                return Err(Error::Characteristic(0.0));
            }
            let c: Vec<f64> = c0.iter().zip(&grad).map(|(a, g)| a + depth * g / n2).collect();
            let u = Field::from_fn(grid, |t, x| {
                let y: Vec<f64> = std::iter::once(t).chain(x.iter().copied()).collect();
                C64::new(bump(&y, &c, radius), 0.0)
            });
            let pts = grid.space_points();
            let worst = (0..grid.len())
                .filter(|&i| u.values()[i] != C64::new(0.0, 0.0))
                .map(|i| psi.value(&y_of(grid, i / grid.n_space(), &pts[i % grid.n_space()])))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst >= -margin {
                return Err(param("mode.depth", format!("bump reaches Psi = {worst:.3e}, above -margin")));
            }
            u
        }
        ManufacturedMode::Forcing { radius } => {
            if !(radius > 0.0) {
                return Err(param("mode.radius", "must be positive"));
            }
            let c = psi.center.clone();
            Field::from_fn(grid, |t, x| {
                let y: Vec<f64> = std::iter::once(t).chain(x.iter().copied()).collect();
                if psi.value(&y) > 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(bump(&y, &c, radius), 0.0)
                }
            })
        }
    };
    let forcing = local_pbq(&op, &u, lot);
    Ok((u, forcing))
}

/// Knobs of [`uc_certify`] beyond the sweep configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyOptions {
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
    /// Reported for `u ≡ 0`.
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_gate")]
    pub r2_gate: f64,
    /// Test hook: each measured norm is multiplied by `e^{σZ}`, `Z` standard normal.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_side_samples")]
    pub side_samples: usize,
}

fn default_safety() -> f64 {
    0.5
}
fn default_delta_max() -> f64 {
    1.0
}
fn default_gate() -> f64 {
    0.9
}
fn default_side_samples() -> usize {
    2048
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            safety_factor: default_safety(),
            delta_max: default_delta_max(),
            r2_gate: default_gate(),
            noise_sigma: 0.0,
            noise_seed: 0,
            side_samples: default_side_samples(),
        }
    }
}

/// The certified set `{φ > −δ/2} ∩ B(center, radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub center: Vec<f64>,
    pub radius: f64,
    pub phi_threshold: f64,
    /// Grid points in the region.
    pub grid_points: usize,
}

/// Per-`τ` measurement of the certifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifySample {
    pub tau: f64,
    /// `∥Q(χu)∥`, after the optional noise hook.
    pub q_norm: f64,
    /// `∥QP(χu)∥² + e^{-𝖽τ}∥e^{τφ}χu∥²_{L²H¹}`.
    pub balance_lhs: f64,
    /// `τ∥Q(χu)∥²_{H¹_τ}`.
    pub balance_rhs: f64,
    pub balance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationResult {
    pub delta_certified: f64,
    pub degenerate: bool,
    /// `−slope` of the fit of `log∥Q(χu)∥` against `τ`.
    pub decay_rate: Option<f64>,
    pub decay_fit: Option<DecayFit>,
    pub region_descriptor: Option<RegionDescriptor>,
    pub tau_range_used: [f64; 2],
    pub lambda: f64,
    /// `−max φ` on `{Ψ ≤ 0} ∩ {r/2 ≤ |y − y₀| ≤ r}`.
    pub eta: f64,
    pub phi_max_ball: f64,
    pub d_margin: f64,
    /// `max φ` and `min φ` over the grid support of `u`.
    pub support_phi_max: Option<f64>,
    pub support_phi_min: Option<f64>,
    pub samples: Vec<CertifySample>,
    pub diagnostics: Vec<String>,
}

/// Vanishing-region certifier: from `u = 0` on `{Ψ > 0} ∩ B(y₀, r)`, measures the decay
/// of `∥Q^φ_{μ,τ}(χu)∥` in `τ` and certifies `δ = safety·rate` when the fit clears the gate
/// and the weight side conditions hold. Never certifies on a poor fit.
pub fn uc_certify(
    u: &Field,
    psi: &SurfaceFunction,
    m: &Metric,
    lot: &LowerOrderTerms,
    cfg: &SweepConfig,
    opts: &CertifyOptions,
) -> Result<CertificationResult> {
    let grid = u.grid().clone();
    cfg.validate(grid.dim())?;
    if psi.center != cfg.center {
        return Err(param("center", "must equal the surface center"));
    }
    let nc = noncharacteristic_value(psi, m, &psi.center);
    if nc.abs() <= 1e-8 {
        return Err(Error::Characteristic(nc));
    }
    let r = cfg.ball_radius;
    let y0 = &psi.center;
    let ns = grid.n_space();
    let pts = grid.space_points();
    let dist = |y: &[f64]| y.iter().zip(y0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let unorm = u.l2_norm();
    let positive_sup = (0..grid.len())
        .filter(|&i| {
            let y = y_of(&grid, i / ns, &pts[i % ns]);
            psi.value(&y) > 0.0 && dist(&y) < r
        })
        .map(|i| u.values()[i].norm())
        .fold(0.0, f64::max);
    if positive_sup > 1e-12 * unorm {
        return Err(Error::NotVanishing(positive_sup));
    }
    let built = weight_from_source(&cfg.weight_source, psi, m, cfg)?;
    require_admissible(&built)?;
    let w = &built.weight;

    let side = ball_samples(y0, r, opts.side_samples, cfg.probe_family.seed);
    let phi = |y: &[f64]| w.phi.value(y);
    let eta = -side
        .iter()
        .filter(|y| psi.value(y) <= 0.0 && (0.5 * r..=r).contains(&dist(y)))
        .map(|y| phi(y))
        .fold(f64::NEG_INFINITY, f64::max);
    let phi_max_ball = side.iter().map(|y| phi(y)).fold(f64::NEG_INFINITY, f64::max);
    let tau_range_used = [cfg.tau_grid[0], *cfg.tau_grid.last().expect("validated")];
    let mut out = CertificationResult {
        delta_certified: 0.0,
        degenerate: false,
        decay_rate: None,
        decay_fit: None,
        region_descriptor: None,
        tau_range_used,
        lambda: built.lambda,
        eta,
        phi_max_ball,
        d_margin: cfg.d_margin,
        support_phi_max: None,
        support_phi_min: None,
        samples: vec![],
        diagnostics: vec![],
    };
    let region = |delta: f64| RegionDescriptor {
        center: y0.clone(),
        radius: 0.5 * r,
        phi_threshold: -0.5 * delta,
        grid_points: (0..grid.len())
            .filter(|&i| {
                let y = y_of(&grid, i / ns, &pts[i % ns]);
                dist(&y) < 0.5 * r && phi(&y) > -0.5 * delta
            })
            .count(),
    };
    if unorm == 0.0 {
        out.degenerate = true;
        out.delta_certified = opts.delta_max;
        out.region_descriptor = Some(region(opts.delta_max));
        out.diagnostics.push("u vanishes identically: decay rate unbounded, reporting delta_max".into());
        return Ok(out);
    }

    let cut = Plateau::new(2.0, 0.5 * r, r);
    let chi_u = u.map_indexed(|v, it, ix| {
        if v == C64::new(0.0, 0.0) {
            v
        } else {
            v * cut.value(dist(&y_of(&grid, it, &pts[ix])))
        }
    });
    let support: Vec<f64> = (0..grid.len())
        .filter(|&i| u.values()[i] != C64::new(0.0, 0.0))
        .map(|i| phi(&y_of(&grid, i / ns, &pts[i % ns])))
        .collect();
    out.support_phi_max = support.iter().copied().reduce(f64::max);
    out.support_phi_min = support.iter().copied().reduce(f64::min);

    let op = Schrodinger::new(m, &grid, cfg.scheme, Density::Riemannian)?;
    let vol = op.volume();
    let p_chi_u = local_pbq(&op, &chi_u, lot);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
    let mut samples = Vec::with_capacity(cfg.tau_grid.len());
    for &tau in &cfg.tau_grid {
        let p = ConjugatorParams::new(cfg.mu, tau)?;
        let q = apply_q(&chi_u, w, &p)?;
        let qp = apply_q(&p_chi_u, w, &p)?;
        let err = (-cfg.d_margin * tau).exp() * l2_h1_norm(&exp_weighted(&chi_u, w, tau), Some(vol)).powi(2);
        let lhs = qp.l2_norm_weighted(vol).powi(2) + err;
        let rhs = tau * norm_anisotropic(&q, NormParams::new(tau, 0)?, Some(vol)).powi(2);
        let z: f64 = rng.sample(StandardNormal);
        let q_norm = q.l2_norm_weighted(vol) * (opts.noise_sigma * z).exp();
        samples.push(CertifySample { tau, q_norm, balance_lhs: lhs, balance_rhs: rhs, balance_ratio: rhs / lhs });
    }
    out.samples = samples;
    let ladder: Vec<(f64, f64)> = out.samples.iter().map(|s| (s.tau, s.q_norm)).collect();
    let fit = match decay_rate_fit(&ladder) {
        Ok(f) => f,
        Err(e) => {
            out.diagnostics.push(format!("decay fit unavailable: {e}"));
            return Ok(out);
        }
    };
    let rate = -fit.slope;
    out.decay_fit = Some(fit);
    out.decay_rate = Some(rate);
    let mut ok = true;
    if fit.r_squared < opts.r2_gate {
        out.diagnostics.push(format!("decay fit R^2 = {:.4} below gate {}", fit.r_squared, opts.r2_gate));
        ok = false;
    }
    if !(rate > 0.0) {
        out.diagnostics.push(format!("no decay: rate {rate:.4e}"));
        ok = false;
    }
    if !(eta > 0.0) {
        out.diagnostics.push(format!("side condition phi <= -eta fails: eta = {eta:.4e}"));
        ok = false;
    }
    if phi_max_ball > cfg.d_margin / 4.0 {
        out.diagnostics.push(format!("side condition phi <= d/4 fails: max phi = {phi_max_ball:.4e}"));
        ok = false;
    }
    if ok {
        let delta = opts.safety_factor * rate;
        out.delta_certified = delta;
        out.region_descriptor = Some(region(delta));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exponentials() {
        let ladder: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.5, (-3.0 * i as f64 * 0.5).exp())).collect();
        let f = decay_rate_fit(&ladder).unwrap();
        assert!((f.slope + 3.0).abs() < 1e-10 && (f.r_squared - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.5)).collect();
        let f = decay_rate_fit(&flat).unwrap();
        assert_eq!(f.slope, 0.0);
        assert!(matches!(decay_rate_fit(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0), (3.0, 1.0)]), Err(Error::Fit { .. })));
        assert!(matches!(decay_rate_fit(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]), Err(Error::Fit { .. })));
    }

    #[test]
    fn noisy_exponential_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ladder: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = i as f64 * 0.25;
                let z: f64 = rng.sample(StandardNormal);
                (x, (-2.0 * x).exp() * (1.0 + 0.05 * z))
            })
            .collect();
        let f = decay_rate_fit(&ladder).unwrap();
        assert!((f.slope + 2.0).abs() < 0.2 && f.r_squared >= 0.9);
    }

    #[test]
    fn bounded_profile_rule() {
        assert!(bounded_profile(&[1.0, 0.8, 0.7, 0.6, 0.5]).2);
        assert!(!bounded_profile(&[1.0, 1.0, 1.0, 1.0, 1.0, 5.0]).2);
        let (m, lq, _) = bounded_profile(&[1.0, 3.0, 2.0, 4.0]);
        assert_eq!((m, lq), (2.5, 4.0));
    }

    #[test]
    fn bump_is_compact_and_normalized() {
        assert_eq!(bump(&[0.0, 0.0], &[0.0, 0.0], 1.0), 1.0);
        assert_eq!(bump(&[1.0, 0.0], &[0.0, 0.0], 1.0), 0.0);
        assert!(bump(&[0.5, 0.0], &[0.0, 0.0], 1.0) > 0.0);
    }

    #[test]
    fn linear_weight_is_refused() {
        let grid = Arc::new(TimeSpaceGrid::centered(1.0, 0.025, 32, &[0.0], 0.025, 32).unwrap());
        let cfg = SweepConfig {
            tau_grid: vec![8.0, 16.0],
            mu: 1.0,
            probe_family: ProbeFamily { kind: ProbeKind::ModulatedGaussian, count: 2, seed: 1, radius: 0.01 },
            metric_key: "flat".into(),
            weight_source: WeightSource::Linear,
            lot_key: "none".into(),
            d_margin: 1.0,
            center: vec![1.0, 0.0],
            surface_grad: vec![0.0, 1.0],
            ball_radius: 0.1,
            c0: 1.0,
            scheme: SpatialScheme::FluxDifference,
        };
        assert!(matches!(subelliptic_sweep(&cfg, &grid), Err(Error::Inadmissible(_))));
    }
}
