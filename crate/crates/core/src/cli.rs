//! Command-line front end: TOML experiment configs, the eight pipelines and run artifacts.
//!
//! A run writes `report.json`, `cells.csv`, `plotdata/*.csv` and `manifest.json` into the
//! output directory. Exit codes: 0 on PASS, 1 on FAIL, 2 on configuration or runtime errors.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::conjugation::{
    build_fh, conjugation_residual_with, disjoint_support_smallness, dtk_gaussian_bound, kernel_sup_ladder,
    operator_norm_dtk_gaussian, residual_gaussian_conjugation, CutoffSuite, KernelQuadrature, TimeCutoff,
};
use crate::error::{Error, Result};
use crate::gevrey::{
    almost_analytic_extend, defect_ladder, restriction_error, zeta_interpolation_matrix, zeta_support_leak, BumpFamily,
    BumpScale, GevreyFunction,
};
use crate::grid::{fourier_transform_samples, Field, TimeSpaceGrid, C64};
use crate::schrodinger::{LowerOrderTerms, Metric};
use crate::verify::{
    carleman_sweep, decay_rate_fit, manufactured_solution, subelliptic_sweep, uc_certify, CertifyOptions, DecayFit,
    ManufacturedMode, SweepConfig, SweepReport, Verdict,
};
use crate::weights::{auto_lambda, build_weight, AdmissibilityConfig, BuiltWeight, SurfaceFunction};

/// The pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Extend,
    ConjugateResidual,
    KernelCheck,
    WeightsCheck,
    SubellipticSweep,
    CarlemanSweep,
    UcCertify,
    Identities,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Extend => "extend",
            Command::ConjugateResidual => "conjugate-residual",
            Command::KernelCheck => "kernel-check",
            Command::WeightsCheck => "weights-check",
            Command::SubellipticSweep => "subelliptic-sweep",
            Command::CarlemanSweep => "carleman-sweep",
            Command::UcCertify => "uc-certify",
            Command::Identities => "identities",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "carleman", version, about = "Numerical verification of anisotropic Carleman estimates")]
pub struct Cli {
    pub command: Command,
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Run seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Size of the worker pool.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Uniform periodic grid; every spatial axis has `n_x` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_t: usize,
    pub t_start: f64,
    pub t_period: f64,
    pub n_x: usize,
    pub x_start: Vec<f64>,
    pub x_period: Vec<f64>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Arc<TimeSpaceGrid>> {
        if self.x_start.len() != self.x_period.len() {
            return Err(config_err("grid.x_period", "needs one entry per entry of x_start"));
        }
        let space: Vec<_> = self.x_start.iter().zip(&self.x_period).map(|(&s, &p)| (s, p, self.n_x)).collect();
        TimeSpaceGrid::new((self.t_start, self.t_period, self.n_t), &space).map(Arc::new).map_err(in_section("grid"))
    }
}

fn default_functions() -> Vec<String> {
    vec!["sin".into(), "exp_inverse".into()]
}
fn default_scale() -> BumpScale {
    BumpScale::Fixed(1.0)
}
fn default_gate() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtendConfig {
    pub functions: Vec<String>,
    pub rho: f64,
    pub bump_scale: BumpScale,
    /// Gevrey index of the `ζ` family.
    pub zeta_class: f64,
    pub zeta_order: usize,
    pub zeta_tol: f64,
    pub restriction_points: Vec<f64>,
    pub restriction_tol: f64,
    /// Real part of the defect probes.
    pub x: f64,
    pub heights: Vec<f64>,
    pub r2_gate: f64,
}

impl Default for ExtendConfig {
    fn default() -> Self {
        Self {
            functions: default_functions(),
            rho: 1.0,
            bump_scale: default_scale(),
            zeta_class: 2.0,
            zeta_order: 6,
            zeta_tol: 1e-6,
            restriction_points: (0..41).map(|i| -1.0 + 0.05 * i as f64).collect(),
            restriction_tol: 1e-10,
            x: 0.4,
            heights: (0..10).map(|i| 0.3 * 0.75f64.powi(i)).collect(),
            r2_gate: default_gate(),
        }
    }
}

/// Time cutoffs around `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    pub t0: f64,
    pub r: f64,
    pub r0: f64,
    pub rho: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self { t0: 0.0, r: 0.5, r0: 4.0, rho: 2.0 }
    }
}

impl CutoffConfig {
    fn build(&self, section: &'static str) -> Result<CutoffSuite> {
        CutoffSuite::new(self.t0, self.r, self.r0, self.rho).map_err(|e| match e {
            Error::Parameter { reason, .. } => config_err(format!("{section}.cutoffs"), reason),
            other => other,
        })
    }
}

fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|p| 2f64.powi(-p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConjugateResidualConfig {
    pub functions: Vec<String>,
    pub ks: Vec<u32>,
    pub cutoffs: CutoffConfig,
    pub bump_scale: BumpScale,
    pub hs: Vec<f64>,
    /// Probe `cos(ω t) + c`.
    pub probe_frequency: f64,
    pub probe_offset: f64,
    pub r2_gate: f64,
}

impl Default for ConjugateResidualConfig {
    fn default() -> Self {
        Self {
            functions: default_functions(),
            ks: vec![0, 1],
            cutoffs: CutoffConfig::default(),
            bump_scale: default_scale(),
            hs: dyadic(4, 12),
            probe_frequency: 3.0,
            probe_offset: 0.5,
            r2_gate: default_gate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisjointConfig {
    pub lambdas: Vec<f64>,
    /// Gap between the supports `[-end, -d/2]` and `[d/2, end]`.
    pub distances: [f64; 2],
    pub support_end: f64,
    pub k: u32,
    pub m: u32,
    /// Demanded fraction of the rate `d²/8`.
    pub rate_fraction: f64,
    /// Bounds on the ratio of the two rates.
    pub ratio_bounds: [f64; 2],
}

impl Default for DisjointConfig {
    fn default() -> Self {
        Self {
            lambdas: (1..=8).map(|i| 20.0 * i as f64).collect(),
            distances: [1.0, 2.0],
            support_end: 4.0,
            k: 0,
            m: 0,
            rate_fraction: 0.9,
            ratio_bounds: [3.2, 4.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCheckConfig {
    pub functions: Vec<String>,
    pub cutoffs: CutoffConfig,
    pub bump_scale: BumpScale,
    pub hs: Vec<f64>,
    pub ts: Vec<f64>,
    pub ss: Vec<f64>,
    pub r2_gate: f64,
    pub disjoint: DisjointConfig,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self {
            functions: default_functions(),
            cutoffs: CutoffConfig::default(),
            bump_scale: default_scale(),
            hs: dyadic(4, 10),
            ts: (0..7).map(|i| -1.8 + 0.6 * i as f64).collect(),
            ss: (0..5).map(|i| -0.4 + 0.2 * i as f64).collect(),
            r2_gate: default_gate(),
            disjoint: DisjointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsCheckConfig {
    pub metric_key: String,
    /// `(t₀, x₀)`.
    pub center: Vec<f64>,
    pub surface_grad: Vec<f64>,
    pub ball_radius: f64,
    pub c0: f64,
    pub delta: Option<f64>,
    pub max_power: u32,
    pub sample_count: usize,
    /// Allowed factor between the measured and predicted growth of the `B` margin.
    pub scaling_factor: f64,
}

impl Default for WeightsCheckConfig {
    fn default() -> Self {
        Self {
            metric_key: "flat".into(),
            center: vec![0.0, 0.0],
            surface_grad: vec![0.0, 1.0],
            ball_radius: 0.1,
            c0: 1.0,
            delta: None,
            max_power: 8,
            sample_count: 256,
            scaling_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    /// Values of `μ`; empty means `sweep.mu` alone.
    pub mus: Vec<f64>,
    pub with_lot: Vec<bool>,
    pub ks: Vec<u32>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        Self { mus: vec![], with_lot: vec![false, true], ks: vec![0, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub mode: ManufacturedMode,
    #[serde(default)]
    pub options: CertifyOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitiesConfig {
    pub varsigmas: Vec<f64>,
    /// Width of the Gaussian probe of the exact conjugation check.
    pub probe_width: f64,
    pub conjugation_tol: f64,
    pub fourier_lambdas: Vec<f64>,
    pub fourier_tol: f64,
    pub dtk_ks: Vec<u32>,
    pub dtk_eps: Vec<f64>,
    pub dtk_rel_tol: f64,
    /// The operator-norm check runs on its own time grid `[0, dtk_period)` with `dtk_n` points.
    pub dtk_period: f64,
    pub dtk_n: usize,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self {
            varsigmas: vec![1.0, 10.0, 100.0],
            probe_width: 1.0,
            conjugation_tol: 1e-9,
            fourier_lambdas: vec![0.5, 1.0, 2.0],
            fourier_tol: 1e-10,
            dtk_ks: vec![1, 2, 3],
            dtk_eps: vec![0.1, 1.0],
            dtk_rel_tol: 0.01,
            dtk_period: 400.0,
            dtk_n: 4096,
        }
    }
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present, must match the command given on the command line.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub grid: GridConfig,
    #[serde(default)]
    pub extend: Option<ExtendConfig>,
    #[serde(default)]
    pub conjugate_residual: Option<ConjugateResidualConfig>,
    #[serde(default)]
    pub kernel_check: Option<KernelCheckConfig>,
    #[serde(default)]
    pub weights_check: Option<WeightsCheckConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub carleman: Option<CarlemanConfig>,
    #[serde(default)]
    pub certify: Option<CertifyConfig>,
    #[serde(default)]
    pub identities: Option<IdentitiesConfig>,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

fn in_section(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Parameter { name, reason } => config_err(format!("{section}.{name}"), reason),
        Error::Grid(msg) => config_err("grid", msg),
        other => other,
    }
}

fn backticked<'a>(message: &'a str, prefix: &str) -> Option<&'a str> {
    let rest = message.strip_prefix(prefix)?;
    rest.split('`').next()
}

/// Parses a config, naming the offending field path on failure (e.g. `grid.n_t`).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let base = e.path().to_string();
        let message = e.inner().message().trim().to_string();
        let field = backticked(&message, "missing field `").or_else(|| backticked(&message, "unknown field `"));
        let path = match field {
            Some(f) if base == "." || base.is_empty() => f.to_string(),
            Some(f) if !base.ends_with(f) => format!("{base}.{f}"),
            _ if base == "." || base.is_empty() => "config".to_string(),
            _ => base,
        };
        config_err(path, message)
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err("--config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// The run generator. Every random stream of a run is seeded from it.
pub fn run_generator(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const PROBE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

fn derived_seed(seed: u64, stream: u64) -> u64 {
    let mut g = run_generator(seed);
    g.set_stream(stream);
    g.next_u64()
}

/// A CSV table with string cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn xy(points: &[(f64, f64)]) -> Self {
        let mut t = Table::new(&["x", "y"]);
        for &(x, y) in points {
            t.push(vec![num(x), num(y)]);
        }
        t
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Shortest round-trip scientific notation.
fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Everything a pipeline produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub verdict: Verdict,
    pub report: Value,
    pub cells: Table,
    /// `(file stem, table)` pairs for `plotdata/`.
    pub plots: Vec<(String, Table)>,
}

fn fit_json(fit: &Option<DecayFit>) -> Value {
    serde_json::to_value(fit).unwrap_or(Value::Null)
}

fn fit_passes(fit: &Option<DecayFit>, gate: f64) -> bool {
    fit.is_some_and(|f| f.slope < 0.0 && f.r_squared >= gate)
}

fn functions(keys: &[String], section: &'static str) -> Result<Vec<GevreyFunction>> {
    keys.iter().map(|k| GevreyFunction::from_key(k).map_err(in_section(section))).collect()
}

/// Runs `command` on a parsed config whose `seed` is final.
pub fn run_pipeline(command: Command, cfg: &ExperimentConfig) -> Result<RunOutput> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(config_err("command", format!("config is for `{}`, not `{}`", c.name(), command.name())));
        }
    }
    let grid = cfg.grid.build()?;
    let mut out = match command {
        Command::Extend => run_extend(&cfg.extend.clone().unwrap_or_default())?,
        Command::ConjugateResidual => run_conjugate_residual(&cfg.conjugate_residual.clone().unwrap_or_default(), &grid)?,
        Command::KernelCheck => run_kernel_check(&cfg.kernel_check.clone().unwrap_or_default(), &grid)?,
        Command::WeightsCheck => run_weights_check(&cfg.weights_check.clone().unwrap_or_default(), &grid, cfg.seed)?,
        Command::SubellipticSweep => run_subelliptic(&sweep_section(cfg)?, &grid)?,
        Command::CarlemanSweep => run_carleman(&sweep_section(cfg)?, &cfg.carleman.clone().unwrap_or_default(), &grid)?,
        Command::UcCertify => {
            let certify = cfg.certify.clone().ok_or_else(|| config_err("certify", "section required by uc-certify"))?;
            run_certify(&sweep_section(cfg)?, &certify, &grid, cfg.seed)?
        }
        Command::Identities => run_identities(&cfg.identities.clone().unwrap_or_default(), &grid)?,
    };
    out.report = json!({
        "command": command.name(),
        "seed": cfg.seed,
        "verdict": out.verdict,
        "result": out.report,
    });
    Ok(out)
}

fn sweep_section(cfg: &ExperimentConfig) -> Result<SweepConfig> {
    let mut s = cfg.sweep.clone().ok_or_else(|| config_err("sweep", "section required by this command"))?;
    s.probe_family.seed = derived_seed(cfg.seed, PROBE_STREAM);
    Ok(s)
}

fn run_extend(c: &ExtendConfig) -> Result<RunOutput> {
    let family = BumpFamily::new(bump_d(c.bump_scale), c.zeta_class).map_err(in_section("extend"))?;
    let matrix = zeta_interpolation_matrix(&family, c.zeta_order);
    let zeta_err = matrix
        .iter()
        .enumerate()
        .flat_map(|(j, row)| row.iter().enumerate().map(move |(k, v)| (v - if j == k { 1.0 } else { 0.0 }).abs()))
        .fold(0.0, f64::max);
    let leak = zeta_support_leak(&family, c.zeta_order, 200);
    let zeta_pass = zeta_err <= c.zeta_tol && leak == 0.0;
    let mut pass = zeta_pass;
    let mut cells = Table::new(&["function", "x", "height", "inv_height", "defect"]);
    let mut plots = vec![];
    let mut reports = vec![];
    for (key, f) in c.functions.iter().zip(functions(&c.functions, "extend")?) {
        let ext = almost_analytic_extend(&f, c.rho, c.bump_scale).map_err(in_section("extend"))?;
        let restr = restriction_error(&ext, &c.restriction_points)?;
        let ladder = defect_ladder(&ext, c.x, &c.heights)?;
        for (&y, &(iy, d)) in c.heights.iter().zip(&ladder) {
            cells.push(vec![key.clone(), num(c.x), num(y), num(iy), num(d)]);
        }
        let fit = decay_rate_fit(&ladder).ok();
        let ok = restr <= c.restriction_tol && fit_passes(&fit, c.r2_gate);
        pass &= ok;
        plots.push((format!("defect_{key}"), Table::xy(&ladder.iter().map(|&(x, d)| (x, d.ln())).collect::<Vec<_>>())));
        reports.push(json!({ "function": key, "restriction_error": restr, "defect_fit": fit_json(&fit), "pass": ok }));
    }
    let report = json!({
        "zeta": { "order": c.zeta_order, "max_identity_error": zeta_err, "support_leak": leak, "pass": zeta_pass },
        "functions": reports,
    });
    Ok(RunOutput { verdict: Verdict::from_bool(pass), report, cells, plots })
}

fn bump_d(scale: BumpScale) -> f64 {
    match scale {
        BumpScale::Fixed(d) => d,
        BumpScale::GrowthRule => 1.0,
    }
}

fn run_conjugate_residual(c: &ConjugateResidualConfig, grid: &Arc<TimeSpaceGrid>) -> Result<RunOutput> {
    let cs = c.cutoffs.build("conjugate_residual")?;
    if c.hs.len() < 4 || c.hs.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
        return Err(config_err("conjugate_residual.hs", "need at least 4 values in (0, 1)"));
    }
    let (om, off) = (c.probe_frequency, c.probe_offset);
    let u = Field::from_fn(grid, |t, _| C64::new((om * t).cos() + off, 0.0));
    let fs = functions(&c.functions, "conjugate_residual")?;
    let mut cells = Table::new(&["function", "k", "h", "h_pow_minus_third", "residual"]);
    let mut ladders: BTreeMap<(usize, u32), Vec<(f64, f64)>> = BTreeMap::new();
    for (i, f) in fs.iter().enumerate() {
        for &h in &c.hs {
            let fh = build_fh(f, &cs, h, grid, c.bump_scale).map_err(in_section("conjugate_residual"))?;
            for &k in &c.ks {
                let r = conjugation_residual_with(&fh, f, &u, k)?;
                let x = h.powf(-1.0 / 3.0);
                cells.push(vec![c.functions[i].clone(), k.to_string(), num(h), num(x), num(r)]);
                ladders.entry((i, k)).or_default().push((x, r));
            }
        }
    }
    let mut pass = true;
    let mut reports = vec![];
    let mut plots = vec![];
    for ((i, k), ladder) in &ladders {
        let fit = decay_rate_fit(ladder).ok();
        let ok = fit_passes(&fit, c.r2_gate);
        pass &= ok;
        let key = &c.functions[*i];
        plots.push((format!("residual_{key}_k{k}"), Table::xy(&ladder.iter().map(|&(x, r)| (x, r.ln())).collect::<Vec<_>>())));
        reports.push(json!({ "function": key, "k": k, "fit": fit_json(&fit), "pass": ok }));
    }
    Ok(RunOutput { verdict: Verdict::from_bool(pass), report: json!({ "ladders": reports }), cells, plots })
}

fn run_kernel_check(c: &KernelCheckConfig, grid: &Arc<TimeSpaceGrid>) -> Result<RunOutput> {
    let cs = c.cutoffs.build("kernel_check")?;
    if c.hs.len() < 4 || c.hs.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
        return Err(config_err("kernel_check.hs", "need at least 4 values in (0, 1)"));
    }
    let mut cells = Table::new(&["series", "label", "x", "value"]);
    let mut plots = vec![];
    let mut kernel_reports = vec![];
    let mut pass = true;
    for (key, f) in c.functions.iter().zip(functions(&c.functions, "kernel_check")?) {
        let ext = almost_analytic_extend(&f, cs.rho, c.bump_scale).map_err(in_section("kernel_check"))?;
        let (sups, _) = kernel_sup_ladder(&cs, &ext, &c.hs, &c.ts, &c.ss, KernelQuadrature::default())?;
        for &(h, s) in &sups {
            cells.push(vec!["kernel_sup".into(), key.clone(), num(h), num(s)]);
        }
        let ladder: Vec<(f64, f64)> = sups.iter().map(|&(h, s)| (h.powf(-1.0 / 3.0), s)).collect();
        let fit = decay_rate_fit(&ladder).ok();
        let ok = fit_passes(&fit, c.r2_gate);
        pass &= ok;
        plots.push((format!("kernel_sup_{key}"), Table::xy(&ladder.iter().map(|&(x, s)| (x, s.ln())).collect::<Vec<_>>())));
        kernel_reports.push(json!({ "function": key, "fit": fit_json(&fit), "pass": ok }));
    }

    let d = &c.disjoint;
    if d.lambdas.len() < 4 {
        return Err(config_err("kernel_check.disjoint.lambdas", "need at least 4 values"));
    }
    let u = Field::from_fn(grid, |t, _| C64::new((-t * t / 8.0).exp() * (1.0 + 0.3 * (2.0 * t).sin()), 0.0));
    let mut rates = vec![];
    let mut disjoint_reports = vec![];
    for &dist in &d.distances {
        if !(dist > 0.0 && dist / 2.0 < d.support_end) {
            return Err(config_err("kernel_check.disjoint.distances", "need 0 < d < 2 support_end"));
        }
        let c1 = TimeCutoff::Indicator { lo: -d.support_end, hi: -dist / 2.0 };
        let c2 = TimeCutoff::Indicator { lo: dist / 2.0, hi: d.support_end };
        let mut ladder = vec![];
        for &lam in &d.lambdas {
            let v = disjoint_support_smallness(&c1, &c2, lam, &u, d.k, d.m).map_err(in_section("kernel_check.disjoint"))?;
            cells.push(vec!["disjoint".into(), format!("d={dist}"), num(lam), num(v)]);
            ladder.push((lam, v));
        }
        let fit = decay_rate_fit(&ladder).ok();
        let rate = fit.map(|f| -f.slope);
        let ok = rate.is_some_and(|r| r >= d.rate_fraction * dist * dist / 8.0);
        pass &= ok;
        rates.push(rate);
        plots.push((format!("disjoint_d{dist}"), Table::xy(&ladder.iter().map(|&(l, v)| (l, v.ln())).collect::<Vec<_>>())));
        disjoint_reports.push(json!({
            "distance": dist, "fit": fit_json(&fit), "rate": rate, "required_rate": d.rate_fraction * dist * dist / 8.0, "pass": ok
        }));
    }
    let ratio = match (rates[0], rates[1]) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    let ratio_ok = ratio.is_some_and(|r| r >= d.ratio_bounds[0] && r <= d.ratio_bounds[1]);
    pass &= ratio_ok;
    let report = json!({
        "kernel": kernel_reports,
        "disjoint": { "distances": disjoint_reports, "rate_ratio": ratio, "ratio_bounds": d.ratio_bounds, "ratio_pass": ratio_ok },
    });
    Ok(RunOutput { verdict: Verdict::from_bool(pass), report, cells, plots })
}

fn run_weights_check(c: &WeightsCheckConfig, grid: &Arc<TimeSpaceGrid>, seed: u64) -> Result<RunOutput> {
    let dim = grid.dim();
    if c.center.len() != dim + 1 || c.surface_grad.len() != dim + 1 {
        return Err(config_err("weights_check.center", format!("center and surface_grad need {} entries", dim + 1)));
    }
    let m = Metric::from_key(&c.metric_key, dim).map_err(|e| config_err("weights_check.metric_key", e.to_string()))?;
    let psi = SurfaceFunction::affine(c.center.clone(), c.surface_grad.clone()).map_err(in_section("weights_check"))?;
    let adm = AdmissibilityConfig {
        sample_count: c.sample_count,
        seed: derived_seed(seed, PROBE_STREAM),
        ..AdmissibilityConfig::new(c.c0, c.ball_radius)
    };
    let mut cells = Table::new(&["lambda", "min_b_eigen", "min_e_margin", "predicted_scale", "pass"]);
    let delta = c.delta.unwrap_or(0.01 * c.ball_radius * c.ball_radius);
    let psi_min = |b: &BuiltWeight| b.report.records.iter().map(|r| psi.value(&r.sample_point)).fold(f64::INFINITY, f64::min);
    let mut profile = vec![];
    for p in 0..=c.max_power + 1 {
        let lam = 2f64.powi(p as i32);
        let b = build_weight(&psi, &m, lam, delta, &adm)?;
        let eig = b.report.min_b_eigen_margin + c.c0;
        let pred = lam * lam * (lam * psi_min(&b)).exp();
        cells.push(vec![num(lam), num(eig), num(b.report.min_e_margin), num(pred), b.report.pass.to_string()]);
        profile.push((lam, eig));
    }
    let plots = vec![("b_margin_vs_lambda".to_string(), Table::xy(&profile))];
    let built = match auto_lambda(&psi, &m, &adm, c.delta, c.max_power) {
        Ok(b) => b,
        Err(Error::Inadmissible(msg)) => {
            let report = json!({ "admissible": false, "reason": msg });
            return Ok(RunOutput { verdict: Verdict::Fail, report, cells, plots });
        }
        Err(e) => return Err(e),
    };
    let doubled = build_weight(&psi, &m, 2.0 * built.lambda, built.delta, &adm)?;
    let eig = |b: &BuiltWeight| b.report.min_b_eigen_margin + c.c0;
    let measured = eig(&doubled) / eig(&built);
    let predicted = 4.0 * (built.lambda * psi_min(&built)).exp();
    let consistency = measured / predicted;
    let scaling_ok = consistency >= 1.0 / c.scaling_factor && consistency <= c.scaling_factor;
    let report = json!({
        "admissible": built.report.pass,
        "lambda": built.lambda,
        "delta": built.delta,
        "min_b_eigen_margin": built.report.min_b_eigen_margin,
        "min_e_margin": built.report.min_e_margin,
        "doubling": { "measured_ratio": measured, "predicted_ratio": predicted, "consistency": consistency, "pass": scaling_ok },
    });
    Ok(RunOutput { verdict: Verdict::from_bool(built.report.pass && scaling_ok), report, cells, plots })
}

const SWEEP_HEADER: [&str; 13] = [
    "mu",
    "with_lot",
    "k",
    "tau",
    "probe",
    "label",
    "clamped",
    "op_norm_sq",
    "error_term",
    "tau_times_aniso_norm_sq",
    "ratio",
    "error_term_half_d",
    "ratio_half_d",
];

fn push_sweep(cells: &mut Table, plots: &mut Vec<(String, Table)>, r: &SweepReport) {
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for c in &r.cells {
        cells.push(vec![
            num(r.mu),
            r.with_lot.to_string(),
            r.k.to_string(),
            num(c.tau),
            c.probe.to_string(),
            c.label.clone(),
            c.clamped.to_string(),
            num(c.op_norm_sq),
            num(c.error_term),
            num(c.tau_times_aniso_norm_sq),
            num(c.ratio),
            opt(c.error_term_half_d),
            opt(c.ratio_half_d),
        ]);
    }
    let profile: Vec<(f64, f64)> = r.summary.max_ratio_per_tau.iter().map(|m| (m.tau, m.max_ratio)).collect();
    let name = if r.kind == "subelliptic" {
        format!("ratio_mu{}", r.mu)
    } else {
        format!("ratio_mu{}_lot{}_k{}", r.mu, r.with_lot, r.k)
    };
    plots.push((name, Table::xy(&profile)));
}

fn inadmissible(msg: String) -> RunOutput {
    RunOutput { verdict: Verdict::Fail, report: json!({ "admissible": false, "reason": msg }), cells: Table::new(&SWEEP_HEADER), plots: vec![] }
}

fn run_subelliptic(s: &SweepConfig, grid: &Arc<TimeSpaceGrid>) -> Result<RunOutput> {
    let r = match subelliptic_sweep(s, grid) {
        Ok(r) => r,
        Err(Error::Inadmissible(msg)) => return Ok(inadmissible(msg)),
        Err(e) => return Err(in_section("sweep")(e)),
    };
    let mut cells = Table::new(&SWEEP_HEADER);
    let mut plots = vec![];
    push_sweep(&mut cells, &mut plots, &r);
    let verdict = r.summary.verdict;
    Ok(RunOutput { verdict, report: serde_json::to_value(&r)?, cells, plots })
}

fn run_carleman(s: &SweepConfig, c: &CarlemanConfig, grid: &Arc<TimeSpaceGrid>) -> Result<RunOutput> {
    let mus = if c.mus.is_empty() { vec![s.mu] } else { c.mus.clone() };
    if c.with_lot.is_empty() || c.ks.is_empty() {
        return Err(config_err("carleman", "with_lot and ks must not be empty"));
    }
    if let Some(k) = c.ks.iter().find(|k| **k > 1) {
        return Err(config_err("carleman.ks", format!("k must be 0 or 1, got {k}")));
    }
    let mut cells = Table::new(&SWEEP_HEADER);
    let mut plots = vec![];
    let mut runs = vec![];
    let mut pass = true;
    for &mu in &mus {
        let cfg = SweepConfig { mu, ..s.clone() };
        for &lot in &c.with_lot {
            for &k in &c.ks {
                let r = match carleman_sweep(&cfg, grid, lot, k) {
                    Ok(r) => r,
                    Err(Error::Inadmissible(msg)) => return Ok(inadmissible(msg)),
                    Err(e) => return Err(in_section("sweep")(e)),
                };
                pass &= r.summary.verdict.is_pass();
                push_sweep(&mut cells, &mut plots, &r);
                runs.push(json!({
                    "mu": mu, "with_lot": lot, "k": k, "lambda": r.lambda,
                    "min_b_eigen_margin": r.min_b_eigen_margin, "summary": r.summary,
                }));
            }
        }
    }
    Ok(RunOutput { verdict: Verdict::from_bool(pass), report: json!({ "runs": runs }), cells, plots })
}

fn run_certify(s: &SweepConfig, c: &CertifyConfig, grid: &Arc<TimeSpaceGrid>, seed: u64) -> Result<RunOutput> {
    let dim = grid.dim();
    s.validate(dim).map_err(in_section("sweep"))?;
    let m = Metric::from_key(&s.metric_key, dim).map_err(|e| config_err("sweep.metric_key", e.to_string()))?;
    let lot = LowerOrderTerms::from_key(&s.lot_key, dim).map_err(|e| config_err("sweep.lot_key", e.to_string()))?;
    let psi = s.surface().map_err(in_section("sweep"))?;
    let (u, _) = manufactured_solution(&psi, grid, &m, &lot, c.mode).map_err(in_section("certify"))?;
    let opts = CertifyOptions { noise_seed: derived_seed(seed, NOISE_STREAM), ..c.options };
    let r = match uc_certify(&u, &psi, &m, &lot, s, &opts) {
        Ok(r) => r,
        Err(Error::Inadmissible(msg)) => return Ok(inadmissible(msg)),
        Err(e) => return Err(in_section("certify.options")(e)),
    };
    let mut cells = Table::new(&["tau", "q_norm", "balance_lhs", "balance_rhs", "balance_ratio"]);
    for p in &r.samples {
        cells.push(vec![num(p.tau), num(p.q_norm), num(p.balance_lhs), num(p.balance_rhs), num(p.balance_ratio)]);
    }
    let decay: Vec<(f64, f64)> = r.samples.iter().filter(|p| p.q_norm > 0.0).map(|p| (p.tau, p.q_norm.ln())).collect();
    let plots = vec![("decay".to_string(), Table::xy(&decay))];
    let verdict = Verdict::from_bool(r.delta_certified > 0.0);
    Ok(RunOutput { verdict, report: serde_json::to_value(&r)?, cells, plots })
}

fn run_identities(c: &IdentitiesConfig, grid: &Arc<TimeSpaceGrid>) -> Result<RunOutput> {
    let mut cells = Table::new(&["check", "parameter", "value", "bound", "pass"]);
    let mut pass = true;
    let mut record = |cells: &mut Table, check: &str, param: String, value: f64, bound: f64| {
        let ok = value <= bound;
        pass &= ok;
        cells.push(vec![check.to_string(), param, num(value), num(bound), ok.to_string()]);
    };

    let tc = grid.t_start + 0.5 * grid.t_period;
    let w = c.probe_width;
    let u = Field::from_fn(grid, |t, _| C64::new((-(t - tc).powi(2) / (2.0 * w * w)).exp(), 0.0));
    for &vs in &c.varsigmas {
        let r = residual_gaussian_conjugation(&u, vs).map_err(in_section("identities"))?;
        record(&mut cells, "exact_conjugation", format!("varsigma={vs}"), r, c.conjugation_tol);
    }

    let n = grid.n_t;
    for &lam in &c.fourier_lambdas {
        if !(lam > 0.0) {
            return Err(config_err("identities.fourier_lambdas", "values must be positive"));
        }
        let v: Vec<C64> = (0..n).map(|j| C64::new((-(grid.t(j) - tc).powi(2) / lam).exp(), 0.0)).collect();
        let err = fourier_transform_samples(&v, grid.t_start, grid.dt())
            .into_iter()
            .map(|(xi, f)| {
                let exact = C64::from_polar((PI * lam).sqrt() * (-lam * xi * xi / 4.0).exp(), -xi * tc);
                (f - exact).norm()
            })
            .fold(0.0, f64::max);
        record(&mut cells, "fourier_gaussian", format!("lambda={lam}"), err, c.fourier_tol);
    }

    let dtk_grid = TimeSpaceGrid::new((0.0, c.dtk_period, c.dtk_n), &[(0.0, 1.0, 4)])
        .map_err(|e| config_err("identities.dtk_n", e.to_string()))?;
    for &k in &c.dtk_ks {
        for &eps in &c.dtk_eps {
            let got = operator_norm_dtk_gaussian(k, eps, &dtk_grid).map_err(in_section("identities"))?;
            let exact = dtk_gaussian_bound(k, eps);
            record(&mut cells, "dtk_gaussian_norm", format!("k={k};eps={eps}"), (got / exact - 1.0).abs(), c.dtk_rel_tol);
        }
    }
    let checks: Vec<Value> = cells
        .rows
        .iter()
        .map(|r| json!({ "check": r[0], "parameter": r[1], "value": r[2].parse::<f64>().ok(), "bound": r[3].parse::<f64>().ok(), "pass": r[4] == "true" }))
        .collect();
    Ok(RunOutput { verdict: Verdict::from_bool(pass), report: json!({ "checks": checks }), cells, plots: vec![] })
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub verdict: Verdict,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub code_version: String,
    pub wall_time_seconds: f64,
    /// Relative path to SHA-256 of the content, for every output file.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the artifacts of `out` into `dir` and returns the manifest.
pub fn write_artifacts(
    dir: &Path,
    command: Command,
    seed: u64,
    threads: Option<usize>,
    config_text: &str,
    out: &RunOutput,
    started: Instant,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir.join("plotdata"))?;
    let mut files = BTreeMap::new();
    let mut put = |rel: String, bytes: Vec<u8>| -> Result<()> {
        std::fs::write(dir.join(&rel), &bytes)?;
        files.insert(rel, sha256_hex(&bytes));
        Ok(())
    };
    let mut report = serde_json::to_vec_pretty(&out.report)?;
    report.push(b'\n');
    put("report.json".into(), report)?;
    put("cells.csv".into(), out.cells.to_csv()?)?;
    for (name, table) in &out.plots {
        put(format!("plotdata/{name}.csv"), table.to_csv()?)?;
    }
    let manifest = Manifest {
        command: command.name().into(),
        seed,
        threads,
        verdict: out.verdict,
        config_hash: sha256_hex(config_text.as_bytes()),
        code_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        files,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes)?;
    Ok(manifest)
}

/// Loads the config, runs the pipeline and writes the artifacts. Returns the verdict and
/// the output directory.
pub fn execute(cli: &Cli) -> Result<(Verdict, PathBuf)> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| config_err("--config", format!("{}: {e}", cli.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads", "must be positive"));
        }
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let dir = cli
        .output
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    let out = run_pipeline(cli.command, &cfg)?;
    write_artifacts(&dir, cli.command, cfg.seed, cli.threads, &text, &out, started)?;
    Ok((out.verdict, dir))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok((verdict, dir)) => {
            let tag = if verdict.is_pass() { "PASS" } else { "FAIL" };
            println!("{} {tag} ({})", cli.command.name(), dir.display());
            if verdict.is_pass() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
