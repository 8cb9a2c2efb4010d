//! Command-line scenarios, configuration and table output.
//!
//! Every scenario writes one table to the output directory in the shared
//! schema [`COLUMNS`], plus a `<scenario>.meta.json` sidecar with the resolved
//! configuration, seed, trajectory count, bins, version and wall time.
//! `bloch-hist` writes the long-form grid `phi_bin,z_bin,count` instead.
//!
//! The output directory is `--out`, else `$HYBRID_SQUEEZE_OUT`, else `out`.
//! Configuration files are TOML (JSON accepted for `.json` files); flags
//! override file values and unknown keys only produce a warning.
//!
//! Exit codes: 0 success, 2 configuration error, 3 undefined ξ or other
//! numerical failure, 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{self, FinalRotation, HybridConfig, NoiseConfig, SplitterNoiseTarget};
use crate::oat::{LAMBDA_DELTA_KICK, LAMBDA_FREE_EXPANSION};
use crate::optimize::{self, log_space, OptimizeSpec};
use crate::phase_space::{bloch_histogram, squeezing_parameter, SqueezingEstimate, TrajectoryEnsemble};
use crate::physics::{self, LabParams};
use crate::qnd::{self, QndParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HYBRID_SQUEEZE_OUT";

/// Column order of every scenario table.
pub const COLUMNS: [&str; 15] = [
    "scenario",
    "N",
    "d",
    "eta",
    "theta_qnd",
    "lambda_oat",
    "theta_oat",
    "noise_photon_frac",
    "noise_bs_sigma",
    "noise_target",
    "xi",
    "xi_se",
    "n_traj",
    "bins",
    "seed",
];

/// Column order of the `bloch-hist` table.
pub const HISTOGRAM_COLUMNS: [&str; 3] = ["phi_bin", "z_bin", "count"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hybrid-squeeze", version, about = "Hybrid QND + one-axis-twisting squeezing scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub scenario: ScenarioKind,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum ScenarioKind {
    /// Squeezing parameter of the coherent spin state (should be 1).
    CssCheck,
    /// Optimised QND-only squeezing against optical depth.
    QndScaling,
    /// OAT-only squeezing against twisting strength.
    OatSweep,
    /// Lossless QND followed by OAT at N = 100, against twisting strength.
    HybridLossless,
    /// Hybrid squeezing optimised over η and θ_QND, with OAT-only reference.
    HybridOptimized,
    /// OAT-only, QND-only and optimised hybrid against optical depth.
    DepthScan,
    /// Photon-number and beam-splitter noise at optimised settings.
    Robustness,
    /// Bloch-sphere histogram of the final ensemble.
    BlochHist,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CssCheck => "css-check",
            ScenarioKind::QndScaling => "qnd-scaling",
            ScenarioKind::OatSweep => "oat-sweep",
            ScenarioKind::HybridLossless => "hybrid-lossless",
            ScenarioKind::HybridOptimized => "hybrid-optimized",
            ScenarioKind::DepthScan => "depth-scan",
            ScenarioKind::Robustness => "robustness",
            ScenarioKind::BlochHist => "bloch-hist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub atoms: Option<u64>,
    /// Optical depth; repeat for several.
    #[arg(long, global = true)]
    pub depth: Vec<f64>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Twisting strength; repeat for several.
    #[arg(long = "lambda-oat", global = true)]
    pub lambda_oat: Vec<f64>,
    #[arg(long = "theta-qnd", global = true)]
    pub theta_qnd: Option<f64>,
    #[arg(long, global = true)]
    pub trajectories: Option<usize>,
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub photon_fracs: Vec<f64>,
    pub bs_sigmas: Vec<f64>,
    pub targets: Vec<SplitterNoiseTarget>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            photon_fracs: vec![0.1, 0.2, 0.3],
            bs_sigmas: vec![0.01, 0.02, 0.05],
            targets: vec![
                SplitterNoiseTarget::BothSplittersCommon,
                SplitterNoiseTarget::FirstOnly,
                SplitterNoiseTarget::SecondOnly,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlochConfig {
    pub n_phi: usize,
    pub n_z: usize,
}

impl Default for BlochConfig {
    fn default() -> Self {
        BlochConfig { n_phi: 64, n_z: 32 }
    }
}

/// Fully resolved run configuration. `optimize.objective_traj` and
/// `optimize.crn_seed` always follow `trajectories` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub atoms: Option<u64>,
    pub depth: Vec<f64>,
    pub eta: Option<f64>,
    pub lambda_oat: Vec<f64>,
    pub theta_qnd: Option<f64>,
    pub trajectories: usize,
    pub bins: usize,
    pub photons: f64,
    pub seed: u64,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub optimize: OptimizeSpec,
    pub robustness: RobustnessConfig,
    pub bloch: BlochConfig,
    /// When set, supplies `N`, `N_p`, `d` and `η` unless given elsewhere.
    pub lab: Option<LabParams>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            atoms: None,
            depth: Vec::new(),
            eta: None,
            lambda_oat: Vec::new(),
            theta_qnd: None,
            trajectories: 20_000,
            bins: qnd::DEFAULT_BINS,
            photons: qnd::DEFAULT_PHOTONS,
            seed: 1,
            format: OutputFormat::Csv,
            out: None,
            optimize: OptimizeSpec::default(),
            robustness: RobustnessConfig::default(),
            bloch: BlochConfig::default(),
            lab: None,
        }
    }
}

/// Parse a configuration file. Unknown keys are returned as warnings.
pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_config(&text, is_json).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str, is_json: bool) -> Result<(RunConfig, Vec<String>)> {
    let value: serde_json::Value = if is_json {
        serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {}, column {}: {e}", e.line(), e.column())))?
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            let (line, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::config(format!("line {line}, column {col}: {}", e.message()))
        })?;
        serde_json::to_value(table).map_err(|e| Error::config(e.to_string()))?
    };
    let mut warnings = Vec::new();
    let cfg: RunConfig = serde_ignored::deserialize(value, |p| warnings.push(p.to_string()))
        .map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
    Ok((cfg, warnings))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

impl RunConfig {
    /// Apply command-line flags on top of this configuration.
    pub fn merge_flags(mut self, f: &Flags) -> Self {
        if f.atoms.is_some() {
            self.atoms = f.atoms;
        }
        if !f.depth.is_empty() {
            self.depth = f.depth.clone();
        }
        if f.eta.is_some() {
            self.eta = f.eta;
        }
        if !f.lambda_oat.is_empty() {
            self.lambda_oat = f.lambda_oat.clone();
        }
        if f.theta_qnd.is_some() {
            self.theta_qnd = f.theta_qnd;
        }
        if let Some(t) = f.trajectories {
            self.trajectories = t;
        }
        if let Some(b) = f.bins {
            self.bins = b;
        }
        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(fmt) = f.format {
            self.format = fmt;
        }
        if f.out.is_some() {
            self.out = f.out.clone();
        }
        self.resolve()
    }

    fn resolve(mut self) -> Self {
        if let Some(lab) = self.lab {
            if self.atoms.is_none() {
                self.atoms = Some(lab.n_atoms.round() as u64);
            }
            if self.depth.is_empty() {
                self.depth = vec![physics::optical_depth(&lab)];
            }
            if self.eta.is_none() {
                self.eta = Some(physics::scattering_fraction(&lab));
            }
            self.photons = lab.n_photons;
        }
        self.optimize.objective_traj = self.trajectories;
        self.optimize.crn_seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories < 2 {
            return Err(Error::config("--trajectories must be at least 2"));
        }
        if self.bins < 1 {
            return Err(Error::config("--bins must be at least 1"));
        }
        if self.atoms == Some(0) {
            return Err(Error::config("--atoms must be positive"));
        }
        if let Some(lab) = &self.lab {
            lab.validate()?;
        }
        for d in &self.depth {
            if !(*d >= 0.0) || !d.is_finite() {
                return Err(Error::config(format!("optical depth {d} must be finite and non-negative")));
            }
        }
        for l in &self.lambda_oat {
            if !(*l >= 0.0) || !l.is_finite() {
                return Err(Error::config(format!("lambda_oat {l} must be finite and non-negative")));
            }
        }
        self.optimize.validate()
    }

    fn output_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn qnd(&self, depth: f64, eta: f64) -> QndParams {
        QndParams {
            n_photons: self.photons,
            ..QndParams::new(depth, eta).with_bins(self.bins)
        }
    }

    fn atoms_or(&self, default: u64) -> u64 {
        self.atoms.unwrap_or(default)
    }

    fn depths_or(&self, default: &[f64]) -> Vec<f64> {
        if self.depth.is_empty() {
            default.to_vec()
        } else {
            self.depth.clone()
        }
    }

    fn lambdas_or(&self, default: Vec<f64>) -> Vec<f64> {
        if self.lambda_oat.is_empty() {
            default
        } else {
            self.lambda_oat.clone()
        }
    }
}

/// One table row in the shared schema. Undefined ξ is written as `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub d: f64,
    pub eta: f64,
    pub theta_qnd: f64,
    pub lambda_oat: f64,
    pub theta_oat: f64,
    pub noise_photon_frac: f64,
    pub noise_bs_sigma: f64,
    pub noise_target: String,
    pub xi: f64,
    pub xi_se: f64,
    pub n_traj: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Row {
    fn new(scenario: &str, cfg: &RunConfig, n: u64) -> Self {
        Row {
            scenario: scenario.to_string(),
            n,
            d: 0.0,
            eta: 0.0,
            theta_qnd: 0.0,
            lambda_oat: 0.0,
            theta_oat: 0.0,
            noise_photon_frac: 0.0,
            noise_bs_sigma: 0.0,
            noise_target: SplitterNoiseTarget::None.as_str().to_string(),
            xi: f64::NAN,
            xi_se: f64::NAN,
            n_traj: cfg.trajectories,
            bins: cfg.bins,
            seed: cfg.seed,
        }
    }

    fn with_xi(mut self, xi: Option<SqueezingEstimate>) -> Self {
        if let Some(e) = xi {
            self.xi = e.xi;
            self.xi_se = e.se;
        }
        self
    }

    fn from_config(scenario: &str, run: &RunConfig, cfg: &HybridConfig, theta_oat: f64) -> Self {
        let mut r = Row::new(scenario, run, cfg.n_atoms);
        if let Some(q) = &cfg.qnd {
            r.d = q.depth;
            r.eta = q.eta;
        }
        r.theta_qnd = cfg.theta_qnd;
        r.lambda_oat = cfg.oat.lambda;
        r.theta_oat = theta_oat;
        r.noise_photon_frac = cfg.noise.photon_fluctuation_frac;
        r.noise_bs_sigma = cfg.noise.bs_angle_sigma;
        r.noise_target = cfg.noise.bs_noise_target.as_str().to_string();
        r.n_traj = cfg.n_traj;
        r.seed = cfg.seed;
        r
    }

    pub fn is_defined(&self) -> bool {
        self.xi.is_finite() && self.xi > 0.0 && self.xi_se.is_finite() && self.xi_se > 0.0
    }

    pub fn summary(&self) -> String {
        format!(
            "{:<24} N={:<7} d={:<8.4} eta={:<10.4e} theta_qnd={:<8.4} lambda={:<10.4e} xi={:.5} ± {:.5}",
            self.scenario, self.n, self.d, self.eta, self.theta_qnd, self.lambda_oat, self.xi, self.xi_se
        )
    }
}

/// Rows of one scenario plus scenario-specific extras for the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub rows: Vec<Row>,
    pub extra: serde_json::Value,
}

pub fn run_scenario(kind: ScenarioKind, cfg: &RunConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let (rows, extra) = match kind {
        ScenarioKind::CssCheck => (css_check(cfg)?, serde_json::Value::Null),
        ScenarioKind::QndScaling => qnd_scaling(cfg)?,
        ScenarioKind::OatSweep => (oat_sweep(cfg)?, serde_json::Value::Null),
        ScenarioKind::HybridLossless => hybrid_lossless(cfg)?,
        ScenarioKind::HybridOptimized => hybrid_optimized(cfg)?,
        ScenarioKind::DepthScan => depth_scan(cfg)?,
        ScenarioKind::Robustness => robustness(cfg)?,
        ScenarioKind::BlochHist => return Err(Error::config("bloch-hist produces a histogram, not a table")),
    };
    Ok(ScenarioResult {
        scenario: kind.name().to_string(),
        rows,
        extra,
    })
}

fn css_check(cfg: &RunConfig) -> Result<Vec<Row>> {
    let n = cfg.atoms_or(100);
    let ens = TrajectoryEnsemble::coherent_spin_state(n, cfg.trajectories, cfg.seed)?;
    let xi = squeezing_parameter(&ens.moments(), n)?;
    Ok(vec![Row::new("css-check", cfg, n).with_xi(Some(xi))])
}

fn qnd_scaling(cfg: &RunConfig) -> Result<(Vec<Row>, serde_json::Value)> {
    let n = cfg.atoms_or(100_000);
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for d in cfg.depths_or(&[10.0, 75.0, 387.0, 3500.0, 1.0e4]) {
        let (eta, xi) = match cfg.eta {
            Some(eta) => {
                let h = HybridConfig::qnd_only(n, cfg.qnd(d, eta), cfg.trajectories, cfg.seed);
                (eta, hybrid::run_hybrid(&h)?.xi)
            }
            None => match undefined_ok(optimize_qnd(n, d, cfg, &cfg.optimize))? {
                Some(opt) => {
                    logs.push(serde_json::json!({ "d": d, "log": opt.log }));
                    (opt.eta_opt, Some(opt.xi))
                }
                None => (f64::NAN, None),
            },
        };
        let mut row = Row::new("qnd-scaling", cfg, n).with_xi(xi);
        row.d = d;
        row.eta = eta;
        rows.push(row);
    }
    Ok((rows, serde_json::json!({ "optimizer_logs": logs })))
}

/// An optimisation whose objective is undefined everywhere yields an
/// undefined row rather than aborting the table.
fn undefined_ok<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ Error::OptimizationFailed { .. }) => {
            eprintln!("warning: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn optimize_qnd(n: u64, d: f64, cfg: &RunConfig, spec: &OptimizeSpec) -> Result<optimize::QndOptimum> {
    optimize::optimize_qnd_with(n, cfg.qnd(d, spec.eta_range[0]), spec)
}

fn oat_row(scenario: &str, cfg: &RunConfig, n: u64, lambda: f64) -> Result<Row> {
    let h = HybridConfig::oat_only(n, lambda, cfg.trajectories, cfg.seed);
    let out = hybrid::run_hybrid(&h)?;
    Ok(Row::from_config(scenario, cfg, &h, out.diagnostics.theta_oat).with_xi(out.xi))
}

fn oat_sweep(cfg: &RunConfig) -> Result<Vec<Row>> {
    let n = cfg.atoms_or(100_000);
    cfg.lambdas_or(log_space(1e-6, 1e-2, 17))
        .into_iter()
        .map(|l| oat_row("oat-sweep", cfg, n, l))
        .collect()
}

/// Lossless measurement strength that leaves `ξ² = 1/(1 + 2dη) = 1/4`.
pub const LOSSLESS_KAPPA_SQ: f64 = 3.0;

fn hybrid_lossless(cfg: &RunConfig) -> Result<(Vec<Row>, serde_json::Value)> {
    let n = cfg.atoms_or(100);
    let q = QndParams {
        n_photons: cfg.photons,
        ..QndParams::lossless(LOSSLESS_KAPPA_SQ).with_bins(cfg.bins)
    };
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for lambda in cfg.lambdas_or(log_space(1e-3, 0.5, 12)) {
        rows.push(oat_row("hybrid-lossless:oat", cfg, n, lambda)?);
        let base = HybridConfig::hybrid(n, q, cfg.theta_qnd.unwrap_or(0.0), lambda, cfg.trajectories, cfg.seed);
        let (h, theta_oat, xi) = match cfg.theta_qnd {
            Some(_) => {
                let out = hybrid::run_hybrid(&base)?;
                (base, out.diagnostics.theta_oat, out.xi)
            }
            None => match undefined_ok(optimize::optimize_theta(&base, &cfg.optimize))? {
                Some(r) => {
                    logs.push(serde_json::json!({ "lambda_oat": lambda, "log": r.log }));
                    let h = HybridConfig { theta_qnd: r.theta_opt, ..base };
                    (h, r.theta_oat, Some(r.xi))
                }
                None => (HybridConfig { theta_qnd: f64::NAN, ..base }, f64::NAN, None),
            },
        };
        rows.push(Row::from_config("hybrid-lossless:hybrid", cfg, &h, theta_oat).with_xi(xi));
    }
    Ok((rows, serde_json::json!({ "kappa_sq": LOSSLESS_KAPPA_SQ, "optimizer_logs": logs })))
}

fn hybrid_rows(
    scenario: &str,
    cfg: &RunConfig,
    n: u64,
    d: f64,
    lambda: f64,
    logs: &mut Vec<serde_json::Value>,
) -> Result<Row> {
    let base = HybridConfig::hybrid(n, cfg.qnd(d, cfg.eta.unwrap_or(1e-2)), cfg.theta_qnd.unwrap_or(0.0), lambda, cfg.trajectories, cfg.seed);
    if cfg.eta.is_some() && cfg.theta_qnd.is_some() {
        let out = hybrid::run_hybrid(&base)?;
        return Ok(Row::from_config(scenario, cfg, &base, out.diagnostics.theta_oat).with_xi(out.xi));
    }
    let Some(r) = undefined_ok(optimize::optimize_hybrid(&base, &cfg.optimize))? else {
        let mut row = Row::from_config(scenario, cfg, &base, f64::NAN);
        row.eta = f64::NAN;
        row.theta_qnd = f64::NAN;
        return Ok(row);
    };
    logs.push(serde_json::json!({ "d": d, "lambda_oat": lambda, "log": r.log }));
    let h = HybridConfig {
        qnd: Some(cfg.qnd(d, r.eta_opt)),
        theta_qnd: r.theta_opt,
        ..base
    };
    Ok(Row::from_config(scenario, cfg, &h, r.theta_oat).with_xi(Some(r.xi)))
}

fn hybrid_optimized(cfg: &RunConfig) -> Result<(Vec<Row>, serde_json::Value)> {
    let n = cfg.atoms_or(100_000);
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for d in cfg.depths_or(&[50.0, 387.0, 3500.0]) {
        for lambda in cfg.lambdas_or(vec![LAMBDA_FREE_EXPANSION, LAMBDA_DELTA_KICK]) {
            rows.push(oat_row("hybrid-optimized:oat", cfg, n, lambda)?);
            rows.push(hybrid_rows("hybrid-optimized:hybrid", cfg, n, d, lambda, &mut logs)?);
        }
    }
    Ok((rows, serde_json::json!({ "optimizer_logs": logs })))
}

fn depth_scan(cfg: &RunConfig) -> Result<(Vec<Row>, serde_json::Value)> {
    let n = cfg.atoms_or(100_000);
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    let depths = cfg.depths_or(&[10.0, 30.0, 75.0, 200.0, 387.0, 1000.0, 3500.0, 1.0e4]);
    for lambda in cfg.lambdas_or(vec![LAMBDA_FREE_EXPANSION]) {
        rows.push(oat_row("depth-scan:oat", cfg, n, lambda)?);
        for &d in &depths {
            let q = undefined_ok(optimize_qnd(n, d, cfg, &cfg.optimize))?;
            let mut row = Row::new("depth-scan:qnd", cfg, n).with_xi(q.as_ref().map(|q| q.xi));
            row.d = d;
            row.eta = q.map_or(f64::NAN, |q| q.eta_opt);
            rows.push(row);
            rows.push(hybrid_rows("depth-scan:hybrid", cfg, n, d, lambda, &mut logs)?);
        }
    }
    Ok((rows, serde_json::json!({ "optimizer_logs": logs })))
}

fn robustness(cfg: &RunConfig) -> Result<(Vec<Row>, serde_json::Value)> {
    let n = cfg.atoms_or(100_000);
    let d = cfg.depths_or(&[physics::REFERENCE_DEPTH])[0];
    let lambda = cfg.lambdas_or(vec![LAMBDA_FREE_EXPANSION])[0];
    let mut logs = Vec::new();
    let design = hybrid_rows("robustness", cfg, n, d, lambda, &mut logs)?;
    if !design.eta.is_finite() {
        return Err(Error::OptimizationFailed {
            reason: "no defined operating point for the robustness study".into(),
            evaluations: 0,
        });
    }
    let base = HybridConfig::hybrid(n, cfg.qnd(d, design.eta), design.theta_qnd, lambda, cfg.trajectories, cfg.seed);

    let mut configs = vec![base.clone()];
    for &frac in &cfg.robustness.photon_fracs {
        let mut c = base.clone();
        c.noise.photon_fluctuation_frac = frac;
        configs.push(c);
    }
    for &target in &cfg.robustness.targets {
        for &sigma in &cfg.robustness.bs_sigmas {
            let mut c = base.clone();
            c.noise = NoiseConfig {
                bs_angle_sigma: sigma,
                bs_noise_target: target,
                ..NoiseConfig::none()
            };
            configs.push(c);
        }
    }
    let rows = configs
        .iter()
        .map(|c| {
            let out = hybrid::run_hybrid(c)?;
            Ok(Row::from_config("robustness", cfg, c, out.diagnostics.theta_oat).with_xi(out.xi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, serde_json::json!({ "optimizer_logs": logs })))
}

/// Histogram of the final ensemble of a single pipeline run.
pub fn run_bloch_hist(cfg: &RunConfig) -> Result<(crate::phase_space::BlochHistogram, HybridConfig)> {
    cfg.validate()?;
    let n = cfg.atoms_or(100);
    let lambda = cfg.lambdas_or(vec![0.0])[0];
    let qnd = match (cfg.depth.first(), cfg.eta) {
        (Some(&d), Some(eta)) => Some(cfg.qnd(d, eta)),
        _ => None,
    };
    let h = HybridConfig {
        qnd,
        theta_qnd: cfg.theta_qnd.unwrap_or(0.0),
        final_rotation: FinalRotation::None,
        ..HybridConfig::oat_only(n, lambda, cfg.trajectories, cfg.seed)
    };
    let post = hybrid::prepare(&h)?;
    let ens = post.ensemble.rotate_x(h.theta_qnd)?;
    let ens = crate::oat::apply_oat(ens, &h.oat)?;
    Ok((bloch_histogram(&ens, cfg.bloch.n_phi, cfg.bloch.n_z)?, h))
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    scenario: &'a str,
    version: &'a str,
    seed: u64,
    n_traj: usize,
    bins: usize,
    wall_time_s: f64,
    worker_threads: usize,
    environment: Environment,
    columns: Vec<&'a str>,
    undefined_rows: usize,
    config: &'a RunConfig,
    extra: &'a serde_json::Value,
}

#[derive(Debug, Serialize)]
struct Environment {
    arch: &'static str,
    os: &'static str,
    endian: &'static str,
}

impl Environment {
    fn current() -> Self {
        Environment {
            arch: std::env::consts::ARCH,
            os: std::env::consts::OS,
            endian: if cfg!(target_endian = "little") { "little" } else { "big" },
        }
    }
}

/// Write a scenario table in the configured format and return its path.
pub fn write_table(result: &ScenarioResult, cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    match cfg.format {
        OutputFormat::Csv => {
            let path = dir.join(format!("{}.csv", result.scenario));
            let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
            if result.rows.is_empty() {
                w.write_record(COLUMNS).map_err(csv_error)?;
            }
            for row in &result.rows {
                w.serialize(row).map_err(csv_error)?;
            }
            w.flush()?;
            Ok(path)
        }
        OutputFormat::Json => {
            let path = dir.join(format!("{}.json", result.scenario));
            let body = serde_json::json!({ "scenario": result.scenario, "columns": COLUMNS, "rows": result.rows });
            fs::write(&path, serde_json::to_string_pretty(&body).expect("rows serialise"))?;
            Ok(path)
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_histogram(h: &crate::phase_space::BlochHistogram, cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    match cfg.format {
        OutputFormat::Csv => {
            let path = dir.join("bloch-hist.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
            w.write_record(HISTOGRAM_COLUMNS).map_err(csv_error)?;
            for (p, z, c) in h.long_form() {
                w.write_record([p.to_string(), z.to_string(), c.to_string()]).map_err(csv_error)?;
            }
            w.flush()?;
            Ok(path)
        }
        OutputFormat::Json => {
            let path = dir.join("bloch-hist.json");
            let rows: Vec<_> = h
                .long_form()
                .map(|(p, z, c)| serde_json::json!({ "phi_bin": p, "z_bin": z, "count": c }))
                .collect();
            let body = serde_json::json!({ "columns": HISTOGRAM_COLUMNS, "n_phi": h.n_phi, "n_z": h.n_z, "rows": rows });
            fs::write(&path, serde_json::to_string_pretty(&body).expect("rows serialise"))?;
            Ok(path)
        }
    }
}

fn write_metadata(
    scenario: &str,
    cfg: &RunConfig,
    dir: &Path,
    started: Instant,
    undefined_rows: usize,
    extra: &serde_json::Value,
) -> Result<()> {
    let columns = if scenario == "bloch-hist" {
        HISTOGRAM_COLUMNS.to_vec()
    } else {
        COLUMNS.to_vec()
    };
    let meta = Metadata {
        scenario,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        n_traj: cfg.trajectories,
        bins: cfg.bins,
        wall_time_s: started.elapsed().as_secs_f64(),
        worker_threads: rayon::current_num_threads(),
        environment: Environment::current(),
        columns,
        undefined_rows,
        config: cfg,
        extra,
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    fs::write(dir.join(format!("{scenario}.meta.json")), text)?;
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Capability(_) => EXIT_CONFIG,
        Error::DegenerateState(_) | Error::DegenerateRecord(_) | Error::OptimizationFailed { .. } | Error::NonFinite(_) => {
            EXIT_NUMERICAL
        }
        Error::Io(_) => EXIT_IO,
    }
}

/// Parse arguments, run the scenario, write outputs; returns the exit code.
pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let started = Instant::now();
    let file_cfg = match &cli.flags.config {
        Some(path) => {
            let (cfg, warnings) = load_config(path).map_err(|e| match e {
                Error::Io(io) => Error::config(format!("cannot read {}: {io}", path.display())),
                other => other,
            })?;
            for w in warnings {
                eprintln!("warning: unknown configuration key `{w}` ignored");
            }
            cfg
        }
        None => RunConfig::default(),
    };
    let cfg = file_cfg.merge_flags(&cli.flags);
    let dir = cfg.output_dir();

    if cli.scenario == ScenarioKind::BlochHist {
        let (h, _) = run_bloch_hist(&cfg)?;
        let path = write_histogram(&h, &cfg, &dir)?;
        let (p, z) = h.mode();
        println!("bloch-hist {}x{} bins, {} samples, mode at phi_bin={p} z_bin={z}", h.n_phi, h.n_z, h.total());
        write_metadata("bloch-hist", &cfg, &dir, started, 0, &serde_json::Value::Null)?;
        println!("wrote {}", path.display());
        return Ok(EXIT_OK);
    }

    let result = run_scenario(cli.scenario, &cfg)?;
    for row in &result.rows {
        println!("{}", row.summary());
    }
    let undefined = result.rows.iter().filter(|r| !r.is_defined()).count();
    let path = write_table(&result, &cfg, &dir)?;
    write_metadata(&result.scenario, &cfg, &dir, started, undefined, &result.extra)?;
    println!("wrote {}", path.display());
    if undefined > 0 {
        eprintln!("error: squeezing parameter undefined in {undefined} row(s)");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let (cfg, warnings) = parse_config("", false).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(warnings.is_empty());
        let (cfg, _) = parse_config("{}", true).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let (cfg, _) = parse_config("trajectories = 5000\nseed = 3\n", false).unwrap();
        let flags = Flags {
            trajectories: Some(20_000),
            ..Flags::default()
        };
        let merged = cfg.merge_flags(&flags);
        assert_eq!(merged.trajectories, 20_000);
        assert_eq!(merged.seed, 3);
        assert_eq!(merged.optimize.objective_traj, 20_000);
        assert_eq!(merged.optimize.crn_seed, 3);
    }

    #[test]
    fn unknown_keys_warn() {
        let (cfg, warnings) = parse_config("trajectories = 10\nfrobnicate = 1\n[optimize]\nwibble = 2\n", false).unwrap();
        assert_eq!(cfg.trajectories, 10);
        assert_eq!(warnings, vec!["frobnicate".to_string(), "optimize.wibble".to_string()]);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_config("seed = 1\ntrajectories = = 3\n", false).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_config("{\n  \"seed\": ,\n}", true).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(matches!(parse_config("seed = \"x\"", false), Err(Error::Config(_))));
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
            lambda_oat = [6.5e-5]
            [optimize]
            coarse_grid = [4, 3]
            refine = "none"
            [robustness]
            targets = ["first_only"]
        "#;
        let (cfg, w) = parse_config(text, false).unwrap();
        assert!(w.is_empty(), "{w:?}");
        assert_eq!(cfg.optimize.coarse_grid, [4, 3]);
        assert_eq!(cfg.optimize.refine, optimize::Refine::None);
        assert_eq!(cfg.robustness.targets, vec![SplitterNoiseTarget::FirstOnly]);
    }

    #[test]
    fn lab_section_supplies_dimensionless_parameters() {
        let lab = LabParams::rb87_free_space(2.0e10, 1.0e8);
        let cfg = RunConfig {
            lab: Some(lab),
            ..RunConfig::default()
        }
        .merge_flags(&Flags::default());
        assert_eq!(cfg.atoms, Some(100_000));
        assert!((cfg.depth[0] - 387.0).abs() < 1e-6);
        assert!((cfg.eta.unwrap() - physics::scattering_fraction(&lab)).abs() < 1e-15);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::DegenerateState("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
