//! Full state-preparation pipeline:
//! CSS → QND + feedback → `θ_QND` about `J_x` → OAT → `θ_OAT` about `J_x` → ξ.
//!
//! Each trajectory stands for one experimental shot, so shot-to-shot noise is
//! drawn once per trajectory and the ensemble reports the noise-broadened ξ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oat::{self, OatParams};
use crate::optimize::{self, OptimizeResult, OptimizeSpec};
use crate::phase_space::{squeezing_parameter, SpinMoments, SqueezingEstimate, TrajectoryEnsemble};
use crate::qnd::{self, QndParams};
use crate::rng::{self, Stage};

/// How the rotation after twisting is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalRotation {
    /// Minimise `Var(J_z)` over rotations about `J_x`. With noise switched on
    /// the angle comes from a noiseless design run on the same seed.
    #[default]
    ClosedForm,
    Fixed(f64),
    None,
}

/// Which beam splitters see the shot-to-shot angle offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitterNoiseTarget {
    /// One offset per shot, applied to both rotations.
    BothSplittersCommon,
    /// Only the `θ_QND` rotation.
    FirstOnly,
    /// Only the `θ_OAT` rotation.
    SecondOnly,
    #[default]
    None,
}

impl SplitterNoiseTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitterNoiseTarget::BothSplittersCommon => "both_splitters_common",
            SplitterNoiseTarget::FirstOnly => "first_only",
            SplitterNoiseTarget::SecondOnly => "second_only",
            SplitterNoiseTarget::None => "none",
        }
    }

    fn first(self) -> bool {
        matches!(self, SplitterNoiseTarget::BothSplittersCommon | SplitterNoiseTarget::FirstOnly)
    }

    fn second(self) -> bool {
        matches!(self, SplitterNoiseTarget::BothSplittersCommon | SplitterNoiseTarget::SecondOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the fractional shot-to-shot photon-number error.
    pub photon_fluctuation_frac: f64,
    /// Standard deviation of the beam-splitter angle offset (radians).
    pub bs_angle_sigma: f64,
    pub bs_noise_target: SplitterNoiseTarget,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_active(&self) -> bool {
        self.photon_fluctuation_frac > 0.0
            || (self.bs_angle_sigma > 0.0 && self.bs_noise_target != SplitterNoiseTarget::None)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("photon_fluctuation_frac", self.photon_fluctuation_frac),
            ("bs_angle_sigma", self.bs_angle_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub n_atoms: u64,
    /// Absent means pure OAT.
    pub qnd: Option<QndParams>,
    pub theta_qnd: f64,
    pub oat: OatParams,
    pub final_rotation: FinalRotation,
    pub noise: NoiseConfig,
    pub n_traj: usize,
    pub seed: u64,
}

impl HybridConfig {
    /// Pure OAT with the closed-form final rotation.
    pub fn oat_only(n_atoms: u64, lambda: f64, n_traj: usize, seed: u64) -> Self {
        HybridConfig {
            n_atoms,
            qnd: None,
            theta_qnd: 0.0,
            oat: OatParams::new(lambda),
            final_rotation: FinalRotation::ClosedForm,
            noise: NoiseConfig::none(),
            n_traj,
            seed,
        }
    }

    /// QND measurement and feedback only, read out without further rotation.
    pub fn qnd_only(n_atoms: u64, qnd: QndParams, n_traj: usize, seed: u64) -> Self {
        HybridConfig {
            qnd: Some(qnd),
            final_rotation: FinalRotation::None,
            ..Self::oat_only(n_atoms, 0.0, n_traj, seed)
        }
    }

    pub fn hybrid(n_atoms: u64, qnd: QndParams, theta_qnd: f64, lambda: f64, n_traj: usize, seed: u64) -> Self {
        HybridConfig {
            qnd: Some(qnd),
            theta_qnd,
            ..Self::oat_only(n_atoms, lambda, n_traj, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms < 1 {
            return Err(Error::config("atom number must be at least 1"));
        }
        if self.n_traj < 2 {
            return Err(Error::config(format!("need at least 2 trajectories, got {}", self.n_traj)));
        }
        if !self.theta_qnd.is_finite() {
            return Err(Error::domain("theta_qnd must be finite"));
        }
        if let FinalRotation::Fixed(t) = self.final_rotation {
            if !t.is_finite() {
                return Err(Error::domain("fixed final rotation must be finite"));
            }
        }
        if let Some(q) = &self.qnd {
            q.validate()?;
        }
        self.oat.validate()?;
        self.noise.validate()
    }
}

/// Side information from one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Nominal rotation applied after twisting (before any splitter offset).
    pub theta_oat: f64,
    /// Moments right after feedback, when a QND stage ran.
    pub post_qnd: Option<SpinMoments>,
    pub xi_post_qnd: Option<f64>,
    /// Why ξ is undefined, if it is.
    pub undefined_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridOutcome {
    /// `None` when `⟨J_x⟩` is not resolved from zero.
    pub xi: Option<SqueezingEstimate>,
    pub moments: SpinMoments,
    pub diagnostics: Diagnostics,
}

impl HybridOutcome {
    /// ξ, or the degenerate-state error recorded in the diagnostics.
    pub fn estimate(&self) -> Result<SqueezingEstimate> {
        self.xi.ok_or_else(|| {
            Error::DegenerateState(
                self.diagnostics
                    .undefined_reason
                    .clone()
                    .unwrap_or_else(|| "squeezing parameter undefined".into()),
            )
        })
    }
}

/// The ensemble after the QND stage, ready for [`finish_pipeline`].
#[derive(Debug, Clone)]
pub struct PostQnd {
    pub ensemble: TrajectoryEnsemble,
    pub moments: Option<SpinMoments>,
}

pub fn run_hybrid(cfg: &HybridConfig) -> Result<HybridOutcome> {
    let post = prepare(cfg)?;
    finish_pipeline(post, cfg)
}

/// Initial state, then measurement and feedback if configured.
pub fn prepare(cfg: &HybridConfig) -> Result<PostQnd> {
    cfg.validate()?;
    let ens = TrajectoryEnsemble::coherent_spin_state(cfg.n_atoms, cfg.n_traj, cfg.seed)?;
    let Some(q) = &cfg.qnd else {
        return Ok(PostQnd { ensemble: ens, moments: None });
    };
    let scales = photon_scales(cfg);
    let (ens, rec) = qnd::apply_qnd_scaled(ens, q, scales.as_deref())?;
    let ens = qnd::feedback(ens, &rec, q)?;
    let moments = ens.moments();
    Ok(PostQnd { ensemble: ens, moments: Some(moments) })
}

/// Rotation by `θ_QND`, twisting, final rotation and the squeezing estimate.
pub fn finish_pipeline(post: PostQnd, cfg: &HybridConfig) -> Result<HybridOutcome> {
    cfg.validate()?;
    let offsets = splitter_offsets(cfg);
    let target = cfg.noise.bs_noise_target;

    let mut ens = post.ensemble;
    ens = match (&offsets, target.first()) {
        (Some(d), true) => {
            let angles: Vec<f64> = d.iter().map(|o| cfg.theta_qnd + o).collect();
            ens.rotate_x_each(&angles)?
        }
        _ => ens.rotate_x(cfg.theta_qnd)?,
    };
    ens = oat::apply_oat(ens, &cfg.oat)?;

    let theta_oat = match cfg.final_rotation {
        FinalRotation::None => 0.0,
        FinalRotation::Fixed(t) => t,
        FinalRotation::ClosedForm if cfg.noise.is_active() => design_angle(cfg)?,
        FinalRotation::ClosedForm => oat::optimal_x_rotation(&ens.moments()),
    };
    ens = match (&offsets, target.second()) {
        (Some(d), true) => {
            let angles: Vec<f64> = d.iter().map(|o| theta_oat + o).collect();
            ens.rotate_x_each(&angles)?
        }
        _ => ens.rotate_x(theta_oat)?,
    };
    ens.ensure_finite("final rotation")?;

    let moments = ens.moments();
    let xi_post_qnd = post
        .moments
        .as_ref()
        .and_then(|m| squeezing_parameter(m, cfg.n_atoms).ok())
        .map(|e| e.xi);
    let (xi, undefined_reason) = match squeezing_parameter(&moments, cfg.n_atoms) {
        Ok(e) => (Some(e), None),
        Err(Error::DegenerateState(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    Ok(HybridOutcome {
        xi,
        moments,
        diagnostics: Diagnostics {
            theta_oat,
            post_qnd: post.moments,
            xi_post_qnd,
            undefined_reason,
        },
    })
}

/// Final angle an experimenter would calibrate with the noise switched off.
fn design_angle(cfg: &HybridConfig) -> Result<f64> {
    let design = HybridConfig {
        noise: NoiseConfig::none(),
        ..cfg.clone()
    };
    Ok(run_hybrid(&design)?.diagnostics.theta_oat)
}

fn photon_scales(cfg: &HybridConfig) -> Option<Vec<f64>> {
    let sigma = cfg.noise.photon_fluctuation_frac;
    if sigma == 0.0 {
        return None;
    }
    Some(
        (0..cfg.n_traj)
            .map(|i| {
                let mut r = rng::stream(cfg.seed, Stage::PhotonNumber, i);
                (1.0 + rng::gaussian(&mut r, sigma)).max(0.0)
            })
            .collect(),
    )
}

fn splitter_offsets(cfg: &HybridConfig) -> Option<Vec<f64>> {
    let sigma = cfg.noise.bs_angle_sigma;
    if sigma == 0.0 || cfg.noise.bs_noise_target == SplitterNoiseTarget::None {
        return None;
    }
    Some(
        (0..cfg.n_traj)
            .map(|i| rng::gaussian(&mut rng::stream(cfg.seed, Stage::SplitterAngle, i), sigma))
            .collect(),
    )
}

/// Three pipelines on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub oat_only: SqueezingEstimate,
    pub oat_theta: f64,
    pub qnd_only: SqueezingEstimate,
    pub qnd_eta: f64,
    pub hybrid: OptimizeResult,
}

pub fn compare_strategies(
    n_atoms: u64,
    depth: f64,
    lambda: f64,
    n_traj: usize,
    seed: u64,
    spec: &OptimizeSpec,
) -> Result<StrategyComparison> {
    let spec = OptimizeSpec {
        objective_traj: n_traj,
        crn_seed: seed,
        ..spec.clone()
    };
    let oat_run = run_hybrid(&HybridConfig::oat_only(n_atoms, lambda, n_traj, seed))?;
    let qnd = optimize::optimize_qnd_only(n_atoms, depth, &spec)?;
    let base = HybridConfig::hybrid(n_atoms, QndParams::new(depth, spec.eta_range[0]), 0.0, lambda, n_traj, seed);
    let hybrid = optimize::optimize_hybrid(&base, &spec)?;
    Ok(StrategyComparison {
        oat_only: oat_run.estimate()?,
        oat_theta: oat_run.diagnostics.theta_oat,
        qnd_only: qnd.xi,
        qnd_eta: qnd.eta_opt,
        hybrid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_oat_reduction() {
        let cfg = HybridConfig::oat_only(100, 0.02, 20_000, 5);
        let out = run_hybrid(&cfg).unwrap();
        let ens = TrajectoryEnsemble::coherent_spin_state(100, 20_000, 5).unwrap();
        let ens = oat::apply_oat(ens, &OatParams::new(0.02)).unwrap();
        let theta = oat::optimal_x_rotation(&ens.moments());
        let direct = squeezing_parameter(&ens.rotate_x(theta).unwrap().moments(), 100).unwrap();
        let got = out.estimate().unwrap();
        assert!((got.xi - direct.xi).abs() < 1e-12);
        assert!((out.diagnostics.theta_oat - theta).abs() < 1e-15);
        assert!(out.diagnostics.post_qnd.is_none());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = HybridConfig::oat_only(100, 0.02, 1, 5);
        assert!(matches!(run_hybrid(&cfg), Err(Error::Config(_))));
        cfg.n_traj = 10;
        cfg.theta_qnd = f64::NAN;
        assert!(run_hybrid(&cfg).is_err());
        cfg.theta_qnd = 0.0;
        cfg.noise.bs_angle_sigma = -0.1;
        assert!(run_hybrid(&cfg).is_err());
    }

    #[test]
    fn fixed_final_rotation_of_zero_matches_none() {
        let mut cfg = HybridConfig::oat_only(100, 0.02, 2_000, 5);
        cfg.final_rotation = FinalRotation::None;
        let a = run_hybrid(&cfg).unwrap();
        cfg.final_rotation = FinalRotation::Fixed(0.0);
        let b = run_hybrid(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untargeted_splitter_noise_is_inert() {
        let mut cfg = HybridConfig::hybrid(1000, QndParams::new(50.0, 0.1), 0.8, 1e-3, 2_000, 9);
        let clean = run_hybrid(&cfg).unwrap();
        cfg.noise.bs_angle_sigma = 0.05;
        cfg.noise.bs_noise_target = SplitterNoiseTarget::None;
        assert_eq!(run_hybrid(&cfg).unwrap(), clean);
    }

    #[test]
    fn second_splitter_noise_uses_noiseless_design_angle() {
        let mut cfg = HybridConfig::hybrid(1000, QndParams::new(50.0, 0.1), 0.8, 2e-3, 4_000, 9);
        let clean = run_hybrid(&cfg).unwrap();
        cfg.noise.bs_angle_sigma = 0.02;
        cfg.noise.bs_noise_target = SplitterNoiseTarget::SecondOnly;
        let noisy = run_hybrid(&cfg).unwrap();
        assert_eq!(noisy.diagnostics.theta_oat, clean.diagnostics.theta_oat);
        assert!(noisy.estimate().unwrap().xi > clean.estimate().unwrap().xi);
    }

    #[test]
    fn undefined_xi_is_reported_not_raised() {
        // A quarter turn about J_y puts the mean spin on the pole.
        let mut cfg = HybridConfig::oat_only(100, 0.0, 2_000, 3);
        cfg.final_rotation = FinalRotation::None;
        let post = PostQnd {
            ensemble: TrajectoryEnsemble::coherent_spin_state(100, 2_000, 3)
                .unwrap()
                .rotate_y(std::f64::consts::FRAC_PI_2)
                .unwrap()
                .rotate_x(std::f64::consts::FRAC_PI_2)
                .unwrap(),
            moments: None,
        };
        let out = finish_pipeline(post, &cfg).unwrap();
        assert!(out.xi.is_none());
        assert!(out.diagnostics.undefined_reason.is_some());
        assert!(matches!(out.estimate(), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn photon_noise_only_touches_qnd_runs() {
        let mut cfg = HybridConfig::oat_only(100, 0.02, 2_000, 5);
        let clean = run_hybrid(&cfg).unwrap();
        cfg.noise.photon_fluctuation_frac = 0.3;
        let noisy = run_hybrid(&cfg).unwrap();
        assert_eq!(clean.xi, noisy.xi);
    }
}
