//! Quantum nondemolition measurement stage.
//!
//! The probe pulse is split into `M` time bins. In bin `j` the input light
//! amplitude is `β_j = √(N_p/M) + w_j` with `⟨w*w⟩ = ½`. Each bin
//!
//! 1. imprints the current `𝒥_z` on the light, `β_out = e^{−iλ𝒥_z} β_j`,
//! 2. applies the opposite back-action phases `e^{∓i(λ/2)δn_j}` to `α₁, α₂`,
//!    where `δn_j` is the bin photon number minus its deterministic mean,
//! 3. damps both modes by `√(1−f)` and injects `√f · v` vacuum noise with
//!    `f = 1 − e^{−η/M}`.
//!
//! The mean light shift `λ⟨n_j⟩/2` is a deterministic rotation about `J_z`
//! that a two-colour probe (or a calibrated echo) cancels shot by shot, so only
//! the photon-number fluctuation reaches the atoms.
//!
//! The homodyne record is `Y = M^{−1/2} Σ_j 2 Im β_out,j`. For real `β₀` the
//! coherent part of the record vanishes at `𝒥_z = 0`, so `Y ≈ −2λ√N_p 𝒥_z`
//! plus unit-variance vacuum noise.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{TrajectoryEnsemble, VACUUM_HALF};
use crate::physics;
use crate::rng::{self, Stage};
use crate::stats;

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_PHOTONS: f64 = 1.0e8;
/// Above this `η` fewer than 0.7 % of the atoms survive the probe.
pub const MAX_ETA: f64 = 5.0;

/// How the feedback rotation angle is derived from the homodyne record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackGain {
    /// `sin θ_y = Y / (λ N √N_p)`: unit-gain inversion of the noiseless
    /// record at the initial atom number.
    PaperFormula,
    /// Linear minimum-variance estimate of `𝒥_z` from `Y`, with the gain
    /// estimated once from the ensemble.
    #[default]
    WienerEstimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QndParams {
    /// Resonant optical depth `d`.
    pub depth: f64,
    /// Integrated scattering fraction `η`.
    pub eta: f64,
    /// Total probe photon number `N_p`.
    pub n_photons: f64,
    /// Time bins `M`.
    pub n_bins: usize,
    pub feedback_gain: FeedbackGain,
    /// When false the probe measures with strength `2dη` but no atoms scatter.
    pub spontaneous_loss: bool,
}

impl QndParams {
    pub fn new(depth: f64, eta: f64) -> Self {
        QndParams {
            depth,
            eta,
            n_photons: DEFAULT_PHOTONS,
            n_bins: DEFAULT_BINS,
            feedback_gain: FeedbackGain::default(),
            spontaneous_loss: true,
        }
    }

    /// Loss-free measurement with `2dη = kappa_sq`.
    pub fn lossless(kappa_sq: f64) -> Self {
        QndParams {
            spontaneous_loss: false,
            ..Self::new(0.5 * kappa_sq, 1.0)
        }
    }

    pub fn with_bins(mut self, n_bins: usize) -> Self {
        self.n_bins = n_bins;
        self
    }

    pub fn with_gain(mut self, gain: FeedbackGain) -> Self {
        self.feedback_gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth >= 0.0) || !self.depth.is_finite() {
            return Err(Error::domain(format!("optical depth must be non-negative, got {}", self.depth)));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::domain(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.eta >= MAX_ETA {
            return Err(Error::domain(format!("eta = {} leaves a vacuum-dominated state (limit {MAX_ETA})", self.eta)));
        }
        if !(self.n_photons > 0.0) || !self.n_photons.is_finite() {
            return Err(Error::domain(format!("photon number must be positive, got {}", self.n_photons)));
        }
        if self.n_bins < 1 {
            return Err(Error::config("at least one time bin is required"));
        }
        Ok(())
    }

    /// Phase per photon per unit `𝒥_z`; zero when `d` or `η` vanishes.
    pub fn coupling(&self, n_atoms: u64) -> Result<f64> {
        if self.depth == 0.0 || self.eta == 0.0 {
            return Ok(0.0);
        }
        physics::qnd_coupling(self.depth, self.eta, n_atoms as f64, self.n_photons)
    }

    /// Signal-to-noise of the lossless measurement, `κ² = λ²N_pN = 2dη`.
    pub fn measurement_strength(&self) -> f64 {
        2.0 * self.depth * self.eta
    }
}

/// Per-trajectory homodyne outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomodyneRecord {
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_var: f64,
}

impl HomodyneRecord {
    pub fn from_values(y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::config("homodyne record needs at least two shots"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("homodyne record"));
        }
        let y_mean = stats::mean(&y);
        let y_var = stats::variance(&y);
        Ok(Self { y, y_mean, y_var })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Light phase imprint for one bin: `β_out = e^{−iλ𝒥_z} β`.
#[inline]
pub fn phase_interaction(beta: Complex64, jz: f64, coupling: f64) -> Complex64 {
    beta * Complex64::from_polar(1.0, -coupling * jz)
}

/// Run the probe through the ensemble and collect the homodyne record.
pub fn apply_qnd(ens: TrajectoryEnsemble, q: &QndParams) -> Result<(TrajectoryEnsemble, HomodyneRecord)> {
    apply_qnd_scaled(ens, q, None)
}

/// As [`apply_qnd`], with the photon number of shot `i` multiplied by
/// `photon_scale[i]`. The record of each shot is divided by the square root
/// of its scale, i.e. normalised to the measured probe power.
pub(crate) fn apply_qnd_scaled(
    ens: TrajectoryEnsemble,
    q: &QndParams,
    photon_scale: Option<&[f64]>,
) -> Result<(TrajectoryEnsemble, HomodyneRecord)> {
    q.validate()?;
    if let Some(s) = photon_scale {
        if s.len() != ens.len() {
            return Err(Error::config("photon scale length does not match the ensemble"));
        }
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("photon scales must be finite and non-negative"));
        }
    }
    let coupling = q.coupling(ens.n_atoms())?;
    let seed = ens.lineage().master_seed;
    let bins = q.n_bins;
    let bins_f = bins as f64;
    let nominal_amp = (q.n_photons / bins_f).sqrt();
    let loss = q.spontaneous_loss;
    let eta = q.eta;

    let n_atoms = ens.n_atoms();
    let mut lineage = ens.lineage().clone();
    lineage.record(Stage::ProbeLight);
    if loss && eta > 0.0 {
        lineage.record(Stage::SpontaneousLoss);
    }
    let (mut a1s, mut a2s) = ens.into_parts();
    let mut y = vec![0.0; a1s.len()];

    a1s.par_iter_mut()
        .zip(a2s.par_iter_mut())
        .zip(y.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((a1, a2), yi))| {
            let scale = photon_scale.map_or(1.0, |s| s[i]);
            let amp = nominal_amp * scale.sqrt();
            let mean_photons = amp * amp + VACUUM_HALF;
            let f = if loss { -(-eta * scale / bins_f).exp_m1() } else { 0.0 };
            let (keep, inject) = ((1.0 - f).sqrt(), f.sqrt());
            let mut light = rng::stream(seed, Stage::ProbeLight, i);
            let mut vacuum = rng::stream(seed, Stage::SpontaneousLoss, i);
            let mut record = 0.0;
            for _ in 0..bins {
                let jz = 0.5 * (a1.norm_sqr() - a2.norm_sqr());
                let beta = Complex64::new(amp, 0.0) + rng::complex_gaussian(&mut light, VACUUM_HALF);
                record += 2.0 * phase_interaction(beta, jz, coupling).im;
                if coupling != 0.0 {
                    let kick = Complex64::from_polar(1.0, -0.5 * coupling * (beta.norm_sqr() - mean_photons));
                    *a1 *= kick;
                    *a2 *= kick.conj();
                }
                if f > 0.0 {
                    *a1 = *a1 * keep + rng::complex_gaussian(&mut vacuum, VACUUM_HALF) * inject;
                    *a2 = *a2 * keep + rng::complex_gaussian(&mut vacuum, VACUUM_HALF) * inject;
                }
            }
            *yi = if scale > 0.0 {
                record / (bins_f * scale).sqrt()
            } else {
                record / bins_f.sqrt()
            };
        });

    let out = TrajectoryEnsemble::from_amplitudes(a1s, a2s, n_atoms, lineage)?;
    Ok((out, HomodyneRecord::from_values(y)?))
}

/// Wiener feedback gain `g* = −Cov(𝒥_z, Y) / (Var(Y) ⟨𝒥_x⟩)`, so that
/// `g*·Y` estimates `−𝒥_z/⟨𝒥_x⟩ = sin θ_y` for the re-centring rotation.
pub fn wiener_gain(ens: &TrajectoryEnsemble, rec: &HomodyneRecord) -> Result<f64> {
    check_record(ens, rec)?;
    let spins = ens.spins();
    let zs: Vec<f64> = spins.iter().map(|s| s.z).collect();
    let xs: Vec<f64> = spins.iter().map(|s| s.x).collect();
    let jx = stats::mean(&xs);
    if jx == 0.0 || !jx.is_finite() {
        return Err(Error::DegenerateState("<J_x> vanished before feedback".into()));
    }
    let cov = stats::covariance(&zs, &rec.y);
    Ok(-cov / (rec.y_var * jx))
}

fn check_record(ens: &TrajectoryEnsemble, rec: &HomodyneRecord) -> Result<()> {
    if rec.len() != ens.len() {
        return Err(Error::config(format!(
            "record has {} shots but ensemble has {} trajectories",
            rec.len(),
            ens.len()
        )));
    }
    if !(rec.y_var > 0.0) {
        return Err(Error::DegenerateRecord("homodyne record has zero variance".into()));
    }
    Ok(())
}

/// Per-trajectory feedback angles `θ_y` for a record.
pub fn feedback_angles(ens: &TrajectoryEnsemble, rec: &HomodyneRecord, q: &QndParams) -> Result<Vec<f64>> {
    check_record(ens, rec)?;
    let gain = match q.feedback_gain {
        FeedbackGain::WienerEstimated => wiener_gain(ens, rec)?,
        FeedbackGain::PaperFormula => {
            let n = ens.n_atoms() as f64;
            let coupling = q.coupling(ens.n_atoms())?;
            if coupling == 0.0 {
                return Err(Error::DegenerateRecord("paper-formula gain is undefined at zero coupling".into()));
            }
            1.0 / (coupling * n * q.n_photons.sqrt())
        }
    };
    Ok(rec.y.iter().map(|y| (gain * y).clamp(-1.0, 1.0).asin()).collect())
}

/// Rotate every trajectory about `J_y` by its own feedback angle.
pub fn feedback(ens: TrajectoryEnsemble, rec: &HomodyneRecord, q: &QndParams) -> Result<TrajectoryEnsemble> {
    let angles = feedback_angles(&ens, rec, q)?;
    let out = ens.rotate_y_each(&angles)?;
    out.ensure_finite("feedback")?;
    Ok(out)
}

/// Measurement followed by feedback.
pub fn run_qnd_stage(ens: TrajectoryEnsemble, q: &QndParams) -> Result<(TrajectoryEnsemble, HomodyneRecord)> {
    let (ens, rec) = apply_qnd(ens, q)?;
    let ens = feedback(ens, &rec, q)?;
    Ok((ens, rec))
}
