//! Truncated Wigner representation of the two-mode collective spin.
//!
//! Each trajectory carries a pair of complex amplitudes `(α₁, α₂)` sampled from
//! the Wigner distribution of the initial state. Spin observables map to
//!
//! ```text
//! 𝒥_x = Re(α₁* α₂)    𝒥_y = Im(α₁* α₂)    𝒥_z = ½(|α₁|² − |α₂|²)
//! ```
//!
//! and ensemble averages estimate symmetrically ordered moments. The per-mode
//! `+½` vacuum offset cancels in all three components, so no correction is
//! applied to them. The total atom number is reported as
//! `⟨|α₁|² + |α₂|²⟩ − 1`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RngLineage, Stage};
use crate::stats;

/// Vacuum occupation `⟨|ν|²⟩` of one Wigner mode.
pub const VACUUM_HALF: f64 = 0.5;

/// Stochastic amplitudes for the two atomic modes, one pair per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    alpha1: Vec<Complex64>,
    alpha2: Vec<Complex64>,
    n_atoms: u64,
    lineage: RngLineage,
}

/// Single-trajectory spin components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spin {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Spin {
    #[inline]
    pub fn from_amplitudes(a1: Complex64, a2: Complex64) -> Self {
        let c = a1.conj() * a2;
        Spin {
            x: c.re,
            y: c.im,
            z: 0.5 * (a1.norm_sqr() - a2.norm_sqr()),
        }
    }
}

impl TrajectoryEnsemble {
    /// Coherent spin state on the equator: `α_j = √(N/2) + ν_j` with
    /// `⟨ν*ν⟩ = ½`.
    pub fn coherent_spin_state(n_atoms: u64, n_traj: usize, seed: u64) -> Result<Self> {
        let half = (n_atoms as f64 / 2.0).sqrt();
        Self::sample(n_atoms, n_traj, seed, Complex64::new(half, 0.0), Complex64::new(half, 0.0))
    }

    /// All atoms in mode 1 (the maximal `J_z` state): `α₁ = √N + ν₁`, `α₂ = ν₂`.
    pub fn polarized(n_atoms: u64, n_traj: usize, seed: u64) -> Result<Self> {
        let full = (n_atoms as f64).sqrt();
        Self::sample(n_atoms, n_traj, seed, Complex64::new(full, 0.0), Complex64::new(0.0, 0.0))
    }

    fn sample(n_atoms: u64, n_traj: usize, seed: u64, mean1: Complex64, mean2: Complex64) -> Result<Self> {
        validate_shape(n_atoms, n_traj)?;
        let (alpha1, alpha2): (Vec<_>, Vec<_>) = (0..n_traj)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, Stage::InitialState, i);
                let nu1 = rng::complex_gaussian(&mut r, VACUUM_HALF);
                let nu2 = rng::complex_gaussian(&mut r, VACUUM_HALF);
                (mean1 + nu1, mean2 + nu2)
            })
            .unzip();
        let mut lineage = RngLineage::new(seed);
        lineage.record(Stage::InitialState);
        Ok(Self {
            alpha1,
            alpha2,
            n_atoms,
            lineage,
        })
    }

    /// Wrap externally prepared amplitudes.
    pub fn from_amplitudes(
        alpha1: Vec<Complex64>,
        alpha2: Vec<Complex64>,
        n_atoms: u64,
        lineage: RngLineage,
    ) -> Result<Self> {
        if alpha1.len() != alpha2.len() {
            return Err(Error::config(format!(
                "mode amplitude lengths differ ({} vs {})",
                alpha1.len(),
                alpha2.len()
            )));
        }
        validate_shape(n_atoms, alpha1.len())?;
        let ens = Self {
            alpha1,
            alpha2,
            n_atoms,
            lineage,
        };
        ens.ensure_finite("construction")?;
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.alpha1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha1.is_empty()
    }

    pub fn alpha1(&self) -> &[Complex64] {
        &self.alpha1
    }

    pub fn alpha2(&self) -> &[Complex64] {
        &self.alpha2
    }

    /// Atom number `N` of the initial state.
    pub fn n_atoms(&self) -> u64 {
        self.n_atoms
    }

    pub fn lineage(&self) -> &RngLineage {
        &self.lineage
    }

    pub fn into_parts(self) -> (Vec<Complex64>, Vec<Complex64>) {
        (self.alpha1, self.alpha2)
    }

    pub fn spin(&self, i: usize) -> Spin {
        Spin::from_amplitudes(self.alpha1[i], self.alpha2[i])
    }

    pub fn spins(&self) -> Vec<Spin> {
        self.alpha1
            .par_iter()
            .zip(self.alpha2.par_iter())
            .map(|(&a1, &a2)| Spin::from_amplitudes(a1, a2))
            .collect()
    }

    pub(crate) fn ensure_finite(&self, stage: &'static str) -> Result<()> {
        let ok = self
            .alpha1
            .par_iter()
            .chain(self.alpha2.par_iter())
            .all(|a| a.re.is_finite() && a.im.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(stage))
        }
    }

    /// Apply a per-trajectory map `f(i, α₁, α₂) -> (α₁', α₂')` in parallel.
    pub(crate) fn map_pairs<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, Complex64, Complex64) -> (Complex64, Complex64) + Sync + Send,
    {
        self.alpha1
            .par_iter_mut()
            .zip(self.alpha2.par_iter_mut())
            .enumerate()
            .for_each(|(i, (a1, a2))| {
                let (n1, n2) = f(i, *a1, *a2);
                *a1 = n1;
                *a2 = n2;
            });
        self
    }

    /// Rotation about `J_y`:
    /// `α₁ → cos(θ/2)α₁ + sin(θ/2)α₂`, `α₂ → cos(θ/2)α₂ − sin(θ/2)α₁`.
    ///
    /// This maps `𝒥_z → 𝒥_z cos θ + 𝒥_x sin θ`.
    pub fn rotate_y(self, theta: f64) -> Result<Self> {
        check_angle(theta)?;
        if theta == 0.0 {
            return Ok(self);
        }
        let (s, c) = (0.5 * theta).sin_cos();
        Ok(self.map_pairs(move |_, a1, a2| y_rotation(a1, a2, c, s)))
    }

    /// Rotation about `J_y` with a separate angle for every trajectory.
    pub fn rotate_y_each(self, thetas: &[f64]) -> Result<Self> {
        self.check_angles(thetas)?;
        Ok(self.map_pairs(|i, a1, a2| {
            let (s, c) = (0.5 * thetas[i]).sin_cos();
            y_rotation(a1, a2, c, s)
        }))
    }

    /// Rotation about `J_x`:
    /// `α₁ → cos(θ/2)α₁ − i sin(θ/2)α₂`, `α₂ → −i sin(θ/2)α₁ + cos(θ/2)α₂`.
    ///
    /// This is `exp(−iθĴ_x)` and maps `𝒥_z → 𝒥_z cos θ + 𝒥_y sin θ`.
    pub fn rotate_x(self, theta: f64) -> Result<Self> {
        check_angle(theta)?;
        if theta == 0.0 {
            return Ok(self);
        }
        let (s, c) = (0.5 * theta).sin_cos();
        Ok(self.map_pairs(move |_, a1, a2| x_rotation(a1, a2, c, s)))
    }

    /// Rotation about `J_x` with a separate angle for every trajectory.
    pub fn rotate_x_each(self, thetas: &[f64]) -> Result<Self> {
        self.check_angles(thetas)?;
        Ok(self.map_pairs(|i, a1, a2| {
            let (s, c) = (0.5 * thetas[i]).sin_cos();
            x_rotation(a1, a2, c, s)
        }))
    }

    /// Multiply every amplitude by the common phase `e^{iφ}`.
    pub fn global_phase(self, phi: f64) -> Result<Self> {
        check_angle(phi)?;
        let u = Complex64::from_polar(1.0, phi);
        Ok(self.map_pairs(move |_, a1, a2| (a1 * u, a2 * u)))
    }

    fn check_angles(&self, thetas: &[f64]) -> Result<()> {
        if thetas.len() != self.len() {
            return Err(Error::config(format!(
                "{} angles supplied for {} trajectories",
                thetas.len(),
                self.len()
            )));
        }
        thetas.iter().try_for_each(|&t| check_angle(t))
    }

    /// Ensemble spin moments with standard errors.
    pub fn moments(&self) -> SpinMoments {
        SpinMoments::from_spins(&self.spins(), self.total_number_mean())
    }

    /// Mean atom number `⟨|α₁|² + |α₂|²⟩ − 1`.
    pub fn total_number_mean(&self) -> f64 {
        let totals: Vec<f64> = self
            .alpha1
            .iter()
            .zip(&self.alpha2)
            .map(|(a1, a2)| a1.norm_sqr() + a2.norm_sqr())
            .collect();
        stats::mean(&totals) - 2.0 * VACUUM_HALF
    }

    /// Per-trajectory `|α₁|² + |α₂|²`.
    pub fn total_numbers(&self) -> Vec<f64> {
        self.alpha1
            .iter()
            .zip(&self.alpha2)
            .map(|(a1, a2)| a1.norm_sqr() + a2.norm_sqr())
            .collect()
    }
}

#[inline]
fn y_rotation(a1: Complex64, a2: Complex64, c: f64, s: f64) -> (Complex64, Complex64) {
    (a1 * c + a2 * s, a2 * c - a1 * s)
}

#[inline]
fn x_rotation(a1: Complex64, a2: Complex64, c: f64, s: f64) -> (Complex64, Complex64) {
    let mis = Complex64::new(0.0, -s);
    (a1 * c + a2 * mis, a1 * mis + a2 * c)
}

fn validate_shape(n_atoms: u64, n_traj: usize) -> Result<()> {
    if n_atoms < 1 {
        return Err(Error::config("atom number must be at least 1"));
    }
    if n_traj < 2 {
        return Err(Error::config(format!("need at least 2 trajectories, got {n_traj}")));
    }
    Ok(())
}

fn check_angle(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("rotation angle {theta} is not finite")))
    }
}

/// Ensemble estimates of the collective spin moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinMoments {
    pub jx_mean: f64,
    pub jy_mean: f64,
    pub jz_mean: f64,
    pub jx_var: f64,
    pub jy_var: f64,
    pub jz_var: f64,
    pub jyjz_cov: f64,
    pub se_jx: f64,
    pub se_jz_mean: f64,
    /// Jackknife standard error of `jz_var`.
    pub se_jz_var: f64,
    /// `⟨|α₁|² + |α₂|²⟩ − 1`.
    pub atom_number: f64,
    pub n_traj: usize,
}

impl SpinMoments {
    pub fn from_spins(spins: &[Spin], atom_number: f64) -> Self {
        let xs: Vec<f64> = spins.iter().map(|s| s.x).collect();
        let ys: Vec<f64> = spins.iter().map(|s| s.y).collect();
        let zs: Vec<f64> = spins.iter().map(|s| s.z).collect();
        let jy_var = stats::variance(&ys);
        let jz_var = stats::variance(&zs);
        // Clamp rounding excursions past Cauchy–Schwarz.
        let bound = (jy_var * jz_var).sqrt();
        let jyjz_cov = stats::covariance(&ys, &zs).clamp(-bound, bound);
        SpinMoments {
            jx_mean: stats::mean(&xs),
            jy_mean: stats::mean(&ys),
            jz_mean: stats::mean(&zs),
            jx_var: stats::variance(&xs),
            jy_var,
            jz_var,
            jyjz_cov,
            se_jx: stats::standard_error_of_mean(&xs),
            se_jz_mean: stats::standard_error_of_mean(&zs),
            se_jz_var: stats::jackknife_variance_se(&zs, stats::JACKKNIFE_BLOCKS),
            atom_number,
            n_traj: spins.len(),
        }
    }

    /// `Var(J_z)` after a rotation by `theta` about `J_x`.
    pub fn rotated_jz_variance(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.jz_var * c * c + self.jy_var * s * s + 2.0 * self.jyjz_cov * s * c
    }
}

/// Wineland parameter with its propagated standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingEstimate {
    pub xi: f64,
    pub se: f64,
}

impl SqueezingEstimate {
    pub fn xi_squared(&self) -> f64 {
        self.xi * self.xi
    }
}

/// `ξ = √N · √Var(J_z) / |⟨J_x⟩|`, with `N` the initial atom number.
///
/// Fails when `⟨J_x⟩` is zero or within three standard errors of zero.
pub fn squeezing_parameter(m: &SpinMoments, n_atoms: u64) -> Result<SqueezingEstimate> {
    let jx = m.jx_mean.abs();
    if !(jx > 0.0) || !jx.is_finite() || jx <= 3.0 * m.se_jx {
        return Err(Error::DegenerateState(format!(
            "|<J_x>| = {jx:.3e} is not resolved from zero (SE {:.3e})",
            m.se_jx
        )));
    }
    let n = n_atoms as f64;
    let var = m.jz_var.max(0.0);
    let xi = (n * var).sqrt() / jx;
    let rel_var = if var > 0.0 { m.se_jz_var / (2.0 * var) } else { 0.0 };
    let rel_jx = m.se_jx / jx;
    let se = xi * (rel_var * rel_var + rel_jx * rel_jx).sqrt();
    Ok(SqueezingEstimate { xi, se })
}

/// Interferometric phase sensitivity `Δφ = ξ/√N`.
pub fn phase_sensitivity(xi: f64, n_atoms: u64) -> f64 {
    xi / (n_atoms as f64).sqrt()
}

/// Counts of trajectories over azimuth `φ = atan2(𝒥_y, 𝒥_x)` and normalised
/// height `z = 𝒥_z / (N/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochHistogram {
    pub n_phi: usize,
    pub n_z: usize,
    /// Row-major by `z` bin: `counts[z_bin * n_phi + phi_bin]`.
    pub counts: Vec<u64>,
}

impl BlochHistogram {
    pub fn count(&self, phi_bin: usize, z_bin: usize) -> u64 {
        self.counts[z_bin * self.n_phi + phi_bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn phi_center(&self, phi_bin: usize) -> f64 {
        let w = 2.0 * std::f64::consts::PI / self.n_phi as f64;
        -std::f64::consts::PI + (phi_bin as f64 + 0.5) * w
    }

    pub fn z_center(&self, z_bin: usize) -> f64 {
        let w = 2.0 / self.n_z as f64;
        -1.0 + (z_bin as f64 + 0.5) * w
    }

    /// `(phi_bin, z_bin)` of the most populated cell (first in scan order on ties).
    pub fn mode(&self) -> (usize, usize) {
        let (idx, _) = self
            .counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
        (idx % self.n_phi, idx / self.n_phi)
    }

    /// Long-form rows `(phi_bin, z_bin, count)`.
    pub fn long_form(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.n_z).flat_map(move |z| (0..self.n_phi).map(move |p| (p, z, self.count(p, z))))
    }
}

fn bin_index(value: f64, lo: f64, hi: f64, n: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * n as f64).floor();
    if t.is_nan() || t < 0.0 {
        0
    } else {
        (t as usize).min(n - 1)
    }
}

/// Two-dimensional quasi-probability histogram on the Bloch sphere.
/// Values outside `[−π, π] × [−1, 1]` land in the edge bins.
pub fn bloch_histogram(ens: &TrajectoryEnsemble, n_phi: usize, n_z: usize) -> Result<BlochHistogram> {
    if n_phi < 2 || n_z < 2 {
        return Err(Error::config(format!("histogram grid {n_phi}x{n_z} is smaller than 2x2")));
    }
    let half_n = ens.n_atoms() as f64 / 2.0;
    let mut counts = vec![0u64; n_phi * n_z];
    for s in ens.spins() {
        let phi = s.y.atan2(s.x);
        let z = s.z / half_n;
        let pb = bin_index(phi, -std::f64::consts::PI, std::f64::consts::PI, n_phi);
        let zb = bin_index(z, -1.0, 1.0, n_z);
        counts[zb * n_phi + pb] += 1;
    }
    Ok(BlochHistogram { n_phi, n_z, counts })
}
