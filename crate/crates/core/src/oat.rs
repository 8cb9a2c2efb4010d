//! One-axis twisting.
//!
//! `exp(−iλ Ĵ_z²)` acts on each trajectory as a phase shear driven by its own
//! `𝒥_z`: `α₁ → e^{−iλ𝒥_z} α₁`, `α₂ → e^{+iλ𝒥_z} α₂`. Terms linear in `J_z`
//! are dropped, so no detuning compensation appears here.

pub mod dicke;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{SpinMoments, TrajectoryEnsemble};

/// Largest twisting strength reached by free expansion of spatially separated
/// clouds for `N = 10⁵`.
pub const LAMBDA_FREE_EXPANSION: f64 = 6.5e-5;
/// Twisting strength reachable with a delta-kick focusing pulse, `N = 10⁵`.
pub const LAMBDA_DELTA_KICK: f64 = 9.8e-5;
/// Twisting strength that minimises OAT-only squeezing at `N = 10⁵`.
pub const LAMBDA_OPTIMAL_1E5: f64 = 53.0e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OatParams {
    /// Integrated twisting `λ_OAT = ∫χ(t)dt` (radians).
    pub lambda: f64,
}

impl OatParams {
    pub fn new(lambda: f64) -> Self {
        OatParams { lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::domain(format!("lambda_oat must be finite and non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub fn apply_oat(ens: TrajectoryEnsemble, p: &OatParams) -> Result<TrajectoryEnsemble> {
    p.validate()?;
    if p.lambda == 0.0 {
        return Ok(ens);
    }
    let lambda = p.lambda;
    let out = ens.map_pairs(move |_, a1, a2| {
        let jz = 0.5 * (a1.norm_sqr() - a2.norm_sqr());
        let u = Complex64::from_polar(1.0, -lambda * jz);
        (a1 * u, a2 * u.conj())
    });
    out.ensure_finite("one-axis twisting")?;
    Ok(out)
}

/// Angle about `J_x` that minimises the rotated `Var(J_z)`.
///
/// With the [`TrajectoryEnsemble::rotate_x`] convention the rotated variance is
/// `V_z cos²θ + V_y sin²θ + C sin 2θ`, whose minimum sits at
/// `2θ = atan2(−C, (V_y − V_z)/2)`. The isotropic case returns 0.
pub fn optimal_x_rotation(m: &SpinMoments) -> f64 {
    optimal_angle(m.jz_var, m.jy_var, m.jyjz_cov)
}

pub(crate) fn optimal_angle(var_z: f64, var_y: f64, cov: f64) -> f64 {
    let half_diff = 0.5 * (var_y - var_z);
    if half_diff == 0.0 && cov == 0.0 {
        return 0.0;
    }
    0.5 * (-cov).atan2(half_diff)
}

/// Smallest `Var(J_z)` reachable by a rotation about `J_x`.
pub fn minimum_rotated_variance(var_z: f64, var_y: f64, cov: f64) -> f64 {
    let mean = 0.5 * (var_z + var_y);
    let radius = (0.25 * (var_z - var_y).powi(2) + cov * cov).sqrt();
    (mean - radius).max(0.0)
}
