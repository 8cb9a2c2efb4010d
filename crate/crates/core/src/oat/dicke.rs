//! Exact one-axis twisting in the Dicke basis.
//!
//! A fixed-`N` state is stored as amplitudes `c_k` on `|j, m = k − j⟩`,
//! `j = N/2`, with `J_+ = a₁†a₂`. Twisting is diagonal, rotations about `J_x`
//! use a Taylor series of the tridiagonal generator in short substeps.
//!
//! The truncated Wigner initial state is a product of coherent states, i.e. a
//! Poisson mixture of fixed-`N` spin states. [`dicke_oat_exact_poisson`] gives
//! the moments of that mixture, which is the exact counterpart of an ensemble
//! started from [`crate::TrajectoryEnsemble::coherent_spin_state`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oat::{minimum_rotated_variance, optimal_angle};

/// Largest atom number handled by the exact reference.
pub const MAX_DICKE_ATOMS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct DickeState {
    n_atoms: usize,
    amps: Vec<Complex64>,
}

/// Symmetrised first and second moments of a spin state or mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DickeMoments {
    pub jx_mean: f64,
    pub jy_mean: f64,
    pub jz_mean: f64,
    pub jy_var: f64,
    pub jz_var: f64,
    /// `½⟨J_yJ_z + J_zJ_y⟩ − ⟨J_y⟩⟨J_z⟩`.
    pub jyjz_cov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DickeOatResult {
    pub xi: f64,
    /// Rotation about `J_x` that minimises `Var(J_z)`.
    pub theta_opt: f64,
    pub moments: DickeMoments,
}

/// Raw moments used to combine number sectors.
#[derive(Debug, Clone, Copy, Default)]
struct RawMoments {
    jx: f64,
    jy: f64,
    jz: f64,
    jy2: f64,
    jz2: f64,
    yz: f64,
}

impl DickeState {
    /// The `+x` coherent spin state: `c_k = 2^{−N/2} √C(N, k)`.
    pub fn coherent_x(n_atoms: usize) -> Result<Self> {
        check_size(n_atoms)?;
        let ln2 = std::f64::consts::LN_2;
        let mut ln_binom = 0.0;
        let mut amps = Vec::with_capacity(n_atoms + 1);
        for k in 0..=n_atoms {
            if k > 0 {
                ln_binom += ((n_atoms - k + 1) as f64 / k as f64).ln();
            }
            amps.push(Complex64::new((0.5 * ln_binom - 0.5 * n_atoms as f64 * ln2).exp(), 0.0));
        }
        Ok(DickeState { n_atoms, amps })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|c| c.norm_sqr()).sum()
    }

    fn m(&self, k: usize) -> f64 {
        k as f64 - 0.5 * self.n_atoms as f64
    }

    /// `⟨k+1| J_+ |k⟩ = √((N − k)(k + 1))`.
    fn ladder(&self, k: usize) -> f64 {
        (((self.n_atoms - k) * (k + 1)) as f64).sqrt()
    }

    /// `exp(−iλ J_z²)`.
    pub fn twist(&mut self, lambda: f64) {
        for k in 0..self.amps.len() {
            let m = self.m(k);
            self.amps[k] *= Complex64::from_polar(1.0, -lambda * m * m);
        }
    }

    fn apply_jx(&self, v: &[Complex64], out: &mut [Complex64]) {
        let n = v.len();
        for k in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            if k > 0 {
                acc += v[k - 1] * self.ladder(k - 1);
            }
            if k + 1 < n {
                acc += v[k + 1] * self.ladder(k);
            }
            out[k] = 0.5 * acc;
        }
    }

    /// `exp(−iθ J_x)`.
    pub fn rotate_x(&mut self, theta: f64) -> Result<()> {
        if !theta.is_finite() {
            return Err(Error::domain(format!("rotation angle {theta} is not finite")));
        }
        if theta == 0.0 || self.n_atoms == 0 {
            return Ok(());
        }
        // Spectral radius of J_x is N/2; keep each substep's |h|·N/2 ≤ 1.
        let radius = 0.5 * self.n_atoms as f64;
        let steps = (theta.abs() * radius).ceil().max(1.0) as usize;
        let h = theta / steps as f64;
        let mut term = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        let mut next = term.clone();
        for _ in 0..steps {
            term.copy_from_slice(&self.amps);
            for order in 1..60 {
                self.apply_jx(&term, &mut next);
                let factor = Complex64::new(0.0, -h / order as f64);
                let mut size = 0.0;
                for (t, nx) in term.iter_mut().zip(&next) {
                    *t = nx * factor;
                    size += t.norm_sqr();
                }
                for (a, t) in self.amps.iter_mut().zip(&term) {
                    *a += t;
                }
                if size < 1e-34 {
                    break;
                }
            }
        }
        Ok(())
    }

    fn raw_moments(&self) -> RawMoments {
        let mut r = RawMoments::default();
        let mut jp = Complex64::new(0.0, 0.0);
        let mut sym = Complex64::new(0.0, 0.0);
        let mut jp2 = Complex64::new(0.0, 0.0);
        for k in 0..self.amps.len() {
            let p = self.amps[k].norm_sqr();
            let m = self.m(k);
            r.jz += p * m;
            r.jz2 += p * m * m;
            if k < self.n_atoms {
                let e = self.ladder(k);
                let up = self.amps[k + 1].conj() * self.amps[k] * e;
                jp += up;
                sym += up * (m + 0.5);
                if k + 1 < self.n_atoms {
                    jp2 += self.amps[k + 2].conj() * self.amps[k] * e * self.ladder(k + 1);
                }
            }
        }
        let j = 0.5 * self.n_atoms as f64;
        r.jx = jp.re;
        r.jy = jp.im;
        r.jy2 = -0.5 * jp2.re + 0.5 * (j * (j + 1.0) - r.jz2);
        r.yz = sym.im;
        r
    }

    pub fn moments(&self) -> DickeMoments {
        self.raw_moments().central()
    }
}

impl RawMoments {
    fn central(&self) -> DickeMoments {
        DickeMoments {
            jx_mean: self.jx,
            jy_mean: self.jy,
            jz_mean: self.jz,
            jy_var: self.jy2 - self.jy * self.jy,
            jz_var: self.jz2 - self.jz * self.jz,
            jyjz_cov: self.yz - self.jy * self.jz,
        }
    }

    fn add_scaled(&mut self, w: f64, o: &RawMoments) {
        self.jx += w * o.jx;
        self.jy += w * o.jy;
        self.jz += w * o.jz;
        self.jy2 += w * o.jy2;
        self.jz2 += w * o.jz2;
        self.yz += w * o.yz;
    }
}

fn check_size(n_atoms: usize) -> Result<()> {
    if n_atoms > MAX_DICKE_ATOMS {
        return Err(Error::Capability(format!(
            "exact Dicke reference supports N <= {MAX_DICKE_ATOMS}, got {n_atoms}"
        )));
    }
    Ok(())
}

fn finish(m: DickeMoments, n_ref: f64) -> Result<DickeOatResult> {
    if !(m.jx_mean.abs() > 0.0) {
        return Err(Error::DegenerateState("<J_x> vanishes in the exact state".into()));
    }
    let vmin = minimum_rotated_variance(m.jz_var, m.jy_var, m.jyjz_cov);
    Ok(DickeOatResult {
        xi: (n_ref * vmin).sqrt() / m.jx_mean.abs(),
        theta_opt: optimal_angle(m.jz_var, m.jy_var, m.jyjz_cov),
        moments: m,
    })
}

fn twisted(n_atoms: usize, lambda: f64, theta_pre: f64) -> Result<DickeState> {
    let mut s = DickeState::coherent_x(n_atoms)?;
    s.rotate_x(theta_pre)?;
    s.twist(lambda);
    Ok(s)
}

/// Rotate the `+x` coherent state by `theta_pre` about `J_x`, twist by
/// `lambda`, and report the optimally rotated Wineland parameter.
pub fn dicke_oat_exact(n_atoms: usize, lambda: f64, theta_pre: f64) -> Result<DickeOatResult> {
    if !lambda.is_finite() {
        return Err(Error::domain("lambda must be finite"));
    }
    let s = twisted(n_atoms, lambda, theta_pre)?;
    finish(s.moments(), n_atoms as f64)
}

/// As [`dicke_oat_exact`] for a Poisson mixture of atom numbers with mean
/// `mean_atoms`, normalised with `N = mean_atoms`.
pub fn dicke_oat_exact_poisson(mean_atoms: f64, lambda: f64, theta_pre: f64) -> Result<DickeOatResult> {
    if !(mean_atoms > 0.0) || !lambda.is_finite() {
        return Err(Error::domain("mean atom number must be positive and lambda finite"));
    }
    let spread = 12.0 * mean_atoms.sqrt() + 10.0;
    let lo = (mean_atoms - spread).floor().max(0.0) as usize;
    let hi = (mean_atoms + spread).ceil() as usize;
    check_size(hi)?;
    let ln_mean = mean_atoms.ln();
    let mut ln_fact = 0.0;
    let mut total = RawMoments::default();
    let mut weight_sum = 0.0;
    for n in 0..=hi {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        if n < lo {
            continue;
        }
        let w = (n as f64 * ln_mean - mean_atoms - ln_fact).exp();
        weight_sum += w;
        total.add_scaled(w, &twisted(n, lambda, theta_pre)?.raw_moments());
    }
    let mut norm = RawMoments::default();
    norm.add_scaled(1.0 / weight_sum, &total);
    finish(norm.central(), mean_atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form OAT squeezing of the fixed-N coherent state.
    fn ku_xi(n: f64, lambda: f64) -> f64 {
        let jx = 0.5 * n * lambda.cos().powf(n - 1.0);
        let a = 1.0 - (2.0 * lambda).cos().powf(n - 2.0);
        let b = 4.0 * lambda.sin() * lambda.cos().powf(n - 2.0);
        let v = 0.25 * n * (1.0 + 0.25 * (n - 1.0) * (a - (a * a + b * b).sqrt()));
        (n * v).sqrt() / jx
    }

    #[test]
    fn coherent_state_moments() {
        let s = DickeState::coherent_x(50).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-13);
        let m = s.moments();
        assert!((m.jx_mean - 25.0).abs() < 1e-11);
        assert!(m.jz_mean.abs() < 1e-12);
        assert!((m.jz_var - 12.5).abs() < 1e-11);
        assert!((m.jy_var - 12.5).abs() < 1e-11);
        assert!(m.jyjz_cov.abs() < 1e-12);
    }

    #[test]
    fn matches_closed_form() {
        for &(n, lambda) in &[(10usize, 0.1), (100, 0.01), (100, 0.05), (1000, 0.003), (2000, 1e-3)] {
            let exact = dicke_oat_exact(n, lambda, 0.0).unwrap().xi;
            let ku = ku_xi(n as f64, lambda);
            assert!((exact / ku - 1.0).abs() < 1e-8, "N={n} λ={lambda}: {exact} vs {ku}");
        }
    }

    #[test]
    fn small_twist_series() {
        // For λ ≪ 1/N the shear builds Cov(J_y, J_z) ≈ N(N − 1)λ/4.
        let n = 400usize;
        let lambda = 1e-5;
        let m = dicke_oat_exact(n, lambda, 0.0).unwrap().moments;
        let expected_cov = 0.25 * (n as f64) * (n as f64 - 1.0) * lambda;
        assert!((m.jyjz_cov.abs() / expected_cov - 1.0).abs() < 1e-3, "{}", m.jyjz_cov);
    }

    #[test]
    fn rotation_is_unitary_and_periodic() {
        let mut s = DickeState::coherent_x(30).unwrap();
        s.twist(0.07);
        let before = s.clone();
        s.rotate_x(1.3).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        s.rotate_x(-1.3).unwrap();
        for (a, b) in s.amplitudes().iter().zip(before.amplitudes()) {
            assert!((a - b).norm() < 1e-11);
        }
        // exp(−iπJ_x) maps J_z → −J_z.
        let mut t = before.clone();
        t.rotate_x(std::f64::consts::PI).unwrap();
        let (m0, m1) = (before.moments(), t.moments());
        assert!((m1.jz_var - m0.jz_var).abs() < 1e-9);
        assert!((m1.jyjz_cov - m0.jyjz_cov).abs() < 1e-9);
        assert!((m1.jy_mean + m0.jy_mean).abs() < 1e-9);
    }

    #[test]
    fn optimal_angle_reaches_minimum() {
        let r = dicke_oat_exact(200, 0.02, 0.0).unwrap();
        let mut s = DickeState::coherent_x(200).unwrap();
        s.twist(0.02);
        s.rotate_x(r.theta_opt).unwrap();
        let m = s.moments();
        let xi = (200.0 * m.jz_var).sqrt() / m.jx_mean.abs();
        assert!((xi / r.xi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn poisson_mixture_is_close_to_fixed_n_for_weak_twist() {
        let fixed = dicke_oat_exact(100, 0.005, 0.0).unwrap().xi;
        let mixed = dicke_oat_exact_poisson(100.0, 0.005, 0.0).unwrap().xi;
        assert!((mixed / fixed - 1.0).abs() < 0.02);
        let plain = dicke_oat_exact_poisson(100.0, 0.0, 0.0).unwrap();
        assert!((plain.xi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn size_limit() {
        assert!(matches!(dicke_oat_exact(2001, 0.01, 0.0), Err(Error::Capability(_))));
        assert!(matches!(dicke_oat_exact_poisson(1990.0, 0.01, 0.0), Err(Error::Capability(_))));
    }
}
