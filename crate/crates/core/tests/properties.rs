use std::f64::consts::PI;

use hybrid_squeeze::hybrid::{run_hybrid, HybridConfig, NoiseConfig, SplitterNoiseTarget};
use hybrid_squeeze::oat::{self, apply_oat, minimum_rotated_variance, OatParams};
use hybrid_squeeze::phase_space::TrajectoryEnsemble;
use hybrid_squeeze::physics::{self, LabParams};
use hybrid_squeeze::qnd::{self, QndParams};
use hybrid_squeeze::SpinMoments;
use num_complex::Complex64;
use proptest::prelude::*;

fn css(n: u64, seed: u64) -> TrajectoryEnsemble {
    TrajectoryEnsemble::coherent_spin_state(n, 64, seed).unwrap()
}

fn max_diff(a: &TrajectoryEnsemble, b: &TrajectoryEnsemble) -> f64 {
    let scale = (a.n_atoms() as f64).sqrt();
    a.alpha1()
        .iter()
        .zip(b.alpha1())
        .chain(a.alpha2().iter().zip(b.alpha2()))
        .map(|(x, y)| (x - y).norm() / scale)
        .fold(0.0, f64::max)
}

fn max_number_drift(a: &TrajectoryEnsemble, b: &TrajectoryEnsemble) -> f64 {
    a.total_numbers()
        .iter()
        .zip(b.total_numbers())
        .map(|(x, y)| ((x - y) / a.n_atoms() as f64).abs())
        .fold(0.0, f64::max)
}

fn moments(vz: f64, vy: f64, cov: f64) -> SpinMoments {
    SpinMoments {
        jx_mean: 1.0,
        jy_mean: 0.0,
        jz_mean: 0.0,
        jx_var: 0.0,
        jy_var: vy,
        jz_var: vz,
        jyjz_cov: cov,
        se_jx: 0.0,
        se_jz_mean: 0.0,
        se_jz_var: 0.0,
        atom_number: 1.0,
        n_traj: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unitary_stages_conserve_number(
        n in 10u64..5000,
        seed in any::<u64>(),
        tx in -PI..PI,
        ty in -PI..PI,
        lambda in 0.0..0.5f64,
        phi in -PI..PI,
    ) {
        let start = css(n, seed);
        let end = start
            .clone()
            .rotate_x(tx).unwrap()
            .rotate_y(ty).unwrap()
            .global_phase(phi).unwrap();
        let end = apply_oat(end, &OatParams::new(lambda)).unwrap();
        prop_assert!(max_number_drift(&start, &end) < 1e-12);
    }

    #[test]
    fn global_phase_leaves_spins_unchanged(seed in any::<u64>(), phi in -PI..PI) {
        let a = css(200, seed);
        let b = a.clone().global_phase(phi).unwrap();
        for (s, t) in a.spins().iter().zip(b.spins()) {
            prop_assert!((s.x - t.x).abs() < 1e-10);
            prop_assert!((s.y - t.y).abs() < 1e-10);
            prop_assert!((s.z - t.z).abs() < 1e-10);
        }
    }

    #[test]
    fn rotations_compose_and_invert(seed in any::<u64>(), a in -PI..PI, b in -PI..PI) {
        let e = css(300, seed);
        let two = e.clone().rotate_x(a).unwrap().rotate_x(b).unwrap();
        let one = e.clone().rotate_x(a + b).unwrap();
        prop_assert!(max_diff(&two, &one) < 1e-12);

        let back = e.clone().rotate_y(a).unwrap().rotate_y(-a).unwrap();
        prop_assert!(max_diff(&back, &e) < 1e-12);

        // A full turn is −1 on spinors.
        let turned = e.clone().rotate_x(2.0 * PI).unwrap().global_phase(PI).unwrap();
        prop_assert!(max_diff(&turned, &e) < 1e-12);
    }

    #[test]
    fn twists_add(seed in any::<u64>(), l1 in 0.0..0.1f64, l2 in 0.0..0.1f64) {
        let e = css(100, seed);
        let two = apply_oat(apply_oat(e.clone(), &OatParams::new(l1)).unwrap(), &OatParams::new(l2)).unwrap();
        let one = apply_oat(e, &OatParams::new(l1 + l2)).unwrap();
        prop_assert!(max_diff(&two, &one) < 1e-9);
    }

    #[test]
    fn phase_interaction_is_unitary(re in -50.0..50.0f64, im in -50.0..50.0f64, jz in -1e3..1e3f64, c in 0.0..1e-2f64) {
        let beta = Complex64::new(re, im);
        let out = qnd::phase_interaction(beta, jz, c);
        prop_assert!((out.norm() - beta.norm()).abs() <= 1e-12 * beta.norm().max(1.0));
    }

    #[test]
    fn closed_form_angle_beats_scan(
        vz in 0.01..10.0f64,
        vy in 0.01..10.0f64,
        rho in -0.999..0.999f64,
    ) {
        let cov = rho * (vz * vy).sqrt();
        let m = moments(vz, vy, cov);
        let theta = oat::optimal_x_rotation(&m);
        let best = m.rotated_jz_variance(theta);
        let floor = minimum_rotated_variance(vz, vy, cov);
        prop_assert!((best - floor).abs() <= 1e-9 * (vz + vy));
        for k in 0..720 {
            let t = -PI / 2.0 + PI * k as f64 / 720.0;
            prop_assert!(best <= m.rotated_jz_variance(t) + 1e-12 * (vz + vy));
        }
    }

    #[test]
    fn depth_and_scattering_scale_with_inputs(
        atoms in 1e3..1e7f64,
        photons in 1e6..1e10f64,
        grow in 1.01..10.0f64,
    ) {
        let base = LabParams { n_atoms: atoms, ..LabParams::rb87_free_space(2.0e9, photons) };
        let more_atoms = LabParams { n_atoms: atoms * grow, ..base };
        let wider = LabParams { area: base.area * grow, ..base };
        let brighter = LabParams { n_photons: photons * grow, ..base };
        let farther = LabParams { delta: base.delta * grow, ..base };

        prop_assert!(physics::optical_depth(&more_atoms) > physics::optical_depth(&base));
        prop_assert!(physics::optical_depth(&wider) < physics::optical_depth(&base));
        let eta = physics::scattering_fraction(&base);
        prop_assert!((physics::scattering_fraction(&brighter) / eta - grow).abs() < 1e-9 * grow);
        prop_assert!(physics::scattering_fraction(&farther) < eta);
    }

    #[test]
    fn lab_coupling_matches_dimensionless_form(
        atoms in 1e3..1e7f64,
        photons in 1e6..1e10f64,
        detuning in 1e8..1e11f64,
    ) {
        let p = LabParams { n_atoms: atoms, ..LabParams::rb87_free_space(detuning, photons) };
        let d = physics::optical_depth(&p);
        let eta = physics::scattering_fraction(&p);
        let from_lab = physics::qnd_coupling_lab(&p);
        let reduced = physics::qnd_coupling(d, eta, atoms, photons).unwrap();
        prop_assert!((from_lab / reduced - 1.0).abs() < 1e-10);
        prop_assert!((reduced * reduced * atoms * photons / (2.0 * d * eta) - 1.0).abs() < 1e-10);
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn pipeline_is_bitwise_identical_across_worker_counts() {
    let mut cfg = HybridConfig::hybrid(2000, QndParams::new(100.0, 0.05).with_bins(20), 0.9, 1e-3, 3000, 77);
    cfg.noise = NoiseConfig {
        photon_fluctuation_frac: 0.1,
        bs_angle_sigma: 0.01,
        bs_noise_target: SplitterNoiseTarget::BothSplittersCommon,
    };
    let one = in_pool(1, || run_hybrid(&cfg).unwrap());
    let four = in_pool(4, || run_hybrid(&cfg).unwrap());
    let a = one.xi.unwrap();
    let b = four.xi.unwrap();
    assert_eq!(a.xi.to_bits(), b.xi.to_bits());
    assert_eq!(a.se.to_bits(), b.se.to_bits());
    assert_eq!(one.diagnostics.theta_oat.to_bits(), four.diagnostics.theta_oat.to_bits());
}

#[test]
fn lossless_measurement_conserves_atoms() {
    let e = TrajectoryEnsemble::coherent_spin_state(500, 200, 3).unwrap();
    let before = e.total_numbers();
    let (after, rec) = qnd::apply_qnd(e, &QndParams::lossless(2.0).with_bins(25)).unwrap();
    assert_eq!(rec.len(), 200);
    for (x, y) in before.iter().zip(after.total_numbers()) {
        assert!((x - y).abs() < 1e-9 * 500.0);
    }
}
