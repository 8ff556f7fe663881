mod common;

use common::expm_apply;
use llg_core::integrators::{
    integrate, integrate_controlled, sample_brownian, simulate_sde, SdeScheme,
};
use llg_core::steering::shooting_residual;
use llg_core::stochastic::weight_moment;
use llg_core::{control_field, ControlSchedule, GalerkinModel, LlgParams, ModeState};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generator(model: &GalerkinModel, values: &[f64]) -> DMatrix<f64> {
    model
        .fields()
        .iter()
        .zip(values)
        .fold(DMatrix::zeros(model.dim(), model.dim()), |acc, (f, v)| {
            acc + f.matrix() * *v
        })
}

#[test]
fn constant_control_matches_matrix_exponential() {
    let model = GalerkinModel::new(LlgParams::drift_free(2)).unwrap();
    let values = [0.7, -0.3, 0.5];
    let sched = ControlSchedule::constant(model.modes(), 1.0, &values).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m0 = common::random_state(2, &mut rng);
    let traj = integrate_controlled(&model, &sched, &m0, 1e-3, false).unwrap();
    let exact = expm_apply(&generator(&model, &values), 1.0, &m0.to_vector());
    let err = (traj.final_state().to_vector() - exact).amax();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn rk4_converges_at_fourth_order() {
    let a = control_field(1, 1, 2).unwrap().into_matrix() * 2.0
        + control_field(0, 2, 2).unwrap().into_matrix();
    let m0 = ModeState::from_coeffs(2, (0..9).map(|i| 1.0 + 0.1 * i as f64).collect()).unwrap();
    let exact = expm_apply(&a, 1.0, &m0.to_vector());
    let rhs = |_t: f64, m: &[f64], out: &mut [f64]| {
        let y = &a * DVector::from_column_slice(m);
        out.copy_from_slice(y.as_slice());
    };
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| {
            (integrate(rhs, &m0, 1.0, dt)
                .unwrap()
                .final_state()
                .to_vector()
                - &exact)
                .norm()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.8..=4.2).contains(&order), "{order}");
    }
}

#[test]
fn rotation_target_is_reached_by_its_schedule() {
    let model = GalerkinModel::new(LlgParams::drift_free(1)).unwrap();
    let m0 = ModeState::from_entries(1, &[(0, 3, 1.0), (1, 2, 0.4)]).unwrap();
    let a = control_field(0, 1, 1).unwrap().into_matrix();
    let m1 = ModeState::from_vector(1, &expm_apply(&a, 1.0, &m0.to_vector())).unwrap();
    let r = shooting_residual(&model, &[1.0, 0.0, 0.0], &m0, &m1, 1.0, 1, 1e-3).unwrap();
    assert!(r.value <= 1e-10, "{}", r.value);
}

#[test]
fn heun_drift_vanishes_and_ito_drift_does_not() {
    let model = GalerkinModel::new(LlgParams::new(2)).unwrap();
    let m0 = ModeState::from_entries(2, &[(0, 3, 1.0), (1, 1, 0.3), (2, 2, 0.2)]).unwrap();
    let drift_of = |dt: f64, scheme| {
        let mut worst: f64 = 0.0;
        for seed in 0..4 {
            let path = sample_brownian(model.modes(), 1.0, dt, seed).unwrap();
            let t = simulate_sde(&model, &m0, &path, 1.0, scheme, false).unwrap();
            worst = worst.max((t.final_state().weighted_norm() - m0.weighted_norm()).abs());
        }
        worst
    };
    let heun_coarse = drift_of(1e-2, SdeScheme::Heun);
    let heun_fine = drift_of(1e-3, SdeScheme::Heun);
    let em_fine = drift_of(1e-3, SdeScheme::EulerMaruyama);
    assert!(heun_fine < heun_coarse, "{heun_fine} vs {heun_coarse}");
    assert!(em_fine > 10.0 * heun_fine, "{em_fine} vs {heun_fine}");
}

#[test]
fn single_noise_mode_keeps_axis_one() {
    let params = LlgParams::drift_free(2).with_modes(vec![llg_core::ModeIndex {
        frequency: 0,
        axis: 1,
    }]);
    let model = GalerkinModel::new(params).unwrap();
    let m0 = ModeState::from_coeffs(2, (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let path = sample_brownian(model.modes(), 1.0, 1e-3, 9).unwrap();
    let t = simulate_sde(&model, &m0, &path, 1.0, SdeScheme::Heun, false).unwrap();
    for i in 0..=2 {
        assert!((t.final_state().get(i, 1) - m0.get(i, 1)).abs() < 1e-12);
    }
}

#[test]
fn brownian_increments_have_variance_dt() {
    let modes = LlgParams::new(1).control_modes;
    let dt = 1e-3;
    let path = sample_brownian(&modes, 20.0, dt, 77).unwrap();
    let n = path.steps() as f64;
    for c in 0..modes.len() {
        let mean = path.increments.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = path
            .increments
            .iter()
            .map(|r| (r[c] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        // sample variance has relative sd sqrt(2/n) ≈ 0.007
        assert!((var / dt - 1.0).abs() < 0.035, "{}", var / dt);
        assert!(mean.abs() < 5.0 * (dt / n).sqrt());
    }
}

#[test]
fn girsanov_weight_has_unit_mean() {
    let modes = LlgParams::new(1).control_modes;
    let u = ControlSchedule::from_flat(&modes, 1.0, 2, &[0.5, -0.2, 0.1, 0.0, 0.3, -0.4]).unwrap();
    let est = weight_moment(&u, 4000, 1e-2, 21).unwrap();
    assert!(est.agrees(4.0), "{est:?}");
}
