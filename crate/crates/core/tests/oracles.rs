mod common;

use approx::assert_relative_eq;
use common::*;
use llg_core::spectral::{dealiased_grid_size, weighted_inner};
use llg_core::{
    control_field, drift, evaluate_physical, project_to_modes, quad_product_coeff,
    triple_product_coeff, LlgParams, ModeState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn drift_matches_quadrature_and_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for order in [1, 2, 3, 5] {
        let p = LlgParams::new(order).with_constants(0.7, 1.3);
        for _ in 0..10 {
            let m = random_state(order, &mut rng);
            let got = drift(&m, &p).unwrap();
            let quad = drift_by_quadrature(m.as_slice(), order, 0.7, 1.3, 6 * order + 7);
            let conv = drift_by_convolution(m.as_slice(), order, 0.7, 1.3);
            assert!(rel_err(got.as_slice(), &quad) < 1e-12, "K={order}");
            assert!(rel_err(got.as_slice(), &conv) < 1e-12, "K={order}");
        }
    }
}

#[test]
fn two_mode_drift_values() {
    // frozen from the convolution oracle
    let m = ModeState::from_entries(2, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let conv = drift_by_convolution(m.as_slice(), 2, 1.0, 1.0);
    let expected = [0.5, 0.0, 0.0, 0.0, -1.0, -1.0, 0.5, 0.0, 0.0];
    for (c, e) in conv.iter().zip(expected) {
        assert_relative_eq!(*c, e, epsilon = 1e-14);
    }
    let got = drift(&m, &LlgParams::new(2)).unwrap();
    for (g, e) in got.as_slice().iter().zip(expected) {
        assert_relative_eq!(*g, e, epsilon = 1e-13);
    }
}

#[test]
fn control_fields_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for order in [1, 3, 6] {
        for k in 0..=order {
            for l in 1..=3 {
                let a = control_field(k, l, order).unwrap();
                let m = random_state(order, &mut rng);
                let got = a.apply(&m).unwrap();
                let want = control_by_quadrature(m.as_slice(), order, k, l, 4 * order + 5);
                assert!(
                    rel_err(got.as_slice(), &want) < 1e-12,
                    "K={order} k={k} l={l}"
                );
            }
        }
    }
}

#[test]
fn product_tables_match_quadrature() {
    let n = 64;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let integrate = |f: &[usize]| -> f64 {
        (0..n)
            .map(|q| {
                f.iter()
                    .map(|&i| (i as f64 * h * q as f64).cos())
                    .product::<f64>()
            })
            .sum::<f64>()
            * h
    };
    for a in 0..=12 {
        for b in 0..=12 {
            for c in 0..=12 {
                assert_relative_eq!(
                    triple_product_coeff(a, b, c),
                    integrate(&[a, b, c]),
                    epsilon = 1e-12
                );
            }
        }
    }
    for a in (0..=12).step_by(3) {
        for b in 0..=12 {
            for c in 0..=12 {
                for d in 0..=12 {
                    assert_relative_eq!(
                        quad_product_coeff(a, b, c, d),
                        integrate(&[a, b, c, d]),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }
}

fn state(order: usize) -> impl Strategy<Value = ModeState> {
    prop::collection::vec(-2.0f64..2.0, 3 * (order + 1))
        .prop_map(move |c| ModeState::from_coeffs(order, c).unwrap())
}

fn sized_state() -> impl Strategy<Value = ModeState> {
    (0usize..=6).prop_flat_map(state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval(m in sized_state()) {
        let f = evaluate_physical(&m, dealiased_grid_size(m.order())).unwrap();
        let w = m.weighted_norm();
        prop_assert!((f.l2_norm_sq() - w * w).abs() <= 1e-10 * (1.0 + w * w));
    }

    #[test]
    fn evaluate_project_round_trip(m in sized_state(), extra in 0usize..5) {
        let n = 2 * m.order() + 2 + extra;
        let back = project_to_modes(&evaluate_physical(&m, n).unwrap(), m.order()).unwrap();
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn control_fields_are_weighted_skew((m, n, k, l) in (0usize..=5).prop_flat_map(|o| (state(o), state(o), 0..=o, 1usize..=3))) {
        let a = control_field(k, l, m.order()).unwrap();
        let s = weighted_inner(&a.apply(&m).unwrap(), &n).unwrap() + weighted_inner(&m, &a.apply(&n).unwrap()).unwrap();
        prop_assert!(s.abs() < 1e-12 * (1.0 + m.weighted_norm() * n.weighted_norm()));
    }

    #[test]
    fn drift_is_tangent_to_weighted_sphere(m in (1usize..=6).prop_flat_map(state), mu1 in 0.1f64..2.0, mu2 in 0.01f64..2.0) {
        let p = LlgParams::new(m.order()).with_constants(mu1, mu2);
        let d = drift(&m, &p).unwrap();
        let w = m.weighted_norm();
        let dw = d.weighted_norm();
        prop_assert!(weighted_inner(&m, &d).unwrap().abs() <= 1e-11 * (1.0 + w * dw));
    }
}
