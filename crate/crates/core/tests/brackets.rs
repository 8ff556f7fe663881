use llg_core::galerkin::control_field;
use llg_core::lie::{bracket, bracket_generating_report, verify_bracket_identity, BracketFamily};
use llg_core::{LinearField, ModeIndex, ModeState};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn combo(order: usize, weights: &[f64]) -> LinearField {
    let mut m = DMatrix::zeros(3 * (order + 1), 3 * (order + 1));
    for (idx, w) in weights.iter().enumerate() {
        let (k, l) = (idx / 3, idx % 3 + 1);
        m += control_field(k, l, order).unwrap().matrix() * *w;
    }
    LinearField::new(order, m).unwrap()
}

fn field_strategy(order: usize) -> impl Strategy<Value = LinearField> {
    prop::collection::vec(-1.0f64..1.0, 3 * (order + 1)).prop_map(move |w| combo(order, &w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jacobi_identity((f, g, h) in (1usize..=4).prop_flat_map(|o| (field_strategy(o), field_strategy(o), field_strategy(o)))) {
        let a = bracket(&f, &bracket(&g, &h).unwrap()).unwrap();
        let b = bracket(&g, &bracket(&h, &f).unwrap()).unwrap();
        let c = bracket(&h, &bracket(&f, &g).unwrap()).unwrap();
        let sum = a.matrix() + b.matrix() + c.matrix();
        prop_assert!(sum.norm() < 1e-11);
    }

    #[test]
    fn bracket_is_antisymmetric((f, g) in (1usize..=4).prop_flat_map(|o| (field_strategy(o), field_strategy(o)))) {
        let fg = bracket(&f, &g).unwrap();
        let gf = bracket(&g, &f).unwrap();
        prop_assert!((fg.matrix() + gf.matrix()).norm() < 1e-13);
    }
}

#[test]
fn bracket_matches_finite_difference_lie_derivative() {
    // [f, g](x) = Dg(x) f(x) − Df(x) g(x) by central differences
    let order = 3;
    let f = control_field(1, 1, order).unwrap();
    let g = control_field(2, 2, order).unwrap();
    let x = ModeState::from_coeffs(
        order,
        (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect(),
    )
    .unwrap();
    let apply = |a: &LinearField, y: &ModeState| a.apply(y).unwrap();
    let h = 1e-5;
    let directional = |a: &LinearField, dir: &ModeState| {
        let plus = apply(a, &x.axpy(h, dir).unwrap());
        let minus = apply(a, &x.axpy(-h, dir).unwrap());
        plus.sub(&minus).unwrap().scaled(0.5 / h)
    };
    let fd = directional(&g, &apply(&f, &x))
        .sub(&directional(&f, &apply(&g, &x)))
        .unwrap();
    let exact = apply(&bracket(&f, &g).unwrap(), &x);
    for (a, b) in fd.as_slice().iter().zip(exact.as_slice()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn identities_hold_when_lifted() {
    for order in [1, 3, 6] {
        for p in 0..=order {
            for q in 0..=order - p {
                for fam in BracketFamily::ALL {
                    let r = verify_bracket_identity(p, q, fam, order).unwrap();
                    assert!(r.exact_residual < 1e-12, "{r:?}");
                    assert!(r.doubled_residual < 1e-12, "{r:?}");
                }
            }
        }
    }
}

#[test]
fn rank_report_is_reproducible() {
    let modes = vec![
        ModeIndex {
            frequency: 0,
            axis: 1,
        },
        ModeIndex {
            frequency: 0,
            axis: 2,
        },
        ModeIndex {
            frequency: 1,
            axis: 1,
        },
    ];
    let a = bracket_generating_report(2, &modes, 8, 4).unwrap();
    let b = bracket_generating_report(2, &modes, 8, 4).unwrap();
    assert_eq!(a.ranks, b.ranks);
    assert_eq!(a.min_rank, 6);
    assert_eq!(a.algebra_dim, 9);
    assert_eq!(a.control_invariants, 3);
    assert!(a.orthogonal.iter().all(|&o| o));
}
