use hcrm_core::levy::{h_deriv, h_derivs_recursive, h_eval, psi, psi_deriv, BaseLaplace, GgpComponent, LevySpec};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn spec_strategy() -> impl Strategy<Value = LevySpec> {
    prop_oneof![
        (0.05f64..10.0).prop_map(|m| LevySpec::gamma(m).unwrap()),
        (0.0f64..0.95, 0.05f64..10.0).prop_map(|(d, m)| LevySpec::generalized_gamma(d, m).unwrap()),
        prop::collection::vec((0.05f64..5.0, 0.0f64..0.9), 1..4).prop_map(|c| {
            LevySpec::sum_generalized_gamma(
                c.into_iter().map(|(theta, discount)| GgpComponent { theta, discount }).collect(),
            )
            .unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bernstein_signs(spec in spec_strategy(), t in 0.0f64..50.0) {
        for k in 1..=8u32 {
            let s = psi_deriv(&spec, k, t).unwrap().sign();
            prop_assert_eq!(s, if k % 2 == 1 { 1 } else { -1 });
        }
        let h = h_derivs_recursive(&spec, 8, t).unwrap();
        for (k, v) in h.iter().enumerate() {
            prop_assert_eq!(v.sign(), if k % 2 == 0 { 1 } else { -1 }, "k = {}", k);
        }
    }

    #[test]
    fn psi_increasing_and_concave(spec in spec_strategy(), t in 0.0f64..20.0, dt in 0.01f64..5.0) {
        let a = psi(&spec, t).unwrap();
        let b = psi(&spec, t + dt).unwrap();
        let c = psi(&spec, t + 2.0 * dt).unwrap();
        prop_assert!(b > a);
        prop_assert!(c - b <= b - a + 1e-12 * c.abs());
    }

    #[test]
    fn h_is_exp_minus_psi(spec in spec_strategy(), u in 0.0f64..30.0) {
        let h = h_eval(&spec, u).unwrap();
        prop_assert!(rel(h, (-psi(&spec, u).unwrap()).exp()) < 1e-14);
    }

    #[test]
    fn sggp_is_additive(c in prop::collection::vec((0.05f64..5.0, 0.0f64..0.9), 1..4), t in 0.0f64..20.0, k in 1u32..6) {
        let comps: Vec<GgpComponent> = c.iter().map(|&(theta, discount)| GgpComponent { theta, discount }).collect();
        let sum = LevySpec::sum_generalized_gamma(comps.clone()).unwrap();
        let parts: Vec<LevySpec> = comps.iter().map(|g| LevySpec::generalized_gamma(g.discount, g.theta).unwrap()).collect();
        let p: f64 = parts.iter().map(|s| psi(s, t).unwrap()).sum();
        prop_assert!(rel(psi(&sum, t).unwrap(), p) <= 1e-12 || p == 0.0);
        let pk: f64 = parts.iter().map(|s| psi_deriv(s, k, t).unwrap().to_f64()).sum();
        prop_assert!(rel(psi_deriv(&sum, k, t).unwrap().to_f64(), pk) <= 1e-12);
    }

    #[test]
    fn gamma_closed_form_matches_recursion(m in 0.05f64..10.0, u in 0.0f64..30.0) {
        let spec = LevySpec::gamma(m).unwrap();
        let closed = BaseLaplace::new(spec.clone());
        let rec = h_derivs_recursive(&spec, 10, u).unwrap();
        for k in 0..=10u32 {
            let a = closed.deriv(k, u).unwrap();
            prop_assert!((a.log_mag() - rec[k as usize].log_mag()).abs() < 1e-10, "k = {}", k);
            prop_assert_eq!(a.sign(), rec[k as usize].sign());
        }
    }
}

#[test]
fn continuity_at_zero_discount() {
    let g = LevySpec::gamma(1.7).unwrap();
    let near = LevySpec::generalized_gamma(1e-8, 1.7).unwrap();
    for &t in &[0.1, 1.0, 5.0, 40.0] {
        assert!(rel(psi(&near, t).unwrap(), psi(&g, t).unwrap()) < 1e-5);
        for k in 1..=6 {
            let a = psi_deriv(&near, k, t).unwrap().to_f64();
            let b = psi_deriv(&g, k, t).unwrap().to_f64();
            assert!(rel(a, b) < 1e-5, "k = {k}, t = {t}");
        }
    }
}

#[test]
fn large_orders_stay_finite() {
    let spec = LevySpec::generalized_gamma(0.3, 1.0).unwrap();
    let v = psi_deriv(&spec, 400, 0.5).unwrap();
    assert!(v.log_mag().is_finite());
    let h = BaseLaplace::new(spec.clone()).deriv(200, 2.0).unwrap();
    assert!(h.log_mag().is_finite());
    assert_eq!(h.sign(), 1);
    assert!(matches!(h_deriv(&spec, 3, 1.0), Err(hcrm_core::HcrmError::FitNotAvailable)));
}
