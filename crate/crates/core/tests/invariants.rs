use approx::{assert_abs_diff_eq, assert_relative_eq};
use hyperbolic_core::flow::{integrate, PhaseState};
use hyperbolic_core::kepler::kepler_elements;
use hyperbolic_core::{MassSystem, Vector};
use proptest::prelude::*;

fn system(n: usize, d: usize) -> impl Strategy<Value = MassSystem> {
    prop::collection::vec(0.2f64..3.0, n).prop_map(move |m| MassSystem::new(m, d).unwrap())
}

/// Configurations whose bodies are pairwise at least 0.3 apart.
fn config(ms: &MassSystem) -> impl Strategy<Value = Vector> {
    let len = ms.len();
    let probe = ms.clone();
    prop::collection::vec(-3.0f64..3.0, len)
        .prop_map(Vector::from_vec)
        .prop_filter("near collision", move |x| probe.min_distance(x).0 > 0.3)
}

fn system_and_config() -> impl Strategy<Value = (MassSystem, Vector)> {
    (2usize..=4, 2usize..=3)
        .prop_flat_map(|(n, d)| system(n, d))
        .prop_flat_map(|ms| {
            let x = config(&ms);
            (Just(ms), x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_is_homogeneous_of_degree_minus_one((ms, x) in system_and_config(), s in 0.1f64..10.0) {
        assert_relative_eq!(ms.potential(&(&x * s)), ms.potential(&x) / s, max_relative = 1e-12);
    }

    #[test]
    fn potential_ignores_common_translation((ms, x) in system_and_config(), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let d = ms.dim();
        let y = Vector::from_fn(x.len(), |k, _| x[k] + shift[k % d]);
        assert_relative_eq!(ms.potential(&y), ms.potential(&x), max_relative = 1e-12);
        let (gx, gy) = (ms.gradient(&x).unwrap(), ms.gradient(&y).unwrap());
        prop_assert!((gx - gy).norm() <= 1e-11 * (1.0 + ms.potential(&x)));
    }

    #[test]
    fn euler_identity((ms, x) in system_and_config()) {
        let g = ms.gradient(&x).unwrap();
        assert_relative_eq!(ms.inner(&g, &x), -ms.potential(&x), max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((ms, x) in system_and_config(), seed in prop::collection::vec(-1.0f64..1.0, 12)) {
        let xi = Vector::from_fn(x.len(), |k, _| seed[k]);
        let s = 1e-5;
        let fd = (ms.potential(&(&x + &xi * s)) - ms.potential(&(&x - &xi * s))) / (2.0 * s);
        let g = ms.gradient(&x).unwrap();
        prop_assert!((ms.inner(&g, &xi) - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn hessian_is_mass_symmetric((ms, x) in system_and_config(), seed in prop::collection::vec(-1.0f64..1.0, 24)) {
        let p = Vector::from_fn(x.len(), |k, _| seed[k]);
        let q = Vector::from_fn(x.len(), |k, _| seed[12 + k]);
        let hp = ms.hessian_apply(&x, &p).unwrap();
        let hq = ms.hessian_apply(&x, &q).unwrap();
        let (l, r) = (ms.inner(&hp, &q), ms.inner(&p, &hq));
        prop_assert!((l - r).abs() <= 1e-11 * (1.0 + l.abs()));
    }

    #[test]
    fn mass_inner_product_is_symmetric_and_positive((ms, x) in system_and_config(), seed in prop::collection::vec(-3.0f64..3.0, 12)) {
        let y = Vector::from_fn(x.len(), |k, _| seed[k]);
        // rounding is relative to |x||y|, not to the (possibly cancelled) result
        assert_abs_diff_eq!(ms.inner(&x, &y), ms.inner(&y, &x), epsilon = 1e-14 * ms.norm(&x) * ms.norm(&y));
        prop_assert!(ms.inner(&x, &x) > 0.0);
        prop_assert!(ms.inner(&x, &y).abs() <= ms.norm(&x) * ms.norm(&y) * (1.0 + 1e-14));
    }

    #[test]
    fn alpha0_is_scale_invariant((ms, a) in system_and_config(), s in 0.01f64..100.0) {
        let a0 = ms.alpha0(&a).unwrap();
        prop_assert!((0.0..1.0).contains(&a0));
        assert_relative_eq!(ms.alpha0(&(&a * s)).unwrap(), a0, max_relative = 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, max_global_rejects: 1 << 20, ..ProptestConfig::default() })]

    #[test]
    fn kepler_flow_conserves_energy_and_limit_shape(
        masses in prop::collection::vec(0.3f64..2.0, 2),
        r in prop::collection::vec(-6.0f64..6.0, 2),
        w in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let ms = MassSystem::new(masses.clone(), 2).unwrap();
        let mt: f64 = masses.iter().sum();
        let dist = (r[0] * r[0] + r[1] * r[1]).sqrt();
        let speed2 = w[0] * w[0] + w[1] * w[1];
        prop_assume!(dist > 1.0 && speed2 > 2.0 * mt / dist * 1.2);
        // keep clear of near-collisions, where explicit RK loses energy at any fixed tolerance
        let l = r[0] * w[1] - r[1] * w[0];
        let ecc = (1.0 + (speed2 - 2.0 * mt / dist) * l * l / (mt * mt)).sqrt();
        prop_assume!(l * l / mt / (1.0 + ecc) > 0.05);
        let (m1, m2) = (masses[0], masses[1]);
        let x = Vector::from_vec(vec![-m2 / mt * r[0], -m2 / mt * r[1], m1 / mt * r[0], m1 / mt * r[1]]);
        let v = Vector::from_vec(vec![-m2 / mt * w[0], -m2 / mt * w[1], m1 / mt * w[0], m1 / mt * w[1]]);
        let traj = integrate(&ms, &PhaseState::new(x.clone(), v.clone()), 30.0, 1e-11).unwrap();
        let e0 = ms.energy(&x, &v).unwrap();
        for s in traj.samples() {
            prop_assert!((ms.energy(&s.x, &s.v).unwrap() - e0).abs() <= 1e-8 * (1.0 + e0.abs()));
        }
        let end = traj.last();
        let a0 = kepler_elements(&ms, &x, &v).unwrap().limit_shape();
        let a1 = kepler_elements(&ms, &end.x, &end.v).unwrap().limit_shape();
        prop_assert!(ms.norm(&(a1 - a0)) <= 1e-8 * (1.0 + ms.norm(&x)));
    }
}
