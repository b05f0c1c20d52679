use hyperbolic_core::busemann::{busemann_constancy_check, busemann_gradient, default_schedule, BusemannField};
use hyperbolic_core::scattering::hyperbolic_ray;
use hyperbolic_core::verify::Suite;
use hyperbolic_core::{Error, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn schedule_terms_are_cauchy_on_cone_points() {
    let s = Suite::default();
    let (ms, a) = (&s.three, &s.three_a);
    let (c, spec) = s.cone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vector> = (0..3).map(|_| spec.sample(ms, &mut rng, c.r0, 1.5 * c.r0)).collect();
    let far = pts.iter().map(|p| ms.norm(p)).fold(0.0, f64::max);
    let field = BusemannField::new(ms, a, s.three_energy(), default_schedule(far, c.r0), 1e-9).unwrap();
    assert_eq!(field.estimate(&Vector::zeros(ms.len())).unwrap().value, 0.0);
    let slack = 3.0 * field.action_tol();
    for p in &pts {
        let e = field.estimate(p).unwrap();
        let inc = e.increments();
        for w in inc.windows(2) {
            assert!(w[1] <= w[0] + slack, "increments {inc:?}");
        }
        assert!(e.gap <= inc[0] + slack);
    }
}

#[test]
fn same_ray_twice_has_zero_spread() {
    let s = Suite::default();
    let (ms, a) = (&s.three, &s.three_a);
    let ray = hyperbolic_ray(ms, &(a * 10.0), a, 1e-10, 40.0, None, None).unwrap();
    let pts = vec![a * 9.0, a * 11.0 + Vector::from_column_slice(&[0.5, 0.0, 0.0, 0.5, -0.5, 0.0])];
    let c = busemann_constancy_check(ms, &ray.trajectory, &ray.trajectory, &pts, 1e-8).unwrap();
    assert_eq!(c.spread, 0.0);
    assert_eq!(c.raw_spread, 0.0);
}

#[test]
fn rays_with_different_limit_shapes_are_rejected() {
    let s = Suite::default();
    let (ms, a) = (&s.three, &s.three_a);
    let b = a + Vector::from_column_slice(&[0.0, 0.2, 0.0, -0.1, 0.1, 0.0]);
    let r1 = hyperbolic_ray(ms, &(a * 10.0), a, 1e-10, 20.0, None, None).unwrap();
    let r2 = hyperbolic_ray(ms, &(&b * 10.0), &b, 1e-10, 20.0, None, None).unwrap();
    let err = busemann_constancy_check(ms, &r1.trajectory, &r2.trajectory, &[a * 9.0], 1e-8).unwrap_err();
    assert!(matches!(err, Error::LimitShapeMismatch(_)));
}

#[test]
fn gradient_satisfies_eikonal_equation() {
    let s = Suite::default();
    let (ms, a) = (&s.three, &s.three_a);
    let h = s.three_energy();
    for k in [6.0, 12.0] {
        let x = a * k + Vector::from_column_slice(&[0.3, -0.2, 0.0, 0.4, -0.1, 0.0]);
        let g = busemann_gradient(ms, &x, a, h, 1e-10).unwrap();
        assert!(g.eikonal_residual.abs() <= 1e-9, "{}", g.eikonal_residual);
        assert!(g.in_cone);
    }
}

#[test]
fn field_rejects_collision_direction() {
    let s = Suite::default();
    let a = Vector::from_column_slice(&[1.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
    assert!(matches!(BusemannField::new(&s.three, &a, 1.0, vec![10.0, 20.0], 1e-8), Err(Error::Collision { i: 0, j: 1 })));
}
