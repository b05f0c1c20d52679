use hyperbolic_core::asymptotics::{dlimit_shape_v, limit_shape};
use hyperbolic_core::flow::{integrate, PhaseState};
use hyperbolic_core::{MassSystem, Vector};

fn three_body() -> (MassSystem, PhaseState) {
    let ms = MassSystem::new(vec![1.0, 0.8, 1.3], 2).unwrap();
    let x = Vector::from_column_slice(&[-6.0, 0.5, 6.0, 2.5, 0.5, -5.0]);
    let v = Vector::from_column_slice(&[-1.1, 0.1, 0.9, 0.5, 0.2, -0.8]);
    (ms, PhaseState::new(x, v))
}

#[test]
fn limit_shape_is_constant_along_the_flow() {
    let (ms, z) = three_body();
    let tol = 1e-10;
    let a0 = limit_shape(&ms, &z, tol).unwrap().a_hat;
    for s in [1.0, 5.0] {
        let end = integrate(&ms, &z, s, 1e-13).unwrap().last().clone();
        let a1 = limit_shape(&ms, &PhaseState::new(end.x, end.v), tol).unwrap().a_hat;
        assert!(ms.norm(&(&a1 - &a0)) <= 2.0 * tol * ms.norm(&a0).max(1.0), "s = {s}");
    }
}

#[test]
fn energy_law_under_velocity_scaling() {
    let (ms, z) = three_body();
    for k in [1.0, 2.0] {
        let w = PhaseState::new(z.x.clone(), &z.v * k);
        let h = ms.energy(&w.x, &w.v).unwrap();
        let r = limit_shape(&ms, &w, 1e-10).unwrap();
        assert!((ms.norm(&r.a_hat) - (2.0 * h).sqrt()).abs() <= 1e-8);
    }
}

#[test]
fn reported_error_bounds_reference_difference() {
    let (ms, z) = three_body();
    let tol = 1e-7;
    let r = limit_shape(&ms, &z, tol).unwrap();
    let reference = limit_shape(&ms, &z, tol / 100.0).unwrap();
    assert!(ms.norm(&(&r.a_hat - &reference.a_hat)) <= r.error_estimate + reference.error_estimate);
    assert!(r.error_estimate <= tol * ms.norm(&r.a_hat).max(1.0));
}

#[test]
fn derivative_in_velocity_matches_central_differences() {
    let (ms, z) = three_body();
    let dir = Vector::from_column_slice(&[0.3, -0.2, 0.1, 0.4, -0.5, 0.2]);
    let d = dlimit_shape_v(&ms, &z, &dir, 1e-11).unwrap();
    let s = 1e-4;
    let plus = limit_shape(&ms, &PhaseState::new(z.x.clone(), &z.v + &dir * s), 1e-12).unwrap().a_hat;
    let minus = limit_shape(&ms, &PhaseState::new(z.x.clone(), &z.v - &dir * s), 1e-12).unwrap().a_hat;
    let fd = (plus - minus) / (2.0 * s);
    assert!(ms.norm(&(&d - &fd)) <= 1e-4 * ms.norm(&fd));
}
