use hyperbolic_core::action::{action_fixed_time, action_free_time, excess_d};
use hyperbolic_core::kepler::{join, kepler_elements};
use hyperbolic_core::{MassSystem, Vector};

fn kepler_state(ms: &MassSystem) -> (Vector, Vector) {
    let x = join(ms, &[0.2, -0.1], &[3.0, 1.0]);
    let v = join(ms, &[0.1, 0.05], &[0.4, 1.3]);
    (x, v)
}

#[test]
fn fixed_time_matches_kepler_action() {
    let ms = MassSystem::new(vec![0.7, 1.6], 2).unwrap();
    let (x, v) = kepler_state(&ms);
    let el = kepler_elements(&ms, &x, &v).unwrap();
    let tau = 3.0;
    let y = el.propagate(tau).unwrap().x;
    let exact = el.action(tau).unwrap();
    let r = action_fixed_time(&ms, &x, &y, tau, 32, 1e-8).unwrap();
    assert!((r.value - exact).abs() <= 1e-6 * exact, "{} vs {exact}", r.value);
    assert!(r.value >= r.lower - r.tol_abs && r.value <= r.upper + r.tol_abs);
}

#[test]
fn free_time_matches_kepler_action_plus_h_tau() {
    let ms = MassSystem::new(vec![0.7, 1.6], 2).unwrap();
    let (x, v) = kepler_state(&ms);
    let h = ms.energy(&x, &v).unwrap();
    assert!(h > 0.0);
    let el = kepler_elements(&ms, &x, &v).unwrap();
    let tau = 4.0;
    let y = el.propagate(tau).unwrap().x;
    let exact = el.action(tau).unwrap() + h * tau;
    let r = action_free_time(&ms, &x, &y, h, 1e-9).unwrap();
    assert!(r.polished);
    assert!((r.value - exact).abs() <= r.tol_abs, "{} vs {exact}", r.value);
    assert!((r.tau - tau).abs() <= 1e-6 * tau, "tau {} vs {tau}", r.tau);
    assert!(r.within_brackets());
}

#[test]
fn free_time_is_symmetric_and_bracketed_for_three_bodies() {
    let ms = MassSystem::new(vec![1.0, 0.8, 1.3], 2).unwrap();
    let x = Vector::from_column_slice(&[-1.0, 0.0, 1.0, 0.3, 0.2, 1.5]);
    let y = Vector::from_column_slice(&[-4.0, 1.0, 5.0, 2.0, 1.0, -4.0]);
    let f = action_free_time(&ms, &x, &y, 0.9, 1e-8).unwrap();
    let b = action_free_time(&ms, &y, &x, 0.9, 1e-8).unwrap();
    assert!(f.within_brackets() && b.within_brackets());
    assert!((f.value - b.value).abs() <= 2.0 * f.tol_abs.max(b.tol_abs));
}

#[test]
fn triangle_inequality_through_total_collision() {
    let ms = MassSystem::new(vec![1.0, 0.8, 1.3], 2).unwrap();
    let o = Vector::zeros(6);
    let x = Vector::from_column_slice(&[-1.0, 0.0, 1.0, 0.3, 0.2, 1.5]);
    let y = Vector::from_column_slice(&[-4.0, 1.0, 5.0, 2.0, 1.0, -4.0]);
    let e = excess_d(&ms, &o, &x, &y, 0.9, 1e-8).unwrap();
    assert!(e.value >= -3.0 * e.tol_abs, "excess {} tol {}", e.value, e.tol_abs);
}

#[test]
fn both_endpoints_at_collision_rejected() {
    let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
    let o = Vector::zeros(4);
    assert!(action_free_time(&ms, &o, &o, 1.0, 1e-8).is_err());
}
