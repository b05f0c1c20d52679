use hyperbolic_core::asymptotics::limit_shape;
use hyperbolic_core::flow::PhaseState;
use hyperbolic_core::kepler::kepler_branches;
use hyperbolic_core::scattering::{hyperbolic_ray, solve_asymptotic_velocity, uniqueness_probe};
use hyperbolic_core::verify::Suite;
use hyperbolic_core::{Error, MassSystem, Vector};

#[test]
fn on_axis_start_gives_the_rectilinear_branch() {
    let s = Suite::default();
    let (ms, a) = (&s.kepler, &s.kepler_a);
    let x0 = a * 6.0;
    let r = solve_asymptotic_velocity(ms, &x0, a, 1e-10).unwrap();
    let branches = kepler_branches(ms, &x0, a).unwrap();
    let confined: Vec<_> = branches.iter().filter(|b| b.confined).collect();
    assert_eq!(confined.len(), 1);
    assert!(ms.norm(&(&r.v_star - &confined[0].v)) <= 1e-8);
    let back = limit_shape(ms, &PhaseState::new(x0, r.v_star), 1e-10).unwrap();
    assert!(ms.norm(&(&back.a_hat - a)) <= 1e-8);
}

#[test]
fn off_axis_kepler_has_two_branches_one_confined() {
    let s = Suite::default();
    let x0 = s.kepler_point(37f64.to_radians()).unwrap();
    let p = uniqueness_probe(&s.kepler, &x0, &s.kepler_a, 1e-10, 48, 7).unwrap();
    assert_eq!(p.distinct(), 2);
    assert_eq!(p.confined(), 1);
    let exact = kepler_branches(&s.kepler, &x0, &s.kepler_a).unwrap();
    for c in &p.clusters {
        let d = exact.iter().map(|b| s.kepler.norm(&(&b.v - &c.v_star))).fold(f64::INFINITY, f64::min);
        assert!(d <= 1e-8, "cluster {} from every closed-form branch", d);
    }
}

#[test]
fn anti_aligned_kepler_has_two_unconfined_branches() {
    let s = Suite::default();
    let x0 = s.kepler_point(std::f64::consts::PI).unwrap();
    let p = uniqueness_probe(&s.kepler, &x0, &s.kepler_a, 1e-10, 48, 11).unwrap();
    assert_eq!(p.distinct(), 2);
    assert_eq!(p.confined(), 0);
}

#[test]
fn deep_cone_start_has_one_cluster() {
    let s = Suite::default();
    let (ms, a) = (&s.three, &s.three_a);
    let x0 = a * 20.0;
    let tol = 1e-10;
    let p = uniqueness_probe(ms, &x0, a, tol, 16, 3).unwrap();
    let near: Vec<_> = p
        .starts
        .iter()
        .zip(&p.outcomes)
        .filter(|(st, _)| ms.norm(&(*st - a)) <= 0.3 * ms.norm(a))
        .collect();
    assert!(near.len() >= 4);
    let sols: Vec<&Vector> = near.iter().map(|(_, o)| &o.as_ref().expect("start inside the ball failed").v_star).collect();
    for p in &sols {
        assert!(ms.norm(&(*p - sols[0])) <= 10.0 * tol);
    }
}

#[test]
fn ray_size_increases_and_round_trips() {
    let s = Suite::default();
    let (ms, a) = (&s.three, &s.three_a);
    let ray = hyperbolic_ray(ms, &(a * 8.0), a, 1e-10, 200.0, None, None).unwrap();
    assert!(ray.monotone);
    let back = limit_shape(ms, &PhaseState::new(ray.shooting.x0.clone(), ray.shooting.v_star.clone()), 1e-10).unwrap();
    assert!(ms.norm(&(&back.a_hat - a)) <= 2e-10 * ms.norm(a).max(1.0));
}

#[test]
fn collision_in_target_is_rejected_with_the_pair() {
    let ms = MassSystem::new(vec![1.0, 2.0, 0.5], 2).unwrap();
    let a = Vector::from_column_slice(&[1.0, 0.0, -1.0, 0.5, -1.0, 0.5]);
    let x0 = &a * 3.0 + Vector::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 0.1, 0.0]);
    assert_eq!(solve_asymptotic_velocity(&ms, &x0, &a, 1e-8).unwrap_err(), Error::Collision { i: 1, j: 2 });
}
