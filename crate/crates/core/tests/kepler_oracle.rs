use hyperbolic_core::asymptotics::limit_shape;
use hyperbolic_core::flow::{integrate, PhaseState};
use hyperbolic_core::kepler::{join, kepler_branches, kepler_elements, kepler_propagate};
use hyperbolic_core::scattering::{solve_asymptotic_velocity, solve_asymptotic_velocity_with, ShootingOptions};
use hyperbolic_core::{MassSystem, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(ms: &MassSystem, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
    let d = ms.dim();
    let dir = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let dist = 2.0 + 4.0 * rng.random::<f64>();
    let r: Vec<f64> = dir(rng).iter().map(|x| x * dist).collect();
    let speed = (2.0 * ms.total_mass() / dist * (1.3 + rng.random::<f64>())).sqrt();
    let w: Vec<f64> = dir(rng).iter().map(|x| x * speed).collect();
    let com: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let cv: Vec<f64> = (0..d).map(|_| 0.3 * rng.random::<f64>()).collect();
    (join(ms, &com, &r), join(ms, &cv, &w))
}

#[test]
fn closed_form_matches_integration_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in [2, 3] {
        let ms = MassSystem::new(vec![0.9, 2.1], d).unwrap();
        for _ in 0..5 {
            let (x, v) = random_state(&ms, &mut rng);
            let el = kepler_elements(&ms, &x, &v).unwrap();
            let tr = integrate(&ms, &PhaseState::new(x.clone(), v.clone()), 10.0, 1e-12).unwrap();
            let exact = kepler_propagate(&el, 10.0).unwrap();
            let last = tr.last();
            assert!(ms.norm(&(&last.x - &exact.x)) < 1e-8, "forward position");
            assert!(ms.norm(&(&last.v - &exact.v)) < 1e-8, "forward velocity");
            // back from the propagated state
            let el2 = kepler_elements(&ms, &exact.x, &exact.v).unwrap();
            let back = kepler_propagate(&el2, 0.0).unwrap();
            assert!(ms.norm(&(&back.x - &exact.x)) < 1e-12);
            let tr2 = integrate(&ms, &PhaseState::new(exact.x.clone(), -&exact.v), 10.0, 1e-12).unwrap();
            assert!(ms.norm(&(&tr2.last().x - &x)) < 1e-8, "backward position");
        }
    }
}

#[test]
fn oracle_reproduced_over_twenty_time_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
    let (x, v) = random_state(&ms, &mut rng);
    let el = kepler_elements(&ms, &x, &v).unwrap();
    let tr = integrate(&ms, &PhaseState::new(x, v), 20.0, 1e-12).unwrap();
    for s in tr.samples() {
        let exact = kepler_propagate(&el, s.t).unwrap();
        assert!(ms.norm(&(&s.x - &exact.x)) < 1e-8, "t = {}", s.t);
    }
}

#[test]
fn on_axis_branch_has_limit_shape_a() {
    let ms = MassSystem::new(vec![0.7, 1.6], 2).unwrap();
    let a = Vector::from_column_slice(&[0.1, -0.4, 0.1, 0.6]);
    let x0 = join(&ms, &[0.0, 0.0], &[0.0, 6.0]);
    let br = kepler_branches(&ms, &x0, &a).unwrap();
    let conf: Vec<_> = br.iter().filter(|b| b.confined).collect();
    assert_eq!(conf.len(), 1);
    let r = limit_shape(&ms, &PhaseState::new(x0, conf[0].v.clone()), 1e-11).unwrap();
    assert!(ms.norm(&(&r.a_hat - &a)) < 1e-8);
}

#[test]
fn branches_obey_energy_law_and_are_shooting_fixed_points() {
    let ms = MassSystem::new(vec![0.7, 1.6], 2).unwrap();
    let a = Vector::from_column_slice(&[0.1, -0.4, 0.1, 0.6]);
    let x0 = join(&ms, &[0.2, 0.1], &[3.0, 4.0]);
    let br = kepler_branches(&ms, &x0, &a).unwrap();
    assert_eq!(br.len(), 2);
    assert!(ms.norm(&(&br[0].v - &br[1].v)) > 1e-6);
    for b in &br {
        let e = ms.energy(&x0, &b.v).unwrap();
        assert!((e - 0.5 * ms.inner(&a, &a)).abs() < 1e-12);
        let mut o = ShootingOptions::new(1e-10);
        o.initial = Some(b.v.clone());
        let r = solve_asymptotic_velocity_with(&ms, &x0, &a, &o).unwrap();
        assert!(r.iterations <= 1, "{} iterations", r.iterations);
        assert!(r.residual <= 1e-10);
    }
}

#[test]
fn confined_branch_recovered_from_default_seed() {
    let ms = MassSystem::new(vec![0.7, 1.6], 2).unwrap();
    let a = Vector::from_column_slice(&[0.1, -0.4, 0.1, 0.6]);
    let x0 = join(&ms, &[0.0, 0.0], &[3.0, 4.0]);
    let conf = kepler_branches(&ms, &x0, &a).unwrap().into_iter().find(|b| b.confined).unwrap();
    let r = solve_asymptotic_velocity(&ms, &x0, &a, 1e-10).unwrap();
    assert!(ms.norm(&(&r.v_star - &conf.v)) < 1e-8);
}
