//! Newton shooting for the asymptotic boundary-value problem `a(x0, v) = a`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{limit_shape_with, LimitShapeOptions, LimitShapeResult};
use crate::cone::{random_direction, ConeSpec};
use crate::error::{Error, Result};
use crate::flow::{detect_cone_exit, integrate_with, FlowOptions, PhaseState, Trajectory};
use crate::system::{MassSystem, Vector};

#[derive(Debug, Clone)]
pub struct ShootingOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Radius of the uniqueness ball around `a`; leaving it is an error when set.
    pub delta: Option<f64>,
    pub initial: Option<Vector>,
}

impl ShootingOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, max_iter: 30, delta: None, initial: None }
    }

    fn limit_tol(&self) -> f64 {
        (self.tol * 1e-2).max(1e-12)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShootingResult {
    pub x0: Vector,
    pub a: Vector,
    pub v_star: Vector,
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    /// `energy(x0, v_star) - |a|^2 / 2`.
    pub energy_error: f64,
    /// `cos angle(x0, a) > alpha0(a)`: some cone around `a` contains `x0`.
    pub x0_in_cone: bool,
    pub warnings: Vec<String>,
    /// Filled once the ray has been integrated.
    pub confinement: Option<Confinement>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Confinement {
    pub t_end: f64,
    pub cone_exit: Option<f64>,
    pub monotone: bool,
    pub growth_margin: Option<f64>,
    pub max_velocity_deviation: f64,
}

impl ShootingResult {
    /// Smallest `res_{n+1} / res_n^2` over iterations that started below `1e-3`.
    pub fn quadratic_constant(&self) -> Option<f64> {
        self.history
            .windows(2)
            .filter(|w| w[0] < 1e-3 && w[0] > 0.0)
            .map(|w| w[1] / (w[0] * w[0]))
            .min_by(f64::total_cmp)
    }
}

fn validate(ms: &MassSystem, x0: &Vector, a: &Vector) -> Result<()> {
    ms.check(x0)?;
    ms.check(a)?;
    if let Some((i, j)) = ms.collision_pair(a) {
        return Err(Error::Collision { i, j });
    }
    if let Some((i, j)) = ms.collision_pair(x0) {
        return Err(Error::Collision { i, j });
    }
    Ok(())
}

fn evaluate(ms: &MassSystem, x0: &Vector, v: &Vector, tol: f64, budget: Option<usize>) -> Result<LimitShapeResult> {
    let id = DMatrix::identity(ms.len(), ms.len());
    let z = PhaseState::new(x0.clone(), v.clone());
    let mut opts = LimitShapeOptions::new(tol);
    if let Some(b) = budget {
        opts.max_steps = b;
    }
    limit_shape_with(ms, &z, Some(&id), opts)
}

/// Velocities at `x0` sharing the momentum and the energy `|a|^2 / 2` of the
/// target; every solution lies on this set.
struct Shell {
    cm: Vec<f64>,
    speed: f64,
}

impl Shell {
    fn new(ms: &MassSystem, x0: &Vector, a: &Vector) -> Self {
        let cm = ms.centre_of_mass(a);
        let w = Self::internal(ms, a, &cm);
        Self { speed: (ms.inner(&w, &w) + 2.0 * ms.potential(x0)).sqrt(), cm }
    }

    fn internal(ms: &MassSystem, v: &Vector, cm: &[f64]) -> Vector {
        let d = ms.dim();
        Vector::from_fn(v.len(), |k, _| v[k] - cm[k % d])
    }

    fn project(&self, ms: &MassSystem, v: &Vector) -> Vector {
        let d = ms.dim();
        let mut w = Self::internal(ms, v, &ms.centre_of_mass(v));
        let n = ms.norm(&w);
        if n > 0.0 {
            w *= self.speed / n;
        }
        Vector::from_fn(v.len(), |k, _| w[k] + self.cm[k % d])
    }
}

/// Newton iteration `v <- v - (da/dv)^{-1} (a(x0, v) - a)` from `v = a`, with
/// up to 8 step halvings when the residual does not decrease.
pub fn solve_asymptotic_velocity_with(ms: &MassSystem, x0: &Vector, a: &Vector, opts: &ShootingOptions) -> Result<ShootingResult> {
    validate(ms, x0, a)?;
    let mut warnings = Vec::new();
    let a0 = ms.alpha0(a)?;
    let x0_in_cone = ms.cosine(x0, a) > a0;
    if !x0_in_cone {
        warnings.push(format!(
            "x0 is outside every admissible cone around a (cos = {:.4}, alpha0 = {a0:.4})",
            ms.cosine(x0, a)
        ));
    }
    let ltol = opts.limit_tol();
    let shell = Shell::new(ms, x0, a);
    let mut v = shell.project(ms, opts.initial.as_ref().unwrap_or(a));
    let mut cur = evaluate(ms, x0, &v, ltol, None)?;
    let mut history = vec![ms.norm(&(&cur.a_hat - a))];
    let mut iterations = 0;
    loop {
        let residual = *history.last().unwrap();
        if residual <= opts.tol {
            let energy_error = ms.energy(x0, &v)? - 0.5 * ms.inner(a, a);
            return Ok(ShootingResult {
                x0: x0.clone(),
                a: a.clone(),
                v_star: v,
                residual,
                iterations,
                history,
                energy_error,
                x0_in_cone,
                warnings,
                confinement: None,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::Stagnation { residual });
        }
        iterations += 1;
        let jac = cur.jacobian.take().unwrap();
        let rhs = -(&cur.a_hat - a);
        let lu = jac.lu();
        let dv = lu.solve(&rhs).ok_or(Error::SingularJacobian)?;
        if !dv.iter().all(|c| c.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        // Trials far costlier than the current point are near-collision or
        // near-parabolic and are rejected as if the residual had grown.
        let budget = Some((20 * cur.steps).max(20_000));
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let trial = shell.project(ms, &(&v + &dv * step));
            if let Ok(res) = evaluate(ms, x0, &trial, ltol, budget) {
                let r = ms.norm(&(&res.a_hat - a));
                if r < residual {
                    accepted = Some((trial, res, r));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, res, r)) = accepted else {
            return Err(Error::Stagnation { residual });
        };
        if let Some(delta) = opts.delta {
            let dist = ms.norm(&(&trial - a));
            if dist > delta {
                return Err(Error::LeftBall { distance: dist, delta });
            }
        }
        v = trial;
        cur = res;
        history.push(r);
    }
}

pub fn solve_asymptotic_velocity(ms: &MassSystem, x0: &Vector, a: &Vector, tol: f64) -> Result<ShootingResult> {
    solve_asymptotic_velocity_with(ms, x0, a, &ShootingOptions::new(tol))
}

#[derive(Debug, Clone)]
pub struct RayReport {
    pub shooting: ShootingResult,
    pub trajectory: Trajectory,
    /// First exit time from the supplied cone.
    pub cone_exit: Option<f64>,
    /// `|x(t)|` strictly increasing over the samples.
    pub monotone: bool,
    /// `min_t |x(t)| - |x0| - lambda t` when a growth rate is supplied.
    pub growth_margin: Option<f64>,
    /// `sup_t |x'(t) - a|`.
    pub max_velocity_deviation: f64,
}

/// Shoots the velocity with limit shape `a` and integrates the resulting ray
/// to `t_end`, checking confinement in `cone` and growth at rate `lambda`.
pub fn hyperbolic_ray(
    ms: &MassSystem,
    x0: &Vector,
    a: &Vector,
    tol: f64,
    t_end: f64,
    cone: Option<&ConeSpec>,
    lambda: Option<f64>,
) -> Result<RayReport> {
    let shooting = solve_asymptotic_velocity(ms, x0, a, tol)?;
    ray_from(ms, shooting, t_end, cone, lambda)
}

pub fn ray_from(
    ms: &MassSystem,
    mut shooting: ShootingResult,
    t_end: f64,
    cone: Option<&ConeSpec>,
    lambda: Option<f64>,
) -> Result<RayReport> {
    let z = PhaseState::new(shooting.x0.clone(), shooting.v_star.clone());
    let opts = FlowOptions::new((shooting.residual * 1e-2).clamp(1e-13, 1e-10)).max_step(t_end / 2000.0);
    let trajectory = integrate_with(ms, &z, None, t_end, opts)?;
    let samples = trajectory.samples();
    let norms: Vec<f64> = samples.iter().map(|s| ms.norm(&s.x)).collect();
    let monotone = norms.windows(2).all(|w| w[1] > w[0]);
    let n0 = norms[0];
    let growth_margin = lambda.map(|l| {
        samples.iter().zip(&norms).map(|(s, n)| n - n0 - l * s.t).fold(f64::INFINITY, f64::min)
    });
    let max_velocity_deviation = samples
        .iter()
        .map(|s| ms.norm(&(&s.v - &shooting.a)))
        .fold(0.0, f64::max);
    let cone_exit = cone.and_then(|c| detect_cone_exit(ms, &trajectory, c));
    shooting.confinement = Some(Confinement { t_end, cone_exit, monotone, growth_margin, max_velocity_deviation });
    Ok(RayReport { shooting, trajectory, cone_exit, monotone, growth_margin, max_velocity_deviation })
}

#[derive(Debug, Clone, Serialize)]
pub struct Cluster {
    pub v_star: Vector,
    pub members: usize,
    /// `min_t cos angle(x(t), a)` along the forward ray.
    pub min_cosine: f64,
    pub confined: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub starts: Vec<Vector>,
    pub outcomes: Vec<std::result::Result<ShootingResult, String>>,
    pub clusters: Vec<Cluster>,
    pub cluster_tol: f64,
}

impl ProbeReport {
    pub fn distinct(&self) -> usize {
        self.clusters.len()
    }

    pub fn confined(&self) -> usize {
        self.clusters.iter().filter(|c| c.confined).count()
    }

    /// Largest distance between two converged solutions of the same cluster.
    pub fn max_cluster_diameter(&self) -> f64 {
        let sols: Vec<&Vector> = self.outcomes.iter().filter_map(|o| o.as_ref().ok()).map(|r| &r.v_star).collect();
        let mut best: f64 = 0.0;
        for c in &self.clusters {
            let mem: Vec<&&Vector> = sols.iter().filter(|v| (**v - &c.v_star).norm() <= 2.0 * self.cluster_tol).collect();
            for p in &mem {
                for q in &mem {
                    best = best.max((**p - **q).norm());
                }
            }
        }
        best
    }
}

/// Smallest cosine between `x(t)` and `a` along the forward motion from
/// `(x0, v)`, followed until the direction has settled.
pub fn min_cosine_along_ray(ms: &MassSystem, x0: &Vector, v: &Vector, a: &Vector) -> Result<f64> {
    let h = ms.energy(x0, v)?;
    let scale = ms.norm(x0) / (2.0 * h).sqrt() + 1.0;
    let opts = FlowOptions::new(1e-10).max_step(scale / 20.0);
    let traj = integrate_with(ms, &PhaseState::new(x0.clone(), v.clone()), None, 200.0 * scale, opts)?;
    Ok(traj.samples().iter().map(|s| ms.cosine(&s.x, a)).fold(f64::INFINITY, f64::min))
}

/// Runs the shooting solver from `a` and from `n_starts - 1` random
/// perturbations of it, and clusters
/// the converged velocities.
pub fn uniqueness_probe(ms: &MassSystem, x0: &Vector, a: &Vector, tol: f64, n_starts: usize, seed: u64) -> Result<ProbeReport> {
    validate(ms, x0, a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = ms.norm(a);
    let mags = [0.05, 0.25, 1.0, 4.0, 16.0];
    let mut starts = vec![a.clone()];
    for k in 1..n_starts {
        let dir = random_direction(ms, &mut rng);
        starts.push(a + dir * (mags[k % mags.len()] * na));
    }
    let outcomes: Vec<std::result::Result<ShootingResult, String>> = starts
        .par_iter()
        .map(|s| {
            let mut o = ShootingOptions::new(tol);
            o.initial = Some(s.clone());
            solve_asymptotic_velocity_with(ms, x0, a, &o).map_err(|e| e.to_string())
        })
        .collect();
    let cluster_tol = 100.0 * tol;
    let mut reps: Vec<(Vector, usize)> = Vec::new();
    for r in outcomes.iter().flatten() {
        match reps.iter_mut().find(|(c, _)| ms.norm(&(c.clone() - &r.v_star)) <= cluster_tol) {
            Some(c) => c.1 += 1,
            None => reps.push((r.v_star.clone(), 1)),
        }
    }
    let a0 = ms.alpha0(a)?.max(0.0);
    let clusters = reps
        .into_par_iter()
        .map(|(v, members)| {
            let min_cosine = min_cosine_along_ray(ms, x0, &v, a)?;
            Ok(Cluster { v_star: v, members, min_cosine, confined: min_cosine > a0 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport { starts, outcomes, clusters, cluster_tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_collision_in_target() {
        let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let a = Vector::from_column_slice(&[1.0, 0.0, 1.0, 0.0]);
        let x0 = Vector::from_column_slice(&[0.0, 0.0, 5.0, 0.0]);
        assert_eq!(solve_asymptotic_velocity(&ms, &x0, &a, 1e-8).unwrap_err(), Error::Collision { i: 0, j: 1 });
    }

    #[test]
    fn far_start_converges_quadratically() {
        let ms = MassSystem::new(vec![1.0, 0.5, 2.0], 2).unwrap();
        let a = Vector::from_column_slice(&[-1.0, 0.2, 1.0, 0.6, 0.1, -0.5]);
        let x0 = &a * 10.0;
        let r = solve_asymptotic_velocity(&ms, &x0, &a, 1e-10).unwrap();
        assert!(r.residual <= 1e-10);
        assert!(r.energy_error.abs() <= 1e-9);
        assert!(r.history.len() >= 2);
        if let Some(c) = r.quadratic_constant() {
            assert!(c < 1e3, "{:?}", r.history);
        }
    }
}
