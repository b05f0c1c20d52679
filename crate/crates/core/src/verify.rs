//! The acceptance suite: ten numerical checks against the Kepler oracle,
//! the cone lemmas, the action brackets and the Busemann identities.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::action::{action_free_time_with, excess_d, ActionOptions};
use crate::asymptotics::{chazy_residual, dlimit_shape_v, fit_log_drift, jacobi_majorant, limit_shape, limit_shape_jacobian, mass_operator_norm};
use crate::busemann::{busemann_constancy_check, busemann_from_ray, busemann_gradient, default_schedule, one_sided_derivatives, BusemannField};
use crate::cone::{cone_constants, random_direction, sample_ball, sup_hessian_bound_on_cone, ConeConstants, ConeSpec};
use crate::error::{Error, Result};
use crate::flow::{integrate_with, FlowOptions, PhaseState, Propagator};
use crate::kepler::{join, kepler_branches, kepler_elements};
use crate::scattering::{hyperbolic_ray, solve_asymptotic_velocity, uniqueness_probe};
use crate::system::{MassSystem, Vector};

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub summary: String,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
}

impl Criterion {
    pub fn line(&self) -> String {
        format!("criterion {:>2} {}: {} ({:.1} s) {}", self.id, if self.pass { "PASS" } else { "FAIL" }, self.title, self.seconds, self.summary)
    }
}

/// Systems and parameters shared by the criteria.
#[derive(Debug, Clone)]
pub struct Suite {
    pub kepler: MassSystem,
    pub kepler_a: Vector,
    pub three: MassSystem,
    pub three_a: Vector,
    pub seed: u64,
    /// Multiplies every solver tolerance.
    pub tol_scale: f64,
    pub probe_starts: usize,
}

impl Default for Suite {
    fn default() -> Self {
        Self {
            kepler: MassSystem::new(vec![0.7, 1.6], 2).unwrap(),
            kepler_a: Vector::from_column_slice(&[0.1, -0.4, 0.1, 0.6]),
            three: MassSystem::new(vec![1.0, 0.8, 1.3], 2).unwrap(),
            three_a: Vector::from_column_slice(&[-1.0, 0.1, 1.0, 0.4, 0.1, -0.8]),
            seed: 20240917,
            tol_scale: 1.0,
            probe_starts: 128,
        }
    }
}

impl Suite {
    fn rng(&self, id: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn tol(&self, t: f64) -> f64 {
        t * self.tol_scale
    }

    /// `h` with `|a| = sqrt(2h)`.
    pub fn three_energy(&self) -> f64 {
        0.5 * self.three.inner(&self.three_a, &self.three_a)
    }

    pub fn cone_alpha(&self) -> Result<f64> {
        let a0 = self.three.alpha0(&self.three_a)?;
        Ok(a0 + 0.75 * (1.0 - a0))
    }

    pub fn cone(&self) -> Result<(ConeConstants, ConeSpec)> {
        let alpha = self.cone_alpha()?;
        let c = cone_constants(&self.three, &self.three_a, alpha, 1.0)?;
        let spec = ConeSpec::new(&self.three, self.three_a.clone(), alpha, c.r0)?;
        Ok((c, spec))
    }

    /// `(x, v)` with `x` in the truncated cone, `|x| <= 1.5 r0`, and `v` in `B(a, delta)`.
    fn confined_state(&self, rng: &mut ChaCha8Rng, c: &ConeConstants, spec: &ConeSpec) -> (Vector, Vector) {
        let x = spec.sample(&self.three, rng, c.r0, 1.5 * c.r0);
        let v = sample_ball(&self.three, rng, &self.three_a, c.delta);
        (x, v)
    }

    /// Unit vectors of the relative plane: along the relative limit shape and
    /// a perpendicular one.
    fn kepler_frame(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.kepler.dim();
        let a = &self.kepler_a;
        let rel: Vec<f64> = (0..d).map(|c| a[d + c] - a[c]).collect();
        let nr = rel.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nr == 0.0 {
            return Err(Error::Collision { i: 0, j: 1 });
        }
        let e: Vec<f64> = rel.iter().map(|x| x / nr).collect();
        let k = (0..d).min_by(|&p, &q| e[p].abs().total_cmp(&e[q].abs())).unwrap();
        let mut f = vec![0.0; d];
        f[k] = 1.0;
        let p: f64 = e[k];
        f.iter_mut().zip(&e).for_each(|(x, y)| *x -= p * y);
        let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= nf);
        Ok((e, f))
    }

    /// Kepler configuration at relative distance 5 whose relative position
    /// makes the angle `theta` with the relative limit shape.
    pub fn kepler_point(&self, theta: f64) -> Result<Vector> {
        let (e, f) = self.kepler_frame()?;
        let r: Vec<f64> = e.iter().zip(&f).map(|(a, b)| 5.0 * (theta.cos() * a + theta.sin() * b)).collect();
        Ok(join(&self.kepler, &vec![0.0; self.kepler.dim()], &r))
    }
}

struct Run {
    t0: Instant,
    metrics: BTreeMap<String, f64>,
}

impl Run {
    fn new() -> Self {
        Self { t0: Instant::now(), metrics: BTreeMap::new() }
    }

    fn set(&mut self, k: &str, v: f64) {
        self.metrics.insert(k.to_string(), v);
    }

    fn finish(self, id: usize, title: &'static str, outcome: Result<(bool, String)>) -> Criterion {
        let (pass, summary) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        Criterion { id, title, pass, summary, metrics: self.metrics, seconds: self.t0.elapsed().as_secs_f64() }
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Random hyperbolic Kepler state: relative distance in `[3, 8]`, relative
/// energy between 0.2 and 3 times the local escape energy, small centre of
/// mass motion.
fn random_kepler_state(ms: &MassSystem, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
    let d = ms.dim();
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.1 && n <= 1.0 {
                return v.iter().map(|x| x / n).collect();
            }
        }
    };
    let dist = 3.0 + 5.0 * rng.random::<f64>();
    let r: Vec<f64> = unit(rng).iter().map(|x| x * dist).collect();
    let speed = (2.0 * ms.total_mass() / dist * (1.2 + 3.0 * rng.random::<f64>())).sqrt();
    let w: Vec<f64> = unit(rng).iter().map(|x| x * speed).collect();
    let com: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    let cv: Vec<f64> = (0..d).map(|_| 0.5 * (rng.random::<f64>() - 0.5)).collect();
    (join(ms, &com, &r), join(ms, &cv, &w))
}

/// Kepler states whose velocity is the cone-confined branch for their own
/// limit shape; rejected draws are counted.
/// `(x, v, a)` per accepted state.
type KeplerDraw = (Vector, Vector, Vector);

fn confined_kepler_states(ms: &MassSystem, rng: &mut ChaCha8Rng, count: usize) -> Result<(Vec<KeplerDraw>, usize)> {
    let mut out = Vec::new();
    let mut rejected = 0;
    while out.len() < count {
        if rejected > 50 * count {
            return Err(Error::InvalidArgument("too few confined Kepler states".into()));
        }
        let (x, v) = random_kepler_state(ms, rng);
        let a = kepler_elements(ms, &x, &v)?.limit_shape();
        let branches = kepler_branches(ms, &x, &a)?;
        let own = branches.iter().min_by(|p, q| ms.norm(&(&p.v - &v)).total_cmp(&ms.norm(&(&q.v - &v))));
        match own {
            Some(b) if b.confined && ms.norm(&(&b.v - &v)) <= 1e-9 * ms.norm(&v) => out.push((x, v, a)),
            _ => rejected += 1,
        }
    }
    Ok((out, rejected))
}

pub fn criterion_1(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.kepler;
        let mut rng = s.rng(1);
        let (states, rejected) = confined_kepler_states(ms, &mut rng, 20)?;
        let tol = s.tol(1e-10);
        let errs = states
            .par_iter()
            .map(|(x, v, a)| {
                let ls = limit_shape(ms, &PhaseState::new(x.clone(), v.clone()), tol)?;
                let sh = solve_asymptotic_velocity(ms, x, a, tol)?;
                Ok((ms.norm(&(&ls.a_hat - a)), ms.norm(&(&sh.v_star - v))))
            })
            .collect::<Result<Vec<_>>>()?;
        let e_shape = max_of(errs.iter().map(|e| e.0));
        let e_vel = max_of(errs.iter().map(|e| e.1));
        let secs = run.t0.elapsed().as_secs_f64();
        run.set("max_limit_shape_error", e_shape);
        run.set("max_velocity_error", e_vel);
        run.set("rejected_draws", rejected as f64);
        Ok((
            e_shape <= 1e-8 && e_vel <= 1e-8 && secs < 30.0,
            format!("20 states: |a - a_kepler| <= {e_shape:.2e}, |v* - v| <= {e_vel:.2e} (bound 1e-8), {} the 30 s budget", if secs < 30.0 { "within" } else { "over" }),
        ))
    })();
    run.finish(1, "Kepler scattering round trip", outcome)
}

pub fn criterion_2(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let mut rng = s.rng(2);
        let tol = s.tol(1e-10);
        let mut states: Vec<(&MassSystem, Vector, Vector)> = Vec::new();
        for _ in 0..20 {
            let (x, v) = random_kepler_state(&s.kepler, &mut rng);
            states.push((&s.kepler, x, v));
        }
        let (c, spec) = s.cone()?;
        for _ in 0..10 {
            let (x, v) = s.confined_state(&mut rng, &c, &spec);
            states.push((&s.three, x, v));
        }
        let errs = states
            .par_iter()
            .map(|(ms, x, v)| {
                let r = limit_shape(ms, &PhaseState::new(x.clone(), v.clone()), tol)?;
                let e = ms.energy(x, v)?;
                Ok((ms.norm(&r.a_hat) - (2.0 * e).sqrt()).abs())
            })
            .collect::<Result<Vec<_>>>()?;
        let worst = max_of(errs);
        run.set("max_energy_law_error", worst);
        Ok((worst <= 1e-8, format!("30 runs (20 Kepler, 10 three-body): ||a| - sqrt(2h)| <= {worst:.2e} (bound 1e-8)")))
    })();
    run.finish(2, "energy law of limit shapes", outcome)
}

pub fn criterion_3(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let mut rng = s.rng(3);
        let (c, spec) = s.cone()?;
        let tol = s.tol(1e-11);
        let cases: Vec<(Vector, Vector, Vector)> = (0..10)
            .map(|_| {
                let (x, v) = s.confined_state(&mut rng, &c, &spec);
                (x, v, random_direction(ms, &mut rng))
            })
            .collect();
        let rel = cases
            .par_iter()
            .map(|(x, v, d)| {
                let z = PhaseState::new(x.clone(), v.clone());
                let exact = dlimit_shape_v(ms, &z, d, tol)?;
                let eps = 1e-4 * ms.norm(v);
                let plus = limit_shape(ms, &PhaseState::new(x.clone(), v + d * eps), tol)?.a_hat;
                let minus = limit_shape(ms, &PhaseState::new(x.clone(), v - d * eps), tol)?.a_hat;
                let fd = (plus - minus) / (2.0 * eps);
                Ok(ms.norm(&(&fd - &exact)) / ms.norm(&exact))
            })
            .collect::<Result<Vec<_>>>()?;
        let worst = max_of(rel);
        // distance from the identity along the axis
        let a = &s.three_a;
        let na2 = ms.inner(a, a);
        let base = (4.0 * ms.potential(a) / na2).max(2.0);
        let dev = [1.0, 2.0, 4.0, 8.0]
            .par_iter()
            .map(|k| {
                let r = limit_shape_jacobian(ms, &PhaseState::new(a * (base * k), a.clone()), tol)?;
                let j = r.jacobian.ok_or_else(|| Error::InvalidArgument("jacobian missing".into()))?;
                Ok(mass_operator_norm(ms, &(j - DMatrix::identity(a.len(), a.len()))))
            })
            .collect::<Result<Vec<_>>>()?;
        let monotone = dev.windows(2).all(|w| w[1] < w[0]);
        run.set("max_fd_relative_error", worst);
        for (k, d) in dev.iter().enumerate() {
            run.set(&format!("jacobian_minus_identity_x{}", 1 << k), *d);
        }
        Ok((
            worst <= 1e-4 && monotone,
            format!(
                "FD relative error <= {worst:.2e} (bound 1e-4); |da/dv - Id| at x1,x2,x4,x8 = {:.3e}, {:.3e}, {:.3e}, {:.3e} ({})",
                dev[0],
                dev[1],
                dev[2],
                dev[3],
                if monotone { "decreasing" } else { "not decreasing" }
            ),
        ))
    })();
    run.finish(3, "Jacobian fidelity", outcome)
}

pub fn criterion_4(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let mut rng = s.rng(4);
        let (c, spec) = s.cone()?;
        let states: Vec<(Vector, Vector)> = (0..50).map(|_| s.confined_state(&mut rng, &c, &spec)).collect();
        let tol = s.tol(1e-10);
        let viol = states
            .par_iter()
            .map(|(x, v)| {
                let tr = integrate_with(ms, &PhaseState::new(x.clone(), v.clone()), None, 50.0, FlowOptions::new(tol).max_step(0.5))?;
                let n0 = ms.norm(x);
                let mut bad = (0usize, 0usize);
                for smp in tr.samples() {
                    if !spec.contains(ms, &smp.x) {
                        bad.0 += 1;
                    }
                    if ms.norm(&smp.x) < n0 + c.lambda * smp.t - 1e-12 * n0 {
                        bad.1 += 1;
                    }
                }
                Ok((bad, tr.samples().len()))
            })
            .collect::<Result<Vec<_>>>()?;
        let cone_viol: usize = viol.iter().map(|b| b.0 .0).sum();
        let growth_viol: usize = viol.iter().map(|b| b.0 .1).sum();
        let samples: usize = viol.iter().map(|b| b.1).sum();
        run.set("alpha", c.alpha);
        run.set("delta", c.delta);
        run.set("lambda", c.lambda);
        run.set("mu", c.mu);
        run.set("r0", c.r0);
        run.set("membership_violations", cone_viol as f64);
        run.set("growth_violations", growth_viol as f64);
        run.set("samples", samples as f64);
        Ok((
            cone_viol == 0 && growth_viol == 0,
            format!(
                "50 motions to t = 50 (alpha {:.4}, delta {:.4}, lambda {:.4}, r0 {:.2}): {cone_viol} membership and {growth_viol} growth violations over {samples} samples",
                c.alpha, c.delta, c.lambda, c.r0
            ),
        ))
    })();
    run.finish(4, "cone confinement and growth", outcome)
}

pub fn criterion_5(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let mut rng = s.rng(5);
        let (c, spec) = s.cone()?;
        let kh = sup_hessian_bound_on_cone(ms, &s.three_a, c.alpha)?;
        let n = ms.len();
        let states: Vec<(Vector, Vector)> = (0..10).map(|_| s.confined_state(&mut rng, &c, &spec)).collect();
        let tol = s.tol(1e-11);
        let res = states
            .par_iter()
            .map(|(x, v)| {
                // |x(t)| >= |x0| + lambda t >= g (1 + t) and |HU| <= kh / |x|^3 on the cone
                let g = ms.norm(x).min(c.lambda);
                let k = kh / g.powi(3);
                // horizon: doubled until y/(t+1) settles
                let mut t_end = 400.0;
                let mut maj = jacobi_majorant(k, 1.0, 0.0, 1.0, t_end)?;
                while maj.last_octave_change() > 0.01 && t_end < 1e6 {
                    t_end *= 2.0;
                    maj = jacobi_majorant(k, 1.0, 0.0, 1.0, t_end)?;
                }
                let (j0, w0) = (DMatrix::zeros(n, n), DMatrix::identity(n, n));
                let tr = integrate_with(ms, &PhaseState::new(x.clone(), v.clone()), Some((&j0, &w0)), t_end, FlowOptions::new(tol).max_step(2.0).record(true))?;
                let mut viol = 0usize;
                let mut ratio: f64 = 0.0;
                for smp in tr.samples().iter().skip(1) {
                    let jn = mass_operator_norm(ms, &smp.jacobi.as_ref().unwrap().j);
                    let y = maj.value_at(smp.t);
                    ratio = ratio.max(jn / y);
                    if jn > y * (1.0 + 1e-9) {
                        viol += 1;
                    }
                }
                Ok((viol, ratio, maj.last_octave_change(), t_end))
            })
            .collect::<Result<Vec<_>>>()?;
        let viol: usize = res.iter().map(|r| r.0).sum();
        let ratio = max_of(res.iter().map(|r| r.1));
        let octave = max_of(res.iter().map(|r| r.2));
        let horizon = max_of(res.iter().map(|r| r.3));
        run.set("horizon", horizon);
        run.set("sup_hessian_bound", kh);
        run.set("violations", viol as f64);
        run.set("max_norm_over_majorant", ratio);
        run.set("max_last_octave_change", octave);
        Ok((
            viol == 0 && octave <= 0.01,
            format!(
                "10 runs to t <= {horizon}: {viol} violations of |J| <= y (max |J|/y = {ratio:.6}); y/(t+1) changes by <= {:.3}% over the last octave (bound 1%)",
                100.0 * octave
            ),
        ))
    })();
    run.finish(5, "Jacobi majorant domination", outcome)
}

/// Random collision-free three-body configuration with norm in `[2, 6]` and
/// all distances above 0.3.
fn random_configuration(ms: &MassSystem, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let x = random_direction(ms, rng) * (2.0 + 4.0 * rng.random::<f64>());
        if ms.min_distance(&x).0 > 0.3 {
            return x;
        }
    }
}

pub fn criterion_6(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let h = s.three_energy();
        let mut rng = s.rng(6);
        let tol = s.tol(1e-8);
        let opts = ActionOptions::new(tol);
        let pairs: Vec<(Vector, Vector)> = (0..30).map(|_| (random_configuration(ms, &mut rng), random_configuration(ms, &mut rng))).collect();
        let pair_res = pairs
            .par_iter()
            .map(|(x, y)| {
                let f = action_free_time_with(ms, x, y, h, &opts)?;
                let b = action_free_time_with(ms, y, x, h, &opts)?;
                let tol_abs = f.tol_abs.max(b.tol_abs);
                Ok((f.within_brackets() && b.within_brackets(), (f.value - b.value).abs() / tol_abs))
            })
            .collect::<Result<Vec<_>>>()?;
        let bracket_viol = pair_res.iter().filter(|r| !r.0).count();
        let sym = max_of(pair_res.iter().map(|r| r.1));
        let triples: Vec<[Vector; 3]> = (0..30)
            .map(|_| [random_configuration(ms, &mut rng), random_configuration(ms, &mut rng), random_configuration(ms, &mut rng)])
            .collect();
        let excess = triples
            .par_iter()
            .map(|[x, y, z]| {
                let e = excess_d(ms, x, y, z, h, tol)?;
                Ok(e.value / e.tol_abs)
            })
            .collect::<Result<Vec<_>>>()?;
        let worst_excess = excess.iter().cloned().fold(f64::INFINITY, f64::min);
        run.set("bracket_violations", bracket_viol as f64);
        run.set("max_asymmetry_over_tol", sym);
        run.set("min_excess_over_tol", worst_excess);
        Ok((
            bracket_viol == 0 && sym <= 2.0 && worst_excess >= -3.0,
            format!(
                "30 pairs: {bracket_viol} bracket violations, max |phi(x,y) - phi(y,x)| = {sym:.3} x tol (bound 2); 30 triples: min D = {worst_excess:.3} x tol (bound -3)"
            ),
        ))
    })();
    run.finish(6, "action brackets", outcome)
}

pub fn criterion_7(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let h = s.three_energy();
        let mut rng = s.rng(7);
        let (c, spec) = s.cone()?;
        let starts: Vec<Vector> = (0..10).map(|_| spec.sample(ms, &mut rng, c.r0, 1.5 * c.r0)).collect();
        let opts = ActionOptions::new(s.tol(1e-9));
        let rel = starts
            .par_iter()
            .map(|x0| {
                let sh = solve_asymptotic_velocity(ms, x0, &s.three_a, s.tol(1e-10))?;
                let mut p = Propagator::new(ms, &PhaseState::new(x0.clone(), sh.v_star.clone()), None, FlowOptions::new(1e-12).record(false))?;
                let mut out = Vec::new();
                for t in [2.0, 5.0, 10.0] {
                    p.advance_to(t)?;
                    let cur = p.current();
                    let along = cur.action + h * t;
                    let phi = action_free_time_with(ms, x0, &cur.x, h, &opts)?.value;
                    out.push((phi - along).abs() / along);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let worst = max_of(rel.iter().flatten().cloned());
        run.set("max_relative_error", worst);
        Ok((worst <= 1e-3, format!("10 rays at t = 2, 5, 10: |phi_h - A| / A <= {worst:.2e} (bound 1e-3)")))
    })();
    run.finish(7, "calibration identity", outcome)
}

pub fn criterion_8(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let a = &s.three_a;
        let h = s.three_energy();
        let mut rng = s.rng(8);
        let (c, spec) = s.cone()?;
        let tol = s.tol(1e-9);
        let pts: Vec<Vector> = (0..40).map(|_| spec.sample(ms, &mut rng, c.r0, 1.5 * c.r0)).collect();
        let far = max_of(pts.iter().map(|p| ms.norm(p)));
        let field = BusemannField::new(ms, a, h, default_schedule(far, c.r0), tol)?;
        let action_tol = field.action_tol();
        run.set("action_tol", action_tol);
        let mut notes = Vec::new();

        // (a)
        let at_zero = field.estimate(&Vector::zeros(ms.len()))?.value;
        let pass_a = at_zero == 0.0;
        notes.push(format!("(a) b(0) = {at_zero}"));

        // (b)
        let est = pts.par_iter().map(|p| field.estimate(p)).collect::<Result<Vec<_>>>()?;
        let opts = ActionOptions::new(tol);
        let lip = (0..20)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (2 * k, 2 * k + 1);
                let phi = action_free_time_with(ms, &pts[i], &pts[j], h, &opts)?.value;
                Ok((est[i].value - est[j].value).abs() - phi - 2.0 * est[i].gap.max(est[j].gap))
            })
            .collect::<Result<Vec<_>>>()?;
        let lip_worst = lip.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pass_b = lip_worst <= 0.0;
        run.set("lipschitz_max_excess", lip_worst);
        notes.push(format!("(b) max |b(x)-b(y)| - phi - 2 gap = {lip_worst:.3e}"));

        // (c)
        let times = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0];
        let ray = hyperbolic_ray(ms, &pts[0], a, s.tol(1e-10), 400.0, None, None)?;
        let mono = pts[1..4]
            .par_iter()
            .map(|x| {
                let u = busemann_from_ray(ms, &ray.trajectory, x, &times, tol)?;
                // tol_abs of the largest potential involved
                let scale = action_free_time_with(ms, &pts[0], &ray.trajectory.last().x, h, &opts)?.tol_abs;
                Ok(u.windows(2).map(|w| (w[1].1 - w[0].1) / scale).fold(f64::NEG_INFINITY, f64::max))
            })
            .collect::<Result<Vec<_>>>()?;
        let mono_worst = mono.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pass_c = mono_worst <= 3.0;
        run.set("monotonicity_max_increase_over_tol", mono_worst);
        notes.push(format!("(c) max increase of u_t = {mono_worst:.3} x tol (bound 3)"));

        // (d) points and a second start within a few units of the first ray
        let t_ray = 4000.0;
        let near = |rng: &mut ChaCha8Rng, r: f64| -> Vector {
            let p = &pts[0] + random_direction(ms, rng) * (r * rng.random::<f64>());
            spec.project_unit(ms, &p) * ms.norm(&p)
        };
        let start2 = near(&mut rng, 4.0);
        let cpts: Vec<Vector> = (0..5).map(|_| near(&mut rng, 4.0)).collect();
        let long1 = hyperbolic_ray(ms, &pts[0], a, s.tol(1e-10), t_ray, None, None)?;
        let long2 = hyperbolic_ray(ms, &start2, a, s.tol(1e-10), t_ray, None, None)?;
        let cons = busemann_constancy_check(ms, &long1.trajectory, &long2.trajectory, &cpts, tol)?;
        let cons_tol = tol * action_free_time_with(ms, &pts[0], &long1.trajectory.last().x, h, &opts)?.value;
        let pass_d = cons.spread <= 5.0 * cons_tol;
        run.set("constancy_spread", cons.spread);
        run.set("constancy_raw_spread", cons.raw_spread);
        run.set("constancy_tol", cons_tol);
        notes.push(format!("(d) spread {:.3e} (raw {:.3e}) vs 5 x tol = {:.3e}", cons.spread, cons.raw_spread, 5.0 * cons_tol));

        // (e)
        let grad = pts[11..16]
            .par_iter()
            .map(|x| {
                let g = busemann_gradient(ms, x, a, h, s.tol(1e-10))?;
                let mut local = s.rng(80 + (1000.0 * x[0]).abs() as u64);
                let mut worst: f64 = 0.0;
                let mut bound: f64 = 0.0;
                for _ in 0..2 {
                    let d = random_direction(ms, &mut local);
                    let step = 0.5;
                    let p = field.estimate(&(x + &d * step))?;
                    let m = field.estimate(&(x - &d * step))?;
                    let fd = (p.value - m.value) / (2.0 * step);
                    let err = (fd - ms.inner(&g.gradient, &d)).abs();
                    let allowed = (1e-3f64).max(5.0 * p.gap.max(m.gap));
                    worst = worst.max(err / allowed);
                    bound = bound.max(allowed);
                }
                Ok((worst, g.eikonal_residual.abs(), g.shooting.residual))
            })
            .collect::<Result<Vec<_>>>()?;
        let fd_worst = max_of(grad.iter().map(|g| g.0));
        let eik = max_of(grad.iter().map(|g| g.1));
        let pass_e = fd_worst <= 1.0 && eik <= s.tol(1e-10);
        run.set("gradient_fd_error_over_allowed", fd_worst);
        run.set("eikonal_residual", eik);
        notes.push(format!("(e) FD gradient error {fd_worst:.3} x allowed (bound 1), eikonal residual {eik:.2e}"));

        let gaps = est.iter().map(|e| e.gap);
        run.set("max_schedule_gap", max_of(gaps));
        let parts = [pass_a, pass_b, pass_c, pass_d, pass_e];
        Ok((parts.iter().all(|p| *p), notes.join("; ")))
    })();
    run.finish(8, "Busemann coherence", outcome)
}

pub fn criterion_9(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.three;
        let a = &s.three_a;
        let na2 = ms.inner(a, a);
        let x0 = a * (4.0 * ms.potential(a) / na2).max(2.0);
        let sh = solve_asymptotic_velocity(ms, &x0, a, s.tol(1e-11))?;
        let tr = integrate_with(ms, &PhaseState::new(x0, sh.v_star.clone()), None, 1e4, FlowOptions::new(1e-12).max_step(5.0))?;
        let rows = chazy_residual(ms, &tr, a)?;
        let window_max = |t_hi: f64| max_of(rows.iter().filter(|r| r.t >= 1e2 && r.t <= t_hi).map(|r| r.residual));
        let mut hi = 200.0;
        let mut growth: f64 = 0.0;
        let mut prev = window_max(hi);
        while hi < 1e4 {
            let next = window_max((2.0 * hi).min(1e4));
            growth = growth.max(next / prev - 1.0);
            prev = next;
            hi *= 2.0;
        }
        let (g, _) = fit_log_drift(&tr, a, 1e2, 1e4)?;
        let exact = ms.norm(&ms.gradient(a)?);
        let rel = (ms.norm(&g) - exact).abs() / exact;
        run.set("max_window_growth", growth);
        run.set("log_coefficient", ms.norm(&g));
        run.set("grad_u_norm", exact);
        run.set("log_coefficient_relative_error", rel);
        Ok((
            growth < 0.1 && rel <= 0.05,
            format!("residual window growth per doubling <= {:.2}% (bound 10%); log coefficient {:.6} vs |grad U(a)| {exact:.6} ({:.2}%, bound 5%)", 100.0 * growth, ms.norm(&g), 100.0 * rel),
        ))
    })();
    run.finish(9, "Chazy expansion", outcome)
}

pub fn criterion_10(s: &Suite) -> Criterion {
    let mut run = Run::new();
    let outcome = (|| {
        let ms = &s.kepler;
        let a = &s.kepler_a;
        let h = 0.5 * ms.inner(a, a);
        let tol = s.tol(1e-10);
        let off = s.kepler_point(37f64.to_radians())?;
        let probe = uniqueness_probe(ms, &off, a, tol, s.probe_starts, s.seed)?;
        run.set("distinct", probe.distinct() as f64);
        run.set("confined", probe.confined() as f64);
        let pass_probe = probe.distinct() == 2 && probe.confined() == 1;

        let anti = s.kepler_point(std::f64::consts::PI)?;
        let across = &s.kepler_point(std::f64::consts::PI - 0.01)? - &anti;
        let field = BusemannField::new(ms, a, h, default_schedule(ms.norm(&anti), 0.0), s.tol(1e-9))?;
        let (plus, minus) = one_sided_derivatives(&field, &anti, &across, 0.05)?;
        let jump = (plus - minus).abs();
        let action_tol = field.action_tol();
        run.set("derivative_plus", plus);
        run.set("derivative_minus", minus);
        run.set("derivative_gap", jump);
        run.set("action_tol", action_tol);
        Ok((
            pass_probe && jump > 10.0 * action_tol,
            format!(
                "off axis: {} solutions, {} confined (expected 2, 1); across the anti-aligned axis one-sided derivatives {plus:.6} / {minus:.6}, gap {jump:.3e} vs 10 x tol = {:.3e}",
                probe.distinct(),
                probe.confined(),
                10.0 * action_tol
            ),
        ))
    })();
    run.finish(10, "two-branch phenomenology", outcome)
}

pub fn run_criterion(s: &Suite, id: usize) -> Option<Criterion> {
    Some(match id {
        1 => criterion_1(s),
        2 => criterion_2(s),
        3 => criterion_3(s),
        4 => criterion_4(s),
        5 => criterion_5(s),
        6 => criterion_6(s),
        7 => criterion_7(s),
        8 => criterion_8(s),
        9 => criterion_9(s),
        10 => criterion_10(s),
        _ => return None,
    })
}

pub fn run_all(s: &Suite) -> Vec<Criterion> {
    (1..=10).filter_map(|k| run_criterion(s, k)).collect()
}
