use hyperbolic_core::action::{action_fixed_time_with, action_free_time_with, ActionOptions, ActionResult};
use hyperbolic_core::asymptotics::{chazy_csv, chazy_residual, fit_log_drift, limit_shape};
use hyperbolic_core::busemann::{busemann_grid, default_schedule, grid_csv, BusemannField};
use hyperbolic_core::cone::{cone_constants, ConeConstants, ConeSpec};
use hyperbolic_core::flow::{integrate_with, FlowOptions, PhaseState};
use hyperbolic_core::scattering::{hyperbolic_ray, solve_asymptotic_velocity, RayReport};
use hyperbolic_core::verify::{run_criterion, Suite};
use hyperbolic_core::{MassSystem, Vector};
use serde_json::{json, Value};

use crate::config::{ConfigError, Loaded};
use crate::report::{num, vec};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] hyperbolic_core::Error),
}

/// Outcome of a command: the report body, whether every check passed, and
/// CSV files to emit.
pub struct Outcome {
    pub ok: bool,
    pub result: Value,
    pub csv: Vec<(String, String)>,
    pub lines: Vec<String>,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Self { ok: true, result, csv: Vec::new(), lines: Vec::new() }
    }
}

pub struct Context<'a> {
    pub cfg: &'a Loaded,
    pub seed: u64,
    pub tol_scale: f64,
}

impl Context<'_> {
    fn tol(&self, t: f64) -> f64 {
        (t * self.tol_scale).min(0.1)
    }

    fn ms(&self) -> &MassSystem {
        &self.cfg.ms
    }

    fn cone(&self, a: &Vector) -> Result<(ConeConstants, ConeSpec), Failure> {
        let ms = self.ms();
        let alpha = match self.cfg.raw.cone.alpha {
            Some(al) => al,
            None => {
                let a0 = ms.alpha0(a)?;
                a0 + 0.75 * (1.0 - a0)
            }
        };
        let c = cone_constants(ms, a, alpha, self.cfg.raw.cone.eps.unwrap_or(1.0))?;
        let spec = ConeSpec::new(ms, a.clone(), alpha, c.r0)?;
        Ok((c, spec))
    }
}

fn constants_json(c: &ConeConstants, alpha0: f64) -> Value {
    json!({
        "alpha": c.alpha, "alpha0": alpha0, "eps": c.eps, "delta": c.delta,
        "lambda": c.lambda, "mu": c.mu, "r0": c.r0,
    })
}

fn ray_json(ms: &MassSystem, r: &RayReport) -> Value {
    let s = &r.shooting;
    json!({
        "x0": vec(&s.x0),
        "a": vec(&s.a),
        "v_star": vec(&s.v_star),
        "residual": s.residual,
        "iterations": s.iterations,
        "residual_history": s.history,
        "energy_error": s.energy_error,
        "x0_in_cone": s.x0_in_cone,
        "warnings": s.warnings,
        "confinement": {
            "t_end": r.trajectory.t_end(),
            "cone_exit": r.cone_exit,
            "monotone_size": r.monotone,
            "growth_margin": r.growth_margin.map(num),
            "max_velocity_deviation": r.max_velocity_deviation,
            "final_position": vec(&r.trajectory.last().x),
            "final_speed": ms.norm(&r.trajectory.last().v),
            "max_energy_drift": r.trajectory.max_energy_drift,
        },
    })
}

pub fn shoot(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let ms = ctx.ms();
    let (a, _) = cfg.require_a()?;
    let points = cfg.require_points(1, true)?;
    let cone = match cfg.raw.cone.alpha {
        Some(_) => Some(ctx.cone(a)?),
        None => None,
    };
    let mut rays = Vec::new();
    let mut csv = Vec::new();
    for (k, x0) in points.iter().enumerate() {
        let r = hyperbolic_ray(
            ms,
            x0,
            a,
            ctx.tol(cfg.raw.tolerances.shooting),
            cfg.raw.horizons.ray,
            cone.as_ref().map(|c| &c.1),
            cone.as_ref().map(|c| c.0.lambda),
        )?;
        rays.push(ray_json(ms, &r));
        csv.push((format!("shoot_{k}.csv"), r.trajectory.to_csv()));
    }
    let mut o = Outcome::ok(json!({ "rays": rays, "cone": cone.as_ref().map(|c| constants_json(&c.0, ms.alpha0(a).unwrap_or(f64::NAN))) }));
    o.csv = csv;
    Ok(o)
}

pub fn limit_shape_cmd(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let ms = ctx.ms();
    let points = cfg.require_points(1, true)?;
    if cfg.velocities.is_empty() {
        return Err(ConfigError::Invalid("limit-shape needs velocities".into()).into());
    }
    let tol = ctx.tol(cfg.raw.tolerances.integrator);
    let mut rows = Vec::new();
    for (x, v) in points.iter().zip(&cfg.velocities) {
        let r = limit_shape(ms, &PhaseState::new(x.clone(), v.clone()), tol)?;
        rows.push(json!({
            "x0": vec(x),
            "v0": vec(v),
            "a_hat": vec(&r.a_hat),
            "truncation_time": r.t_trunc,
            "tail_bound": r.tail_bound,
            "tail_correction": r.tail_correction,
            "last_increment": r.increment,
            "error_estimate": r.error_estimate,
            "energy": r.energy,
            "energy_law_error": (ms.norm(&r.a_hat) - (2.0 * r.energy).sqrt()).abs(),
            "energy_drift": r.energy_drift,
            "steps": r.steps,
        }));
    }
    Ok(Outcome::ok(json!({ "limit_shapes": rows })))
}

fn action_json(r: &ActionResult) -> Value {
    json!({
        "value": r.value,
        "tau": r.tau,
        "lower": r.lower,
        "upper": r.upper,
        "tol_abs": r.tol_abs,
        "within_brackets": r.within_brackets(),
        "grid": r.grid,
        "transcription_value": r.transcription_value,
        "discretization_gap": r.discretization_gap,
        "polished": r.polished,
        "energy_spread": r.energy_spread,
        "iterations": r.stats.iterations,
    })
}

pub fn action(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let ms = ctx.ms();
    let points = cfg.require_points(2, false)?;
    let h = cfg.h.ok_or_else(|| ConfigError::Invalid("action needs energy or limit_shape".into()))?;
    if cfg.raw.pairs.is_empty() {
        return Err(ConfigError::Invalid("action needs pairs".into()).into());
    }
    let opts = ActionOptions::new(ctx.tol(cfg.raw.tolerances.action));
    let mut rows = Vec::new();
    let mut csv = Vec::new();
    let mut ok = true;
    for (k, [i, j]) in cfg.raw.pairs.iter().enumerate() {
        let (x, y) = (&points[*i], &points[*j]);
        let free = action_free_time_with(ms, x, y, h, &opts)?;
        ok &= free.within_brackets();
        csv.push((format!("action_{k}_free.csv"), free.curve.to_csv()));
        let fixed = match cfg.raw.duration {
            Some(tau) => {
                let r = action_fixed_time_with(ms, x, y, tau, &opts)?;
                ok &= r.within_brackets();
                csv.push((format!("action_{k}_fixed.csv"), r.curve.to_csv()));
                Some(action_json(&r))
            }
            None => None,
        };
        rows.push(json!({ "pair": [i, j], "free_time": action_json(&free), "fixed_time": fixed }));
    }
    Ok(Outcome { ok, result: json!({ "energy": h, "duration": cfg.raw.duration, "pairs": rows }), csv, lines: Vec::new() })
}

pub fn busemann(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let ms = ctx.ms();
    let (a, h) = cfg.require_a()?;
    let points = cfg.require_points(1, false)?;
    let tol = ctx.tol(cfg.raw.tolerances.busemann);
    let lambdas = if cfg.raw.tolerances.busemann_schedule.is_empty() {
        let far = points.iter().map(|p| ms.norm(p)).fold(0.0, f64::max);
        default_schedule(far, 0.0)
    } else {
        cfg.raw.tolerances.busemann_schedule.clone()
    };
    let field = BusemannField::new(ms, a, h, lambdas.clone(), tol)?;
    let rows = busemann_grid(&field, points, ctx.tol(cfg.raw.tolerances.shooting))?;
    let body: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "point": vec(&r.point),
                "value": r.value,
                "schedule_gap": r.gap,
                "gradient": r.gradient.as_ref().map(vec),
                "eikonal_residual": r.eikonal_residual.map(num),
            })
        })
        .collect();
    let mut o = Outcome::ok(json!({
        "energy": h,
        "a": vec(&field.a),
        "schedule": lambdas,
        "anchors": field.anchors,
        "action_tol": field.action_tol(),
        "points": body,
    }));
    o.csv.push(("busemann_grid.csv".into(), grid_csv(&rows)));
    Ok(o)
}

pub fn cone(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let ms = ctx.ms();
    let (a, _) = cfg.require_a()?;
    let (c, spec) = ctx.cone(a)?;
    let alpha0 = ms.alpha0(a)?;
    let starts: Vec<Vector> = if cfg.points.is_empty() {
        vec![spec.unit_axis(ms) * (1.5 * c.r0)]
    } else {
        cfg.require_points(1, true)?.to_vec()
    };
    let mut runs = Vec::new();
    let mut csv = Vec::new();
    let mut ok = true;
    for (k, x0) in starts.iter().enumerate() {
        let inside = spec.contains(ms, x0);
        let r = hyperbolic_ray(ms, x0, a, ctx.tol(cfg.raw.tolerances.shooting), cfg.raw.horizons.ray, Some(&spec), Some(c.lambda))?;
        // confinement is only promised for starts inside the truncated cone
        if inside {
            ok &= r.cone_exit.is_none() && r.growth_margin.is_none_or(|g| g >= 0.0);
        }
        let mut j = ray_json(ms, &r);
        j["start_in_truncated_cone"] = json!(inside);
        runs.push(j);
        csv.push((format!("cone_{k}.csv"), r.trajectory.to_csv()));
    }
    Ok(Outcome { ok, result: json!({ "constants": constants_json(&c, alpha0), "runs": runs }), csv, lines: Vec::new() })
}

pub fn chazy(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let ms = ctx.ms();
    let x0 = &cfg.require_points(1, true)?[0];
    let tol = ctx.tol(cfg.raw.tolerances.integrator);
    let (v0, a) = match cfg.velocities.first() {
        Some(v) => (v.clone(), limit_shape(ms, &PhaseState::new(x0.clone(), v.clone()), tol)?.a_hat),
        None => {
            let (a, _) = cfg.require_a()?;
            (solve_asymptotic_velocity(ms, x0, a, ctx.tol(cfg.raw.tolerances.shooting))?.v_star, a.clone())
        }
    };
    let horizon = cfg.raw.horizons.chazy;
    let opts = FlowOptions::new(tol).max_step(horizon / 2000.0);
    let traj = integrate_with(ms, &PhaseState::new(x0.clone(), v0.clone()), None, horizon, opts)?;
    let rows = chazy_residual(ms, &traj, &a)?;
    let (t_lo, t_hi) = ((horizon / 100.0).max(1.0), horizon);
    let (g, c) = fit_log_drift(&traj, &a, t_lo, t_hi)?;
    let grad = ms.gradient(&a)?;
    let late = rows.iter().filter(|r| r.t >= horizon / 2.0).map(|r| r.residual).fold(0.0, f64::max);
    let mut o = Outcome::ok(json!({
        "x0": vec(x0),
        "v0": vec(&v0),
        "a": vec(&a),
        "horizon": horizon,
        "samples": rows.len(),
        "fit_window": [t_lo, t_hi],
        "log_coefficient": vec(&g),
        "constant": vec(&c),
        "grad_u_at_a": vec(&grad),
        "log_coefficient_relative_error": ms.norm(&(&g - &grad)) / ms.norm(&grad),
        "final_residual": rows.last().map(|r| r.residual),
        "max_residual_last_octave": late,
    }));
    o.csv.push(("chazy.csv".into(), chazy_csv(&rows)));
    Ok(o)
}

pub fn verify(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let mut suite = Suite { seed: ctx.seed, tol_scale: ctx.tol_scale, ..Suite::default() };
    if let Some(n) = cfg.raw.output.probe_starts {
        suite.probe_starts = n;
    }
    if let Some(a) = &cfg.raw.limit_shape {
        let a = Vector::from_column_slice(a);
        match cfg.ms.n_bodies() {
            2 => (suite.kepler, suite.kepler_a) = (cfg.ms.clone(), a),
            3 => (suite.three, suite.three_a) = (cfg.ms.clone(), a),
            n => return Err(ConfigError::Invalid(format!("verify takes a 2- or 3-body system, got {n} bodies")).into()),
        }
    }
    let ids: Vec<usize> = if cfg.raw.output.criteria.is_empty() { (1..=10).collect() } else { cfg.raw.output.criteria.clone() };
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut ok = true;
    for id in ids {
        let c = run_criterion(&suite, id).ok_or_else(|| ConfigError::Invalid(format!("no acceptance criterion {id}")))?;
        ok &= c.pass;
        lines.push(c.line());
        rows.push(json!({
            "id": c.id,
            "title": c.title,
            "pass": c.pass,
            "summary": c.summary,
            "metrics": c.metrics,
        }));
    }
    Ok(Outcome { ok, result: json!({ "criteria": rows }), csv: Vec::new(), lines })
}
