//! Busemann functions `b_a(x) = lim_n phi_h(x, p_n) - phi_h(0, p_n)` along
//! `p_n = lambda_n a`, their gradient through the shooting solver, and the
//! horofunctions of individual rays.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

use crate::action::{action_free_time_with, ActionOptions};
use crate::asymptotics::limit_shape;
use crate::error::{Error, Result};
use crate::flow::{PhaseState, Trajectory};
use crate::scattering::{solve_asymptotic_velocity, ShootingResult};
use crate::system::{MassSystem, Vector};

/// `lambda_n = lambda_0 2^n`, `n = 0..=6`, with `lambda_0 = 8 max(|x|, r0)`.
pub fn default_schedule(x_norm: f64, r0: f64) -> Vec<f64> {
    let l0 = 8.0 * x_norm.max(r0).max(1.0);
    (0..=6).map(|n| l0 * 2f64.powi(n)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BusemannEstimate {
    pub value: f64,
    pub terms: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `|u_last - u_prev|`.
    pub gap: f64,
    pub anchor: &'static str,
}

impl BusemannEstimate {
    /// `|u_{n+1} - u_n|` along the schedule.
    pub fn increments(&self) -> Vec<f64> {
        self.terms.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }
}

/// Busemann function directed by `a`, normalized at the total collision `0`;
/// the anchor values `phi_h(0, p_n)` are computed once.
#[derive(Debug, Clone)]
pub struct BusemannField<'a> {
    pub ms: &'a MassSystem,
    /// `a` rescaled to `|a| = sqrt(2h)`.
    pub a: Vector,
    pub h: f64,
    pub lambdas: Vec<f64>,
    pub anchors: Vec<f64>,
    pub opts: ActionOptions,
}

impl<'a> BusemannField<'a> {
    pub fn new(ms: &'a MassSystem, a: &Vector, h: f64, lambdas: Vec<f64>, tol: f64) -> Result<Self> {
        ms.check(a)?;
        if let Some((i, j)) = ms.collision_pair(a) {
            return Err(Error::Collision { i, j });
        }
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("energy must be positive, got {h}")));
        }
        if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[1] > w[0])) || !(lambdas[0] > 0.0) {
            return Err(Error::InvalidArgument("schedule must be positive and increasing".into()));
        }
        let a = a * ((2.0 * h).sqrt() / ms.norm(a));
        let opts = ActionOptions::new(tol);
        let zero = Vector::zeros(ms.len());
        let anchors = lambdas
            .par_iter()
            .map(|l| action_free_time_with(ms, &zero, &(&a * *l), h, &opts).map(|r| r.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ms, a, h, lambdas, anchors, opts })
    }

    pub fn target(&self, n: usize) -> Vector {
        &self.a * self.lambdas[n]
    }

    pub fn estimate(&self, x: &Vector) -> Result<BusemannEstimate> {
        self.ms.check(x)?;
        let terms = if x.iter().all(|c| *c == 0.0) {
            vec![0.0; self.lambdas.len()]
        } else {
            (0..self.lambdas.len())
                .map(|n| Ok(action_free_time_with(self.ms, x, &self.target(n), self.h, &self.opts)?.value - self.anchors[n]))
                .collect::<Result<Vec<_>>>()?
        };
        let k = terms.len();
        let gap = if k >= 2 { (terms[k - 1] - terms[k - 2]).abs() } else { f64::INFINITY };
        Ok(BusemannEstimate { value: terms[k - 1], terms, lambdas: self.lambdas.clone(), gap, anchor: "origin" })
    }

    /// Absolute action tolerance at the largest schedule point.
    pub fn action_tol(&self) -> f64 {
        self.opts.tol * self.anchors.last().copied().unwrap_or(1.0).max(1.0)
    }
}

/// `b_a(x)` for a single point; see [`BusemannField`] to reuse anchors.
pub fn busemann_estimate(ms: &MassSystem, x: &Vector, a: &Vector, h: f64, schedule: Vec<f64>, tol: f64) -> Result<BusemannEstimate> {
    BusemannField::new(ms, a, h, schedule, tol)?.estimate(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct Gradient {
    pub gradient: Vector,
    /// `|grad|^2 / 2 - U(x) - h`.
    pub eikonal_residual: f64,
    pub in_cone: bool,
    pub shooting: ShootingResult,
}

/// `grad b_a(x) = -v*`, `v*` the initial velocity of the ray from `x` with
/// limit shape `a` (rescaled to energy `h`).
pub fn busemann_gradient(ms: &MassSystem, x: &Vector, a: &Vector, h: f64, tol: f64) -> Result<Gradient> {
    let ah = a * ((2.0 * h).sqrt() / ms.norm(a));
    let shooting = solve_asymptotic_velocity(ms, x, &ah, tol)?;
    let gradient = -&shooting.v_star;
    let eikonal_residual = 0.5 * ms.inner(&gradient, &gradient) - ms.potential(x) - h;
    Ok(Gradient { gradient, eikonal_residual, in_cone: shooting.x0_in_cone, shooting })
}

/// `u_{gamma,t}(x) = phi_h(x, gamma(t)) - phi_h(gamma(0), gamma(t))` for each `t`.
pub fn busemann_from_ray(ms: &MassSystem, ray: &Trajectory, x: &Vector, t_list: &[f64], tol: f64) -> Result<Vec<(f64, f64)>> {
    if t_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must increase".into()));
    }
    let (t0, t1) = (ray.t_start(), ray.t_end());
    if t_list.iter().any(|t| *t <= t0 || *t > t1) {
        return Err(Error::InvalidArgument(format!("times must lie in ({t0}, {t1}]")));
    }
    let h = ray.initial_energy;
    let start = &ray.first().x;
    let opts = ActionOptions::new(tol);
    t_list
        .par_iter()
        .map(|&t| {
            let p = ray.sample_at(t).0;
            let (fx, f0) = rayon::join(
                || action_free_time_with(ms, x, &p, h, &opts),
                || action_free_time_with(ms, start, &p, h, &opts),
            );
            Ok((t, fx?.value - f0?.value))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Constancy {
    /// `max - min` over points of the extrapolated differences.
    pub spread: f64,
    /// Spread of the raw differences at the largest time.
    pub raw_spread: f64,
    pub times: Vec<f64>,
    /// Per point: `u_{g1,t}(x) - u_{g2,t}(x)` at each time.
    pub differences: Vec<Vec<f64>>,
    pub extrapolated: Vec<f64>,
}

/// Spread of `u_{g1,T}(x) - u_{g2,T}(x)` over `points`, which tends to zero for
/// rays with the same limit shape. The differences are taken at `T/4, T/2, T`
/// and extrapolated in `1/T`.
pub fn busemann_constancy_check(
    ms: &MassSystem,
    ray1: &Trajectory,
    ray2: &Trajectory,
    points: &[Vector],
    tol: f64,
) -> Result<Constancy> {
    let shape = |r: &Trajectory| -> Result<Vector> {
        let s = r.first();
        Ok(limit_shape(ms, &PhaseState::new(s.x.clone(), s.v.clone()), 1e-10)?.a_hat)
    };
    let (a1, a2) = (shape(ray1)?, shape(ray2)?);
    let gap = ms.norm(&(&a1 - &a2));
    if gap > 1e-6 * ms.norm(&a1) {
        return Err(Error::LimitShapeMismatch(gap));
    }
    let t = ray1.t_end().min(ray2.t_end());
    let times = vec![t / 4.0, t / 2.0, t];
    let differences = points
        .iter()
        .map(|x| {
            let u1 = busemann_from_ray(ms, ray1, x, &times, tol)?;
            let u2 = busemann_from_ray(ms, ray2, x, &times, tol)?;
            Ok(u1.iter().zip(&u2).map(|(a, b)| a.1 - b.1).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    // error model c1/T + c2/T^2
    let extrapolated: Vec<f64> = differences.iter().map(|d| (8.0 * d[2] - 6.0 * d[1] + d[0]) / 3.0).collect();
    let spread_of = |v: &[f64]| {
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let raw: Vec<f64> = differences.iter().map(|d| d[2]).collect();
    Ok(Constancy { spread: spread_of(&extrapolated), raw_spread: spread_of(&raw), times, differences, extrapolated })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub point: Vector,
    pub value: f64,
    pub gap: f64,
    pub gradient: Option<Vector>,
    pub eikonal_residual: Option<f64>,
}

/// Estimates and shooting gradients over `points`.
pub fn busemann_grid(field: &BusemannField, points: &[Vector], tol: f64) -> Result<Vec<GridRow>> {
    points
        .par_iter()
        .map(|x| {
            let est = field.estimate(x)?;
            let grad = busemann_gradient(field.ms, x, &field.a, field.h, tol).ok();
            Ok(GridRow {
                point: x.clone(),
                value: est.value,
                gap: est.gap,
                eikonal_residual: grad.as_ref().map(|g| g.eikonal_residual),
                gradient: grad.map(|g| g.gradient),
            })
        })
        .collect()
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let n = rows.first().map_or(0, |r| r.point.len());
    let mut s = String::new();
    for k in 0..n {
        let _ = write!(s, "x{k},");
    }
    s.push_str("value,gap");
    for k in 0..n {
        let _ = write!(s, ",g{k}");
    }
    s.push_str(",eikonal_residual\n");
    for r in rows {
        for c in r.point.iter() {
            let _ = write!(s, "{c:.16e},");
        }
        let _ = write!(s, "{:.16e},{:.16e}", r.value, r.gap);
        for k in 0..n {
            match &r.gradient {
                Some(g) => {
                    let _ = write!(s, ",{:.16e}", g[k]);
                }
                None => s.push_str(",nan"),
            }
        }
        match r.eikonal_residual {
            Some(e) => {
                let _ = writeln!(s, ",{e:.16e}");
            }
            None => s.push_str(",nan\n"),
        }
    }
    s
}

/// One-sided directional derivatives `(b(x + e s) - b(x)) / s` and
/// `(b(x) - b(x - e s)) / s` of the estimate.
pub fn one_sided_derivatives(field: &BusemannField, x: &Vector, dir: &Vector, step: f64) -> Result<(f64, f64)> {
    let e = dir / field.ms.norm(dir);
    let pts = [x + &e * step, x.clone(), x - &e * step];
    let vals = pts.par_iter().map(|p| field.estimate(p).map(|r| r.value)).collect::<Result<Vec<_>>>()?;
    Ok(((vals[0] - vals[1]) / step, (vals[1] - vals[2]) / step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_geometric() {
        let s = default_schedule(3.0, 10.0);
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], 80.0);
        assert_eq!(s[6], 80.0 * 64.0);
    }

    #[test]
    fn normalized_at_origin() {
        let ms = MassSystem::new(vec![1.0, 2.0], 2).unwrap();
        let a = Vector::from_column_slice(&[-1.0, 0.0, 0.5, 0.0]);
        let f = BusemannField::new(&ms, &a, 0.5, vec![20.0, 40.0], 1e-8).unwrap();
        let e = f.estimate(&Vector::zeros(4)).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(BusemannField::new(&ms, &a, 0.5, vec![40.0, 20.0], 1e-8).is_err());
    }
}
