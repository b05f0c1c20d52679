//! Limit shapes `a = lim x(t)/t`, their derivative in the initial velocity,
//! Chazy-expansion diagnostics and the scalar Jacobi majorant.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{FlowOptions, PhaseState, Propagator, Sample, Trajectory};
use crate::ode::{StepControl, Stepper};
use crate::quad::gauss_legendre_unit;
use crate::system::{MassSystem, Vector};

#[derive(Debug, Clone, Copy)]
pub struct LimitShapeOptions {
    pub tol: f64,
    /// Largest truncation time tried before giving up.
    pub t_max: f64,
    pub max_steps: usize,
}

impl LimitShapeOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, t_max: 1e16, max_steps: 400_000 }
    }

    /// Local tolerance handed to the integrator.
    pub fn integrator_tol(&self) -> f64 {
        (self.tol / 100.0).clamp(1e-13, 1e-10)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitShapeResult {
    pub a_hat: Vector,
    /// Truncation time `T`.
    pub t_trunc: f64,
    /// Bound on `|int_T^inf grad U dt|` from in-cone decay.
    pub tail_bound: f64,
    /// Norm of the straight-line tail correction that was added.
    pub tail_correction: f64,
    /// Change of the estimate over the last doubling of `T`.
    pub increment: f64,
    /// `tail_bound + increment + integrator drift`.
    pub error_estimate: f64,
    pub energy: f64,
    pub energy_drift: f64,
    pub steps: usize,
    /// `d a / d v` in flat coordinates, columns over the requested directions.
    #[serde(skip)]
    pub jacobian: Option<DMatrix<f64>>,
}

/// `int_0^inf grad U(x + s v) ds` in closed form, pair by pair.
///
/// With `A = |w|^2`, `B = d.w`, `C = |d|^2` and `S = sqrt(AC)` the pair integral of
/// `(d + s w)/|d + s w|^3` is `d / (sqrt(C)(S + B)) + w / (sqrt(A)(S + B))`,
/// written to avoid the cancellation of nearly radial motion.
pub fn straight_line_tail(ms: &MassSystem, x: &Vector, v: &Vector) -> Vector {
    let (n, d) = (ms.n_bodies(), ms.dim());
    let m = ms.masses();
    let mut out = Vector::zeros(x.len());
    for i in 0..n {
        for j in i + 1..n {
            let (mut aa, mut bb, mut cc) = (0.0, 0.0, 0.0);
            for c in 0..d {
                let dc = x[j * d + c] - x[i * d + c];
                let wc = v[j * d + c] - v[i * d + c];
                aa += wc * wc;
                bb += dc * wc;
                cc += dc * dc;
            }
            let s = (aa * cc).sqrt();
            let (i0, i1) = if aa == 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                (1.0 / (cc.sqrt() * (s + bb)), 1.0 / (aa.sqrt() * (s + bb)))
            };
            for c in 0..d {
                let val = (x[j * d + c] - x[i * d + c]) * i0 + (v[j * d + c] - v[i * d + c]) * i1;
                out[i * d + c] += m[j] * val;
                out[j * d + c] -= m[i] * val;
            }
        }
    }
    out
}

/// `int_0^inf HU(x + s v) (J + s W) ds` by Gauss–Legendre after `s = T u/(1-u)`.
fn jacobi_tail(ms: &MassSystem, x: &Vector, v: &Vector, j: &DMatrix<f64>, w: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(j.nrows(), j.ncols());
    for (u, weight) in gauss_legendre_unit(24) {
        let s = scale * u / (1.0 - u);
        let ds = scale / (1.0 - u).powi(2) * weight;
        let Ok(h) = ms.hessian_matrix(&(x + v * s)) else { continue };
        out += h * (j + w * s) * ds;
    }
    out
}

struct Checkpoint {
    a: Vector,
    jac: Option<DMatrix<f64>>,
    rmin: f64,
}

fn estimate(ms: &MassSystem, s: &Sample) -> Result<(Vector, f64, f64, Option<DMatrix<f64>>)> {
    let tail = straight_line_tail(ms, &s.x, &s.v);
    let a = &s.v + &tail;
    let nx = ms.norm(&s.x);
    let radial = ms.inner(&s.x, &s.v) / nx;
    let g = ms.gradient(&s.x)?;
    // |grad U(x(t))| <= mu_loc / |x(t)|^2 and |x(t)| >= |x_T| + radial (t - T)
    let mu_loc = 1.1 * ms.norm(&g) * nx * nx;
    let bound = if radial > 0.0 { mu_loc / (radial * nx) } else { f64::INFINITY };
    let jac = s.jacobi.as_ref().map(|js| {
        let scale = nx / ms.norm(&s.v).max(1e-300);
        &js.w + jacobi_tail(ms, &s.x, &s.v, &js.j, &js.w, scale)
    });
    Ok((a, bound, ms.norm(&tail), jac))
}

/// Limit shape of the motion starting at `z`, optionally with `d a / d v`
/// applied to the columns of `dirs`.
pub fn limit_shape_with(
    ms: &MassSystem,
    z: &PhaseState,
    dirs: Option<&DMatrix<f64>>,
    opts: LimitShapeOptions,
) -> Result<LimitShapeResult> {
    let energy = ms.energy(&z.x, &z.v)?;
    if !(energy > 0.0) {
        return Err(Error::NotHyperbolic(format!("energy {energy:.6e} is not positive")));
    }
    let zeros = dirs.map(|d| DMatrix::zeros(d.nrows(), d.ncols()));
    let jac0 = dirs.zip(zeros.as_ref()).map(|(d, zero)| (zero, d));
    let mut fopts = FlowOptions::new(opts.integrator_tol()).record(false);
    fopts.max_steps = opts.max_steps;
    let start = PhaseState { t: 0.0, ..z.clone() };
    let mut prop = Propagator::new(ms, &start, jac0, fopts)?;
    let speed = (2.0 * energy).sqrt();
    let scale = ms.norm(&z.x) / speed + 1.0;
    let mut t = scale;
    let mut prev: Option<Checkpoint> = None;
    loop {
        prop.advance_to(t).map_err(|e| match e {
            Error::StepLimit { t } => Error::NotHyperbolic(format!("step budget exhausted at t = {t:.3e}")),
            other => other,
        })?;
        let s = prop.current();
        let (a, bound, corr, jac) = estimate(ms, &s)?;
        let rmin = ms.min_distance(&s.x).0;
        if let Some(p) = &prev {
            let inc = ms.norm(&(&a - &p.a));
            let jac_ok = match (&jac, &p.jac) {
                (Some(j1), Some(j0)) => (j1 - j0).norm() <= opts.tol.max(1e-9) * (1.0 + j1.norm()),
                _ => true,
            };
            if bound < 0.5 * opts.tol && inc < 0.5 * opts.tol && jac_ok {
                let drift = prop.max_energy_drift();
                let a_hat = a;
                return Ok(LimitShapeResult {
                    error_estimate: bound + inc + drift / speed,
                    a_hat,
                    t_trunc: t,
                    tail_bound: bound,
                    tail_correction: corr,
                    increment: inc,
                    energy,
                    energy_drift: drift,
                    steps: prop.steps(),
                    jacobian: jac,
                });
            }
            if t > 64.0 * scale && (rmin <= p.rmin || ms.inner(&s.x, &s.v) <= 0.0) {
                return Err(Error::NotHyperbolic(format!(
                    "mutual distances stopped growing near t = {t:.3e} (min r_ij {rmin:.3e})"
                )));
            }
        }
        if t > opts.t_max {
            return Err(Error::NotHyperbolic(format!("no convergence by t = {t:.3e}")));
        }
        prev = Some(Checkpoint { a, jac, rmin });
        t *= 2.0;
    }
}

/// Limit shape `a(z) = v0 + int_0^inf grad U(x(t)) dt`.
pub fn limit_shape(ms: &MassSystem, z: &PhaseState, tol: f64) -> Result<LimitShapeResult> {
    limit_shape_with(ms, z, None, LimitShapeOptions::new(tol))
}

/// `d a(z) (0, V) = V + int_0^inf HU(x(t)) J(t) dt` with `J(0) = 0, J'(0) = V`.
pub fn dlimit_shape_v(ms: &MassSystem, z: &PhaseState, dir: &Vector, tol: f64) -> Result<Vector> {
    ms.check(dir)?;
    let d = DMatrix::from_column_slice(dir.len(), 1, dir.as_slice());
    let res = limit_shape_with(ms, z, Some(&d), LimitShapeOptions::new(tol))?;
    Ok(res.jacobian.unwrap().column(0).into_owned())
}

/// Limit shape together with the full matrix `d a / d v` (flat coordinates).
pub fn limit_shape_jacobian(ms: &MassSystem, z: &PhaseState, tol: f64) -> Result<LimitShapeResult> {
    let id = DMatrix::identity(ms.len(), ms.len());
    limit_shape_with(ms, z, Some(&id), LimitShapeOptions::new(tol))
}

/// Operator norm of a flat-coordinate matrix in the mass metric,
/// `|M^{1/2} D M^{-1/2}|_2`.
pub fn mass_operator_norm(ms: &MassSystem, d: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let s = DMatrix::from_fn(n, n, |i, j| d[(i, j)] * (ms.component_mass(i) / ms.component_mass(j)).sqrt());
    s.singular_values().max()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChazyRow {
    pub t: f64,
    /// `|x(t) - t a + log(t) grad U(a)|`.
    pub residual: f64,
    /// `|x(t) - t a|`.
    pub drift: f64,
}

/// Chazy residuals at every sample with `t >= 1`.
pub fn chazy_residual(ms: &MassSystem, traj: &Trajectory, a: &Vector) -> Result<Vec<ChazyRow>> {
    let g = ms.gradient(a)?;
    Ok(traj
        .samples()
        .iter()
        .filter(|s| s.t >= 1.0)
        .map(|s| {
            let drift = &s.x - a * s.t;
            let res = &drift + &g * s.t.ln();
            ChazyRow { t: s.t, residual: ms.norm(&res), drift: ms.norm(&drift) }
        })
        .collect())
}

pub fn chazy_csv(rows: &[ChazyRow]) -> String {
    let mut out = String::from("t,residual,drift_without_log\n");
    for r in rows {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", r.t, r.residual, r.drift));
    }
    out
}

/// Least-squares fit `x(t) - t a ~ D0 - log(t) G` over samples in `[t_lo, t_hi]`;
/// returns `G` (which the expansion predicts to be `grad U(a)`) and `D0`.
pub fn fit_log_drift(traj: &Trajectory, a: &Vector, t_lo: f64, t_hi: f64) -> Result<(Vector, Vector)> {
    let pts: Vec<&Sample> = traj.samples().iter().filter(|s| s.t >= t_lo && s.t <= t_hi).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument("fewer than 3 samples in the fit window".into()));
    }
    let n = pts.len() as f64;
    let (mut sl, mut sll) = (0.0, 0.0);
    for s in &pts {
        let l = s.t.ln();
        sl += l;
        sll += l * l;
    }
    let det = n * sll - sl * sl;
    let mut g = Vector::zeros(a.len());
    let mut d0 = Vector::zeros(a.len());
    for k in 0..a.len() {
        let (mut sy, mut sly) = (0.0, 0.0);
        for s in &pts {
            let y = s.x[k] - s.t * a[k];
            let l = s.t.ln();
            sy += y;
            sly += l * y;
        }
        let slope = (n * sly - sl * sy) / det;
        g[k] = -slope;
        d0[k] = (sy - slope * sl) / n;
    }
    Ok((g, d0))
}

#[derive(Debug, Clone)]
pub struct Majorant {
    pub k: f64,
    pub alpha: f64,
    /// `(t, y, y')` at every accepted step.
    pub samples: Vec<(f64, f64, f64)>,
    /// `max y(t) / (t + 1)`.
    pub c: f64,
}

impl Majorant {
    fn accel(&self, t: f64, y: f64) -> f64 {
        self.k * (t + 1.0).powf(-(2.0 + self.alpha)) * y
    }

    /// `y(t)` by quintic Hermite interpolation of the stored steps.
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.samples.partition_point(|s| s.0 <= t).clamp(1, self.samples.len() - 1) - 1;
        let (t0, y0, d0) = self.samples[idx];
        let (t1, y1, d1) = self.samples[idx + 1];
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3, s4, s5) = (s * s, s.powi(3), s.powi(4), s.powi(5));
        let (a0, a1) = (self.accel(t0, y0), self.accel(t1, y1));
        y0 * (1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5)
            + h * d0 * (s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5)
            + h * h * a0 * (0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5)
            + h * h * a1 * (0.5 * s3 - s4 + 0.5 * s5)
            + h * d1 * (-4.0 * s3 + 7.0 * s4 - 3.0 * s5)
            + y1 * (10.0 * s3 - 15.0 * s4 + 6.0 * s5)
    }

    /// Relative change of `y/(t+1)` across the last octave `[t_end/2, t_end]`.
    pub fn last_octave_change(&self) -> f64 {
        let t1 = self.samples.last().unwrap().0;
        let r1 = self.value_at(t1) / (t1 + 1.0);
        let r0 = self.value_at(t1 / 2.0) / (t1 / 2.0 + 1.0);
        if r1 == 0.0 {
            0.0
        } else {
            ((r1 - r0) / r1).abs()
        }
    }
}

/// Integrates `y'' = k (t+1)^{-(2+alpha)} y` on `[0, t_end]`.
pub fn jacobi_majorant(k: f64, alpha: f64, y0: f64, ydot0: f64, t_end: f64) -> Result<Majorant> {
    if !(k > 0.0 && alpha > 0.0 && y0 >= 0.0 && ydot0 >= 0.0 && t_end > 0.0) {
        return Err(Error::InvalidArgument("majorant needs k, alpha, t_end > 0 and y0, y'0 >= 0".into()));
    }
    let f = move |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = k * (t + 1.0).powf(-(2.0 + alpha)) * y[0];
    };
    let mut st = Stepper::new(f, 0.0, vec![y0, ydot0], StepControl::new(1e-12));
    let mut samples = vec![(0.0, y0, ydot0)];
    while st.t < t_end {
        // steps bounded by the local time scale keep interpolation accurate
        st.step(t_end, 0.25 * (st.t + 1.0))?;
        samples.push((st.t, st.y[0], st.y[1]));
    }
    let c = samples.iter().map(|s| s.1 / (s.0 + 1.0)).fold(0.0, f64::max);
    Ok(Majorant { k, alpha, samples, c })
}
