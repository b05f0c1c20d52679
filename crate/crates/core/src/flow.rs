//! Integration of Newton's equations `x'' = grad U(x)`, optionally with the
//! variational equations `J'' = HU(x) J` and the running Lagrangian action.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::cone::ConeSpec;
use crate::error::{Error, Result};
use crate::ode::{StepControl, Stepper};
use crate::system::{MassSystem, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vector,
    pub v: Vector,
    pub t: f64,
}

impl PhaseState {
    pub fn new(x: Vector, v: Vector) -> Self {
        Self { x, v, t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub tol: f64,
    /// Abort when some `r_ij` drops below `collision_floor * |x0|`.
    pub collision_floor: f64,
    /// Each step is at most this fraction of the shortest `r_ij / |v_i - v_j|`.
    pub step_cap: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Store every accepted step (otherwise only the endpoints).
    pub record: bool,
}

impl FlowOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            collision_floor: 1e-6,
            step_cap: 0.25,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
            record: true,
        }
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    pub fn record(mut self, record: bool) -> Self {
        self.record = record;
        self
    }
}

/// Jacobi data carried along a sample: columns of `J` and `J'`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiSample {
    pub j: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub v: Vector,
    pub acc: Vector,
    pub energy: f64,
    /// `int_{t0}^t (|v|^2/2 + U) dt`.
    pub action: f64,
    pub jacobi: Option<JacobiSample>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    samples: Vec<Sample>,
    pub tol: f64,
    pub initial_energy: f64,
    pub max_energy_drift: f64,
    pub steps: usize,
}

impl Trajectory {
    /// Builds a trajectory from externally produced samples (times must
    /// increase strictly).
    pub fn from_samples(samples: Vec<Sample>, tol: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidArgument("sample times must increase strictly".into()));
        }
        let h0 = samples[0].energy;
        let drift = samples.iter().map(|s| (s.energy - h0).abs()).fold(0.0, f64::max);
        Ok(Self { samples, tol, initial_energy: h0, max_energy_drift: drift, steps: 0 })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().unwrap()
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.last().t
    }

    fn interval(&self, t: f64) -> usize {
        let idx = self.samples.partition_point(|s| s.t <= t);
        idx.clamp(1, self.samples.len() - 1) - 1
    }

    /// Position and velocity at time `t` from quintic Hermite interpolation of
    /// `(x, v, x'')` between neighbouring samples.
    pub fn sample_at(&self, t: f64) -> (Vector, Vector) {
        if self.samples.len() == 1 {
            let s = &self.samples[0];
            return (s.x.clone(), s.v.clone());
        }
        let i = self.interval(t);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let h = b.t - a.t;
        let s = (t - a.t) / h;
        let (s2, s3, s4, s5) = (s * s, s.powi(3), s.powi(4), s.powi(5));
        let p = [
            1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
            s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
            0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
            0.5 * s3 - s4 + 0.5 * s5,
            -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
            10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        ];
        let dp = [
            -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
            1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
            s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4,
            1.5 * s2 - 4.0 * s3 + 2.5 * s4,
            -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
            30.0 * s2 - 60.0 * s3 + 30.0 * s4,
        ];
        let comb = |c: &[f64; 6]| {
            &a.x * c[0] + &a.v * (h * c[1]) + &a.acc * (h * h * c[2]) + &b.acc * (h * h * c[3]) + &b.v * (h * c[4])
                + &b.x * c[5]
        };
        (comb(&p), comb(&dp) / h)
    }

    /// CSV with columns `t`, the `N*d` positions, the `N*d` velocities and the
    /// energy.
    pub fn to_csv(&self) -> String {
        let n = self.samples[0].x.len();
        let mut out = String::from("t");
        for k in 0..n {
            let _ = write!(out, ",x{k}");
        }
        for k in 0..n {
            let _ = write!(out, ",v{k}");
        }
        out.push_str(",energy\n");
        for s in &self.samples {
            let _ = write!(out, "{:.16e}", s.t);
            for c in s.x.iter().chain(s.v.iter()) {
                let _ = write!(out, ",{c:.16e}");
            }
            let _ = writeln!(out, ",{:.16e}", s.energy);
        }
        out
    }
}

type Rhs<'a> = Box<dyn FnMut(f64, &[f64], &mut [f64]) + 'a>;

/// Incremental integrator; repeated `advance_to` calls continue the same run.
pub struct Propagator<'a> {
    ms: &'a MassSystem,
    stepper: Stepper<Rhs<'a>>,
    cols: usize,
    opts: FlowOptions,
    floor: f64,
    h0: f64,
    samples: Vec<Sample>,
    max_drift: f64,
}

fn make_rhs(ms: &MassSystem, cols: usize) -> Rhs<'_> {
    let n = ms.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut xbuf = Vector::zeros(n);
    Box::new(move |_t, y, dy| {
        xbuf.copy_from_slice(&y[..n]);
        dy[..n].copy_from_slice(&y[n..2 * n]);
        ms.gradient_unchecked(&xbuf, &mut dy[n..2 * n]);
        let vv: f64 = (0..n).map(|k| ms.component_mass(k) * y[n + k] * y[n + k]).sum();
        dy[2 * n] = 0.5 * vv + ms.potential(&xbuf);
        if cols > 0 {
            ms.euclidean_hessian_into(&xbuf, &mut hess);
            let j0 = 2 * n + 1;
            let w0 = j0 + n * cols;
            for c in 0..cols {
                for r in 0..n {
                    dy[j0 + c * n + r] = y[w0 + c * n + r];
                }
                for r in 0..n {
                    let mut s = 0.0;
                    for q in 0..n {
                        s += hess[(r, q)] * y[j0 + c * n + q];
                    }
                    dy[w0 + c * n + r] = s / ms.component_mass(r);
                }
            }
        }
    })
}

impl<'a> Propagator<'a> {
    pub fn new(
        ms: &'a MassSystem,
        state: &PhaseState,
        jacobi: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
        opts: FlowOptions,
    ) -> Result<Self> {
        ms.check(&state.x)?;
        ms.check(&state.v)?;
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
        }
        if let Some((i, j)) = ms.collision_pair(&state.x) {
            return Err(Error::Collision { i, j });
        }
        let n = ms.len();
        let cols = jacobi.map_or(0, |(j, _)| j.ncols());
        let mut y = Vec::with_capacity(2 * n + 1 + 2 * n * cols);
        y.extend_from_slice(state.x.as_slice());
        y.extend_from_slice(state.v.as_slice());
        y.push(0.0);
        if let Some((j, w)) = jacobi {
            if j.nrows() != n || w.nrows() != n || w.ncols() != cols {
                return Err(Error::Shape { expected: n, got: j.nrows() });
            }
            y.extend_from_slice(j.as_slice());
            y.extend_from_slice(w.as_slice());
        }
        let ctrl = StepControl { rtol: opts.tol, atol: opts.tol, max_step: opts.max_step, max_steps: opts.max_steps };
        let stepper = Stepper::new(make_rhs(ms, cols), state.t, y, ctrl);
        let floor = opts.collision_floor * ms.norm(&state.x);
        let mut p = Self { ms, stepper, cols, opts, floor, h0: 0.0, samples: Vec::new(), max_drift: 0.0 };
        let first = p.current();
        p.h0 = first.energy;
        p.samples.push(first);
        Ok(p)
    }

    pub fn t(&self) -> f64 {
        self.stepper.t
    }

    pub fn steps(&self) -> usize {
        self.stepper.steps()
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.max_drift
    }

    /// Snapshot of the current state.
    pub fn current(&self) -> Sample {
        let n = self.ms.len();
        let y = &self.stepper.y;
        let x = Vector::from_column_slice(&y[..n]);
        let v = Vector::from_column_slice(&y[n..2 * n]);
        let acc = Vector::from_column_slice(&self.stepper.dy[n..2 * n]);
        let energy = 0.5 * self.ms.inner(&v, &v) - self.ms.potential(&x);
        let jacobi = (self.cols > 0).then(|| {
            let j0 = 2 * n + 1;
            let w0 = j0 + n * self.cols;
            JacobiSample {
                j: DMatrix::from_column_slice(n, self.cols, &y[j0..w0]),
                w: DMatrix::from_column_slice(n, self.cols, &y[w0..w0 + n * self.cols]),
            }
        });
        Sample { t: self.stepper.t, x, v, acc, energy, action: y[2 * n], jacobi }
    }

    fn step_cap(&self) -> f64 {
        let (n, d) = (self.ms.n_bodies(), self.ms.dim());
        let y = &self.stepper.y;
        let off = self.ms.len();
        let mut cap = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let (mut r2, mut w2) = (0.0, 0.0);
                for c in 0..d {
                    r2 += (y[j * d + c] - y[i * d + c]).powi(2);
                    w2 += (y[off + j * d + c] - y[off + i * d + c]).powi(2);
                }
                if w2 > 0.0 {
                    cap = cap.min((r2 / w2).sqrt());
                }
            }
        }
        self.opts.step_cap * cap
    }

    /// Integrates forward until `t_end`, landing on it exactly.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.stepper.t < t_end {
            let cap = self.step_cap();
            self.stepper.step(t_end, cap)?;
            let n = self.ms.len();
            let (r, i, j) = {
                let x = Vector::from_column_slice(&self.stepper.y[..n]);
                self.ms.min_distance(&x)
            };
            if r < self.floor || !r.is_finite() {
                return Err(Error::CollisionApproach { t: self.stepper.t, i, j, distance: r });
            }
            if self.opts.record || self.stepper.t >= t_end {
                let s = self.current();
                self.max_drift = self.max_drift.max((s.energy - self.h0).abs());
                if !s.energy.is_finite() {
                    return Err(Error::NotHyperbolic("non-finite state".into()));
                }
                self.samples.push(s);
            }
        }
        Ok(())
    }

    pub fn into_trajectory(self) -> Trajectory {
        Trajectory {
            tol: self.opts.tol,
            initial_energy: self.h0,
            max_energy_drift: self.max_drift,
            steps: self.stepper.steps(),
            samples: self.samples,
        }
    }
}

/// Adaptive integration of `x' = v, v' = grad U(x)` from `state` to `t_end`.
pub fn integrate(ms: &MassSystem, state: &PhaseState, t_end: f64, tol: f64) -> Result<Trajectory> {
    integrate_with(ms, state, None, t_end, FlowOptions::new(tol))
}

/// As [`integrate`], co-integrating `J' = W, W' = HU(x) J` from `J(0) = X, W(0) = V`.
pub fn integrate_with_jacobi(
    ms: &MassSystem,
    state: &PhaseState,
    z: (&Vector, &Vector),
    t_end: f64,
    tol: f64,
) -> Result<Trajectory> {
    let j = DMatrix::from_column_slice(z.0.len(), 1, z.0.as_slice());
    let w = DMatrix::from_column_slice(z.1.len(), 1, z.1.as_slice());
    integrate_with(ms, state, Some((&j, &w)), t_end, FlowOptions::new(tol))
}

pub fn integrate_with(
    ms: &MassSystem,
    state: &PhaseState,
    jacobi: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    t_end: f64,
    opts: FlowOptions,
) -> Result<Trajectory> {
    if !(t_end > state.t) {
        return Err(Error::InvalidArgument(format!("t_end {t_end} must exceed start time {}", state.t)));
    }
    let mut p = Propagator::new(ms, state, jacobi, opts)?;
    p.advance_to(t_end)?;
    Ok(p.into_trajectory())
}

/// First time the trajectory leaves `cone`, refined by bisection on the dense
/// output; `None` when every sample is inside.
pub fn detect_cone_exit(ms: &MassSystem, traj: &Trajectory, cone: &ConeSpec) -> Option<f64> {
    let samples = traj.samples();
    if !cone.contains(ms, &samples[0].x) {
        return Some(samples[0].t);
    }
    let g = |x: &Vector| cone.margin(ms, x);
    for w in samples.windows(2) {
        if g(&w[1].x) < 0.0 {
            let (mut lo, mut hi) = (w[0].t, w[1].t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if g(&traj.sample_at(mid).0) < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three_body() -> (MassSystem, PhaseState) {
        let ms = MassSystem::new(vec![1.0, 0.8, 1.3], 2).unwrap();
        let x = Vector::from_column_slice(&[-1.0, 0.0, 1.0, 0.2, 0.1, 1.1]);
        let v = Vector::from_column_slice(&[-1.2, -0.3, 1.1, 0.1, 0.2, 1.0]);
        (ms, PhaseState::new(x, v))
    }

    #[test]
    fn energy_drift_is_bounded() {
        let (ms, z) = three_body();
        let tol = 1e-10;
        let traj = integrate(&ms, &z, 50.0, tol).unwrap();
        let h = traj.initial_energy;
        assert!(traj.max_energy_drift <= 100.0 * tol * (1.0 + h.abs()), "{}", traj.max_energy_drift);
    }

    #[test]
    fn time_reversal() {
        let (ms, z) = three_body();
        let fwd = integrate(&ms, &z, 10.0, 1e-12).unwrap();
        let end = fwd.last();
        let back = PhaseState::new(end.x.clone(), -&end.v);
        let rev = integrate(&ms, &back, 10.0, 1e-12).unwrap();
        let fin = rev.last();
        assert!((&fin.x - &z.x).norm() < 1e-6);
        assert!((-&fin.v - &z.v).norm() < 1e-6);
    }

    #[test]
    fn zero_jacobi_data_stays_zero() {
        let (ms, z) = three_body();
        let zero = Vector::zeros(6);
        let traj = integrate_with_jacobi(&ms, &z, (&zero, &zero), 5.0, 1e-10).unwrap();
        for s in traj.samples() {
            assert_eq!(s.jacobi.as_ref().unwrap().j.norm(), 0.0);
        }
    }

    #[test]
    fn time_translation_field() {
        let (ms, z) = three_body();
        let acc = ms.gradient(&z.x).unwrap();
        let traj = integrate_with_jacobi(&ms, &z, (&z.v, &acc), 5.0, 1e-12).unwrap();
        for s in traj.samples() {
            let j = s.jacobi.as_ref().unwrap().j.column(0).into_owned();
            assert!((j - &s.v).norm() <= 1e-8 * (1.0 + s.v.norm()));
        }
    }

    #[test]
    fn jacobi_matches_finite_differences() {
        let (ms, z) = three_body();
        let xi = Vector::from_column_slice(&[0.1, -0.2, 0.05, 0.3, -0.1, 0.0]);
        let eta = Vector::from_column_slice(&[0.0, 0.1, -0.2, 0.1, 0.3, -0.1]);
        let t = 5.0;
        let traj = integrate_with_jacobi(&ms, &z, (&xi, &eta), t, 1e-12).unwrap();
        let j = traj.last().jacobi.as_ref().unwrap().j.column(0).into_owned();
        let s = 1e-5;
        let shifted = |sg: f64| {
            let zz = PhaseState::new(&z.x + &xi * (sg * s), &z.v + &eta * (sg * s));
            integrate(&ms, &zz, t, 1e-13).unwrap().last().x.clone()
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * s);
        assert!((&fd - &j).norm() <= 1e-4 * j.norm(), "{} vs {}", fd, j);
    }

    #[test]
    fn jacobi_fields_are_linear() {
        let (ms, z) = three_body();
        let a = DMatrix::from_column_slice(6, 1, &[0.1, 0.0, -0.2, 0.3, 0.0, 0.1]);
        let b = DMatrix::from_column_slice(6, 1, &[0.0, 0.2, 0.1, -0.1, 0.2, 0.0]);
        let c = 1.7;
        let both = DMatrix::from_columns(&[a.column(0), b.column(0), (&a + &b * c).column(0)]);
        let traj = integrate_with(&ms, &z, Some((&both, &DMatrix::zeros(6, 3))), 5.0, FlowOptions::new(1e-11))
            .unwrap();
        for s in traj.samples() {
            let j = &s.jacobi.as_ref().unwrap().j;
            let comb = j.column(0) + j.column(1) * c;
            assert_relative_eq!(comb, j.column(2).into_owned(), epsilon = 1e-9 * (1.0 + j.norm()));
        }
    }

    #[test]
    fn collision_approach_aborts() {
        let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let z = PhaseState::new(
            Vector::from_column_slice(&[0.0, 0.0, 1.0, 0.0]),
            Vector::zeros(4),
        );
        let err = integrate(&ms, &z, 10.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::CollisionApproach { .. } | Error::StepUnderflow { .. }), "{err:?}");
    }

    #[test]
    fn dense_output_matches_integration() {
        let (ms, z) = three_body();
        let traj = integrate(&ms, &z, 6.0, 1e-12).unwrap();
        let direct = integrate(&ms, &z, 3.3, 1e-12).unwrap();
        let (x, v) = traj.sample_at(3.3);
        assert!((&x - &direct.last().x).norm() < 1e-7);
        assert!((&v - &direct.last().v).norm() < 1e-6);
    }

    #[test]
    fn csv_layout() {
        let (ms, z) = three_body();
        let traj = integrate(&ms, &z, 1.0, 1e-8).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 1 + 12 + 1);
        assert_eq!(lines.count(), traj.samples().len());
    }
}
