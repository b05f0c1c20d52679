//! Dormand–Prince 5(4) embedded Runge–Kutta stepper with FSAL and
//! component-wise error control.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl StepControl {
    pub fn new(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, max_step: f64::INFINITY, max_steps: 2_000_000 }
    }
}

/// Integrator state; `advance` performs accepted steps up to a target time.
pub struct Stepper<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    f: F,
    pub t: f64,
    pub y: Vec<f64>,
    /// Derivative at `(t, y)`.
    pub dy: Vec<f64>,
    h: f64,
    ctrl: StepControl,
    steps: usize,
    k: [Vec<f64>; 6],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    dynew: Vec<f64>,
}

impl<F> Stepper<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(mut f: F, t0: f64, y0: Vec<f64>, ctrl: StepControl) -> Self {
        let n = y0.len();
        let mut dy = vec![0.0; n];
        f(t0, &y0, &mut dy);
        let zeros = || vec![0.0; n];
        Self {
            f,
            t: t0,
            y: y0,
            dy,
            h: 0.0,
            ctrl,
            steps: 0,
            k: [zeros(), zeros(), zeros(), zeros(), zeros(), zeros()],
            ytmp: zeros(),
            ynew: zeros(),
            dynew: zeros(),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.ctrl.atol + self.ctrl.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self, span: f64) -> f64 {
        let n = self.y.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sc).powi(2);
            d1 += (self.dy[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for i in 0..self.y.len() {
            self.ytmp[i] = self.y[i] + h0 * self.dy[i];
        }
        (self.f)(self.t + h0, &self.ytmp, &mut self.k[1]);
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.scale(self.y[i], self.y[i]);
            d2 += ((self.k[1][i] - self.dy[i]) / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// Attempts one step of size `h`; returns the scaled error norm, leaving the
    /// candidate in `ynew`/`dynew`.
    fn try_step(&mut self, h: f64) -> f64 {
        let n = self.y.len();
        let t = self.t;
        let y = &self.y;
        let k1 = &self.dy;
        let [k2, k3, k4, k5, k6, k7] = &mut self.k;
        let ytmp = &mut self.ytmp;
        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        (self.f)(t + C2 * h, ytmp, k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        (self.f)(t + C3 * h, ytmp, k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        (self.f)(t + C4 * h, ytmp, k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        (self.f)(t + C5 * h, ytmp, k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        (self.f)(t + h, ytmp, k6);
        for i in 0..n {
            self.ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        (self.f)(t + h, &self.ynew, k7);
        self.dynew.copy_from_slice(k7);
        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.ctrl.atol + self.ctrl.rtol * y[i].abs().max(self.ynew[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if err.is_finite() {
            err
        } else {
            f64::INFINITY
        }
    }

    /// Takes one accepted step toward `t_end` (never past it). `cap` bounds the
    /// step length from the current state.
    pub fn step(&mut self, t_end: f64, cap: f64) -> Result<()> {
        let span = t_end - self.t;
        if span <= 0.0 {
            return Ok(());
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(span);
        }
        let mut h = self.h.min(self.ctrl.max_step).min(cap);
        let mut rejected = false;
        loop {
            if self.steps >= self.ctrl.max_steps {
                return Err(Error::StepLimit { t: self.t });
            }
            let clipped = h >= span;
            let hh = if clipped { span } else { h };
            if hh <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let err = self.try_step(hh);
            if err <= 1.0 {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                let fac = if rejected { fac.min(1.0) } else { fac };
                self.t = if clipped { t_end } else { self.t + hh };
                std::mem::swap(&mut self.y, &mut self.ynew);
                std::mem::swap(&mut self.dy, &mut self.dynew);
                self.steps += 1;
                // keep the unclipped proposal so landing on output times does
                // not shrink later steps
                self.h = if clipped { self.h.max(hh * fac) } else { hh * fac };
                return Ok(());
            }
            rejected = true;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = hh * fac;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut s = Stepper::new(|_, y, dy| dy[0] = -y[0], 0.0, vec![1.0], StepControl::new(1e-12));
        while s.t < 5.0 {
            s.step(5.0, f64::INFINITY).unwrap();
        }
        assert_eq!(s.t, 5.0);
        assert!((s.y[0] - (-5.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator() {
        let mut s = Stepper::new(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            vec![1.0, 0.0],
            StepControl::new(1e-11),
        );
        let t_end = 20.0;
        while s.t < t_end {
            s.step(t_end, 0.5).unwrap();
        }
        assert!((s.y[0] - t_end.cos()).abs() < 1e-9);
        assert!((s.y[1] + t_end.sin()).abs() < 1e-9);
    }

    #[test]
    fn step_budget_is_enforced() {
        let mut ctrl = StepControl::new(1e-12);
        ctrl.max_steps = 3;
        let mut s = Stepper::new(|_, y, dy| dy[0] = y[0], 0.0, vec![1.0], ctrl);
        let mut res = Ok(());
        while s.t < 10.0 && res.is_ok() {
            res = s.step(10.0, 0.01);
        }
        assert!(matches!(res, Err(Error::StepLimit { .. })));
    }
}
