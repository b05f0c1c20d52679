//! Lagrangian action of curves, the fixed-time potential `phi(x, y, tau)` and
//! the free-time potential `phi_h(x, y)`.
//!
//! Minimizers are computed by direct transcription: the curve is a cubic
//! Hermite spline `q(r)`, `r in [0, 1]`, with time `t = tau g(r)`, where
//! `g(r) = r`, or `g(r) = r^3` when the curve starts at a collision. Writing
//! `K = int |q'|^2 / (2 g')` and `P = int U(q) g'`, the fixed-time action is
//! `K / tau + tau P` and minimizing `K / tau + tau (P + h)` over `tau` gives
//! the free-time action `2 sqrt(K (P + h))`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::fmt::Write as _;

use crate::cone::sup_potential_on_cone;
use crate::error::{Error, Result};
use crate::flow::{FlowOptions, PhaseState, Propagator};
use crate::quad::gauss_legendre_unit;
use crate::system::{MassSystem, Vector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteCurve {
    pub knots: Vec<Vector>,
    pub times: Vec<f64>,
}

impl DiscreteCurve {
    pub fn new(knots: Vec<Vector>, times: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != times.len() {
            return Err(Error::InvalidArgument(format!(
                "a curve needs >= 2 knots with one time each (got {} knots, {} times)",
                knots.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("knot times must increase strictly".into()));
        }
        if knots.iter().any(|k| k.iter().any(|c| !c.is_finite())) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite curve data".into()));
        }
        Ok(Self { knots, times })
    }

    /// Knots on the uniform grid of `[0, tau]`.
    pub fn uniform(knots: Vec<Vector>, tau: f64) -> Result<Self> {
        let m = knots.len().saturating_sub(1).max(1) as f64;
        let times = (0..knots.len()).map(|k| tau * k as f64 / m).collect();
        Self::new(knots, times)
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn start(&self) -> &Vector {
        &self.knots[0]
    }

    pub fn end(&self) -> &Vector {
        &self.knots[self.knots.len() - 1]
    }

    pub fn reversed(&self) -> Self {
        let t1 = self.times[self.times.len() - 1];
        Self {
            knots: self.knots.iter().rev().cloned().collect(),
            times: self.times.iter().rev().map(|t| t1 - t).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let n = self.knots[0].len();
        let mut s = String::from("t");
        for k in 0..n {
            let _ = write!(s, ",x{k}");
        }
        s.push('\n');
        for (q, t) in self.knots.iter().zip(&self.times) {
            let _ = write!(s, "{t:.16e}");
            for c in q.iter() {
                let _ = write!(s, ",{c:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

fn hermite(u: f64) -> ([f64; 4], [f64; 4]) {
    let (u2, u3) = (u * u, u * u * u);
    (
        [2.0 * u3 - 3.0 * u2 + 1.0, u3 - 2.0 * u2 + u, -2.0 * u3 + 3.0 * u2, u3 - u2],
        [6.0 * u2 - 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, -6.0 * u2 + 6.0 * u, 3.0 * u2 - 2.0 * u],
    )
}

/// `int_0^1 U(x + s (y - x)) ds`, in closed form pair by pair.
pub fn segment_potential_integral(ms: &MassSystem, x: &Vector, y: &Vector) -> f64 {
    let (n, d) = (ms.n_bodies(), ms.dim());
    let m = ms.masses();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (mut aa, mut bb, mut cc) = (0.0, 0.0, 0.0);
            for c in 0..d {
                let d0 = x[j * d + c] - x[i * d + c];
                let dd = (y[j * d + c] - y[i * d + c]) - d0;
                aa += dd * dd;
                bb += d0 * dd;
                cc += d0 * d0;
            }
            total += m[i] * m[j] * inverse_distance_integral(aa, bb, cc);
        }
    }
    total
}

/// `int_0^1 ds / sqrt(A s^2 + 2 B s + C)`.
fn inverse_distance_integral(aa: f64, bb: f64, cc: f64) -> f64 {
    if aa == 0.0 {
        return 1.0 / cc.sqrt();
    }
    let disc = aa * cc - bb * bb;
    if disc > 1e-12 * aa * cc {
        let sd = disc.sqrt();
        return (((aa + bb) / sd).asinh() - (bb / sd).asinh()) / aa.sqrt();
    }
    // collinear: the distance is |A s + B| / sqrt(A)
    let (lo, hi) = (bb, aa + bb);
    if lo * hi <= 0.0 {
        return f64::INFINITY;
    }
    (hi / lo).abs().ln() / aa.sqrt()
}

/// Action `int (|q'|^2/2 + U) dt + h tau` of the piecewise-cubic interpolant of
/// the knots, with 4 quadrature cells per segment.
pub fn action_of_curve(ms: &MassSystem, curve: &DiscreteCurve, h: f64) -> Result<f64> {
    action_of_curve_with(ms, curve, h, 4)
}

/// As [`action_of_curve`] with `sub` quadrature cells per segment. Segments
/// ending at a collision are integrated on a geometrically graded mesh.
pub fn action_of_curve_with(ms: &MassSystem, curve: &DiscreteCurve, h: f64, sub: usize) -> Result<f64> {
    let DiscreteCurve { knots, times } = curve;
    for k in knots {
        ms.check(k)?;
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("knot times must increase strictly".into()));
    }
    let nk = knots.len();
    let singular: Vec<bool> = knots.iter().map(|q| ms.collision_pair(q).is_some()).collect();
    let mut deriv: Vec<Vector> = Vec::with_capacity(nk);
    for k in 0..nk {
        let d = if nk == 2 || (k == 0 && singular[0]) || (k == nk - 1 && singular[nk - 1]) {
            // one-sided difference
            let (a, b) = if k == nk - 1 { (k - 1, k) } else { (k, k + 1) };
            (&knots[b] - &knots[a]) / (times[b] - times[a])
        } else {
            let (i0, i1, i2) = if k == 0 {
                (0, 1, 2)
            } else if k == nk - 1 {
                (nk - 3, nk - 2, nk - 1)
            } else {
                (k - 1, k, k + 1)
            };
            let (t0, t1, t2, t) = (times[i0], times[i1], times[i2], times[k]);
            let c0 = (2.0 * t - t1 - t2) / ((t0 - t1) * (t0 - t2));
            let c1 = (2.0 * t - t0 - t2) / ((t1 - t0) * (t1 - t2));
            let c2 = (2.0 * t - t0 - t1) / ((t2 - t0) * (t2 - t1));
            &knots[i0] * c0 + &knots[i1] * c1 + &knots[i2] * c2
        };
        deriv.push(d);
    }
    let rule = gauss_legendre_unit(8);
    let mut total = 0.0;
    for k in 0..nk - 1 {
        let dt = times[k + 1] - times[k];
        let (q0, q1) = (&knots[k], &knots[k + 1]);
        let (d0, d1) = (&deriv[k] * dt, &deriv[k + 1] * dt);
        let point = |u: f64| {
            let (b, db) = hermite(u);
            (q0 * b[0] + &d0 * b[1] + q1 * b[2] + &d1 * b[3], (q0 * db[0] + &d0 * db[1] + q1 * db[2] + &d1 * db[3]) / dt)
        };
        let cells: Vec<(f64, f64)> = if singular[k] || singular[k + 1] {
            let mut c = Vec::new();
            let mut hi = 0.5;
            for _ in 0..60 {
                c.push((hi * 0.5, hi));
                hi *= 0.5;
            }
            c.push((0.0, hi));
            let mut cells: Vec<(f64, f64)> = Vec::new();
            for &(a, b) in &c {
                if singular[k] {
                    cells.push((a, b));
                }
                if singular[k + 1] {
                    cells.push((1.0 - b, 1.0 - a));
                }
            }
            if !(singular[k] && singular[k + 1]) {
                let (a, b) = if singular[k] { (0.5, 1.0) } else { (0.0, 0.5) };
                for s in 0..sub {
                    cells.push((a + (b - a) * s as f64 / sub as f64, a + (b - a) * (s + 1) as f64 / sub as f64));
                }
            }
            cells
        } else {
            (0..sub).map(|s| (s as f64 / sub as f64, (s + 1) as f64 / sub as f64)).collect()
        };
        for (a, b) in cells {
            for &(u, w) in &rule {
                let (q, v) = point(a + (b - a) * u);
                total += w * (b - a) * dt * (0.5 * ms.inner(&v, &v) + ms.potential(&q));
            }
        }
    }
    Ok(total + h * curve.duration())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Fixed(f64),
    Free(f64),
}

/// Symmetric block-tridiagonal matrix with square blocks.
#[derive(Debug, Clone)]
struct Blocks {
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

impl Blocks {
    fn zeros(nb: usize, s: usize) -> Self {
        Self { diag: vec![DMatrix::zeros(s, s); nb], upper: vec![DMatrix::zeros(s, s); nb - 1] }
    }

    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        Self {
            diag: self.diag.iter().zip(&other.diag).map(|(x, y)| x * a + y * b).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(x, y)| x * a + y * b).collect(),
        }
    }

    /// Block Thomas elimination; `None` if a pivot block is singular.
    fn solve(&self, rhs: &[&[f64]]) -> Option<Vec<Vec<f64>>> {
        let nb = self.diag.len();
        let s = self.diag[0].nrows();
        let mut lus = Vec::with_capacity(nb);
        lus.push(self.diag[0].clone().lu());
        for k in 1..nb {
            let x = lus[k - 1].solve(&self.upper[k - 1])?;
            let sk = &self.diag[k] - self.upper[k - 1].transpose() * x;
            lus.push(sk.lu());
        }
        let mut out = Vec::with_capacity(rhs.len());
        for b in rhs {
            let mut ys: Vec<DVector<f64>> = Vec::with_capacity(nb);
            ys.push(DVector::from_column_slice(&b[..s]));
            for k in 1..nb {
                let prev = lus[k - 1].solve(&ys[k - 1])?;
                ys.push(DVector::from_column_slice(&b[k * s..(k + 1) * s]) - self.upper[k - 1].transpose() * prev);
            }
            let mut xs = vec![DVector::zeros(s); nb];
            xs[nb - 1] = lus[nb - 1].solve(&ys[nb - 1])?;
            for k in (0..nb - 1).rev() {
                let r = &ys[k] - &self.upper[k] * &xs[k + 1];
                xs[k] = lus[k].solve(&r)?;
            }
            let mut flat = Vec::with_capacity(nb * s);
            for x in xs {
                flat.extend_from_slice(x.as_slice());
            }
            if flat.iter().any(|v| !v.is_finite()) {
                return None;
            }
            out.push(flat);
        }
        Some(out)
    }
}

struct Integrals {
    k: f64,
    p: f64,
    gk: Vec<f64>,
    gp: Vec<f64>,
    hk: Blocks,
    hp: Blocks,
}

/// Transcription of the minimization between `x` (possibly a collision) and
/// the regular configuration `y`.
struct Transcription<'a> {
    ms: &'a MassSystem,
    x: Vector,
    y: Vector,
    singular: bool,
    mode: Mode,
    rule: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct OptimizerStats {
    pub iterations: usize,
    pub final_decrement: f64,
    pub damping: f64,
}

impl<'a> Transcription<'a> {
    fn n(&self) -> usize {
        self.ms.len()
    }

    fn g(&self, r: f64) -> f64 {
        if self.singular {
            r * r * r
        } else {
            r
        }
    }

    fn gprime(&self, r: f64) -> f64 {
        if self.singular {
            3.0 * r * r
        } else {
            1.0
        }
    }

    fn free_mask(&self, m: usize) -> Vec<bool> {
        let n = self.n();
        let mut free = vec![true; (m + 1) * 2 * n];
        for l in 0..n {
            free[l] = false;
            free[m * 2 * n + l] = false;
            if self.singular {
                free[n + l] = false;
            }
        }
        free
    }

    /// Straight seed `x + (y - x) rho(r)` plus an optional bend.
    fn seed(&self, m: usize, bend: Option<&Bend>) -> Vec<f64> {
        let n = self.n();
        let dxy = &self.y - &self.x;
        let mut z = vec![0.0; (m + 1) * 2 * n];
        for k in 0..=m {
            let r = k as f64 / m as f64;
            let (rho, drho) = if self.singular { (r * r, 2.0 * r) } else { (r, 1.0) };
            let mut q = &self.x + &dxy * rho;
            let mut w = &dxy * drho;
            if let Some(b) = bend {
                let (f, df) = b.profile(rho);
                q += &b.shift * f;
                w += &b.shift * (df * drho);
            }
            z[k * 2 * n..k * 2 * n + n].copy_from_slice(q.as_slice());
            z[k * 2 * n + n..(k + 1) * 2 * n].copy_from_slice(w.as_slice());
        }
        z
    }

    fn knot(&self, z: &[f64], k: usize) -> (Vector, Vector) {
        let n = self.n();
        (
            Vector::from_column_slice(&z[k * 2 * n..k * 2 * n + n]),
            Vector::from_column_slice(&z[k * 2 * n + n..(k + 1) * 2 * n]),
        )
    }

    /// `K` and `P`; `P` is infinite when a quadrature node collides or when a
    /// segment passes through a collision between its nodes.
    fn values(&self, z: &[f64], m: usize) -> (f64, f64) {
        let n = self.n();
        let delta = 1.0 / m as f64;
        let (mut kk, mut pp) = (0.0, 0.0);
        let mut q = Vector::zeros(n);
        let mut prev = Vector::from_column_slice(&z[..n]);
        for seg in 0..m {
            let base = seg * 2 * n;
            for &(u, w) in &self.rule {
                let (b, db) = hermite(u);
                let r = (seg as f64 + u) * delta;
                let gp = self.gprime(r);
                let mut kin = 0.0;
                for l in 0..n {
                    let zq0 = z[base + l];
                    let zw0 = z[base + n + l];
                    let zq1 = z[base + 2 * n + l];
                    let zw1 = z[base + 3 * n + l];
                    q[l] = b[0] * zq0 + delta * b[1] * zw0 + b[2] * zq1 + delta * b[3] * zw1;
                    let dq = (db[0] * zq0 + db[2] * zq1) / delta + db[1] * zw0 + db[3] * zw1;
                    kin += self.ms.component_mass(l) * dq * dq;
                }
                kk += w * delta * 0.5 * kin / gp;
                pp += w * delta * self.ms.potential(&q) * gp;
                if self.ms.pair_reverses(&prev, &q) {
                    return (kk, f64::INFINITY);
                }
                prev.copy_from(&q);
            }
            let end = Vector::from_column_slice(&z[base + 2 * n..base + 3 * n]);
            if self.ms.pair_reverses(&prev, &end) {
                return (kk, f64::INFINITY);
            }
            prev = end;
        }
        (kk, pp)
    }

    fn integrals(&self, z: &[f64], m: usize) -> Result<Integrals> {
        let n = self.n();
        let s = 2 * n;
        let delta = 1.0 / m as f64;
        let mut out = Integrals {
            k: 0.0,
            p: 0.0,
            gk: vec![0.0; (m + 1) * s],
            gp: vec![0.0; (m + 1) * s],
            hk: Blocks::zeros(m + 1, s),
            hp: Blocks::zeros(m + 1, s),
        };
        let mut q = Vector::zeros(n);
        let mut dq = Vector::zeros(n);
        let mut grad = vec![0.0; n];
        let mut hess = DMatrix::zeros(n, n);
        for seg in 0..m {
            let base = seg * s;
            for &(u, w) in &self.rule {
                let (b, db) = hermite(u);
                let c0 = [b[0], delta * b[1], b[2], delta * b[3]];
                let c1 = [db[0] / delta, db[1], db[2] / delta, db[3]];
                let r = (seg as f64 + u) * delta;
                let gp = self.gprime(r);
                let wt = w * delta;
                for l in 0..n {
                    q[l] = (0..4).map(|c| c0[c] * z[base + c * n + l]).sum();
                    dq[l] = (0..4).map(|c| c1[c] * z[base + c * n + l]).sum();
                }
                let u_val = self.ms.potential(&q);
                if !u_val.is_finite() {
                    return Err(Error::Collision { i: 0, j: 0 });
                }
                out.k += wt * 0.5 * self.ms.inner(&dq, &dq) / gp;
                out.p += wt * u_val * gp;
                self.ms.gradient_unchecked(&q, &mut grad);
                self.ms.euclidean_hessian_into(&q, &mut hess);
                for c in 0..4 {
                    for l in 0..n {
                        let mass = self.ms.component_mass(l);
                        out.gk[base + c * n + l] += wt * c1[c] * mass * dq[l] / gp;
                        out.gp[base + c * n + l] += wt * gp * c0[c] * mass * grad[l];
                    }
                }
                for c in 0..4 {
                    for cp in 0..4 {
                        let (kc, kcp) = (c / 2, cp / 2);
                        if kc > kcp {
                            continue;
                        }
                        let (oc, ocp) = ((c % 2) * n, (cp % 2) * n);
                        let fk = wt * c1[c] * c1[cp] / gp;
                        let fp = wt * gp * c0[c] * c0[cp];
                        let (bk, bp) = if kc == kcp {
                            (&mut out.hk.diag[seg + kc], &mut out.hp.diag[seg + kc])
                        } else {
                            (&mut out.hk.upper[seg], &mut out.hp.upper[seg])
                        };
                        for l in 0..n {
                            bk[(oc + l, ocp + l)] += fk * self.ms.component_mass(l);
                            for lp in 0..n {
                                bp[(oc + l, ocp + lp)] += fp * hess[(l, lp)];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn objective(&self, kk: f64, pp: f64) -> f64 {
        match self.mode {
            Mode::Fixed(tau) => kk / tau + tau * pp,
            Mode::Free(h) => 2.0 * (kk * (pp + h)).sqrt(),
        }
    }

    fn tau(&self, kk: f64, pp: f64) -> f64 {
        match self.mode {
            Mode::Fixed(tau) => tau,
            Mode::Free(h) => (kk / (pp + h)).sqrt(),
        }
    }

    /// Levenberg–Marquardt damped Newton iteration on the knot variables.
    fn minimize(&self, mut z: Vec<f64>, m: usize, max_iter: usize) -> Result<(Vec<f64>, OptimizerStats)> {
        let free = self.free_mask(m);
        let nv = z.len();
        let mut lam: f64 = 1e-8;
        let mut stats = OptimizerStats::default();
        let (k0, p0) = self.values(&z, m);
        let mut f = self.objective(k0, p0);
        if !f.is_finite() {
            return Err(Error::Optimizer("seed curve meets the collision set".into()));
        }
        for it in 0..max_iter {
            stats.iterations = it + 1;
            let ev = self.integrals(&z, m)?;
            let (mut g, mut hess, u, c, scale) = match self.mode {
                Mode::Fixed(tau) => {
                    let g: Vec<f64> = (0..nv).map(|i| ev.gk[i] / tau + tau * ev.gp[i]).collect();
                    (g, ev.hk.combine(1.0 / tau, &ev.hp, tau), None, 0.0, 1.0 / tau)
                }
                Mode::Free(h) => {
                    let qq = ev.p + h;
                    let (a, b) = ((qq / ev.k).sqrt(), (ev.k / qq).sqrt());
                    let g: Vec<f64> = (0..nv).map(|i| a * ev.gk[i] + b * ev.gp[i]).collect();
                    let u: Vec<f64> = (0..nv).map(|i| if free[i] { a * ev.gk[i] - b * ev.gp[i] } else { 0.0 }).collect();
                    let fval = 2.0 * (ev.k * qq).sqrt();
                    (g, ev.hk.combine(a, &ev.hp, b), Some(u), 1.0 / fval, a)
                }
            };
            let s = hess.diag[0].nrows();
            // pin the fixed variables
            for i in 0..nv {
                if !free[i] {
                    g[i] = 0.0;
                    let (kb, o) = (i / s, i % s);
                    for j in 0..s {
                        hess.diag[kb][(o, j)] = 0.0;
                        hess.diag[kb][(j, o)] = 0.0;
                        if kb + 1 < hess.diag.len() {
                            hess.upper[kb][(o, j)] = 0.0;
                        }
                        if kb > 0 {
                            hess.upper[kb - 1][(j, o)] = 0.0;
                        }
                    }
                    hess.diag[kb][(o, o)] = 1.0;
                }
            }
            let dscale: Vec<f64> = (0..nv)
                .map(|i| if free[i] { (scale * ev.hk.diag[i / s][(i % s, i % s)]).abs().max(1e-300) } else { 0.0 })
                .collect();
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut accepted = false;
            let mut last_dec = f64::INFINITY;
            let mut first_dec = None;
            while lam <= 1e12 {
                let mut damped = hess.clone();
                for (i, ds) in dscale.iter().enumerate() {
                    damped.diag[i / s][(i % s, i % s)] += lam * ds;
                }
                let step = match &u {
                    None => damped.solve(&[&neg_g]).map(|mut v| v.remove(0)),
                    Some(u) => damped.solve(&[&neg_g, u]).map(|sol| {
                        let (bg, bu) = (&sol[0], &sol[1]);
                        let ug: f64 = u.iter().zip(bg).map(|(a, b)| a * b).sum();
                        let uu: f64 = u.iter().zip(bu).map(|(a, b)| a * b).sum();
                        let den = 1.0 - c * uu;
                        if den > 1e-8 {
                            bg.iter().zip(bu).map(|(a, b)| a + c * b * ug / den).collect()
                        } else {
                            bg.clone()
                        }
                    }),
                };
                let Some(step) = step else {
                    lam = (lam * 10.0).max(1e-8);
                    continue;
                };
                let dec: f64 = -g.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>();
                if !(dec > 0.0) {
                    if dec == 0.0 {
                        last_dec = 0.0;
                        break;
                    }
                    lam = (lam * 10.0).max(1e-8);
                    continue;
                }
                last_dec = dec;
                first_dec.get_or_insert(dec);
                let trial: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
                let (kt, pt) = self.values(&trial, m);
                let ft = self.objective(kt, pt);
                if ft < f {
                    z = trial;
                    f = ft;
                    lam = (lam / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
                lam *= 10.0;
            }
            stats.final_decrement = last_dec;
            stats.damping = lam;
            let floor = 1e-13 * f.abs().max(1e-300);
            if last_dec <= floor {
                return Ok((z, stats));
            }
            if !accepted {
                // at the rounding floor the undamped decrement is already tiny
                if first_dec.is_some_and(|d| d <= 1e-10 * f.abs()) {
                    return Ok((z, stats));
                }
                return Err(Error::Optimizer(format!(
                    "no descent after {} iterations (decrement {last_dec:.3e})",
                    it + 1
                )));
            }
        }
        Err(Error::Optimizer(format!("iteration limit {max_iter} reached (decrement {:.3e})", stats.final_decrement)))
    }

    /// Doubles the grid by Hermite interpolation at the segment midpoints.
    fn refine(&self, z: &[f64], m: usize) -> Vec<f64> {
        let n = self.n();
        let s = 2 * n;
        let delta = 1.0 / m as f64;
        let (b, db) = hermite(0.5);
        let mut out = Vec::with_capacity((2 * m + 1) * s);
        for seg in 0..m {
            let base = seg * s;
            out.extend_from_slice(&z[base..base + s]);
            for l in 0..n {
                let (q0, w0, q1, w1) = (z[base + l], z[base + n + l], z[base + s + l], z[base + s + n + l]);
                out.push(b[0] * q0 + delta * b[1] * w0 + b[2] * q1 + delta * b[3] * w1);
            }
            for l in 0..n {
                let (q0, w0, q1, w1) = (z[base + l], z[base + n + l], z[base + s + l], z[base + s + n + l]);
                out.push((db[0] * q0 + db[2] * q1) / delta + db[1] * w0 + db[3] * w1);
            }
        }
        out.extend_from_slice(&z[m * s..]);
        out
    }

    fn curve(&self, z: &[f64], m: usize, tau: f64) -> DiscreteCurve {
        let knots = (0..=m).map(|k| self.knot(z, k).0).collect();
        let times = (0..=m).map(|k| tau * self.g(k as f64 / m as f64)).collect();
        DiscreteCurve { knots, times }
    }

    /// Largest deviation of the knot energies from their mean (fixed time) or
    /// from `h` (free time).
    fn energy_spread(&self, z: &[f64], m: usize, tau: f64) -> f64 {
        // knot velocities near a collision are dominated by interpolation error
        let skip = if self.singular { m / 8 + 1 } else { 0 };
        let energies: Vec<f64> = (skip..=m)
            .map(|k| {
                let r = k as f64 / m as f64;
                let (q, w) = self.knot(z, k);
                let v = w / (tau * self.gprime(r));
                0.5 * self.ms.inner(&v, &v) - self.ms.potential(&q)
            })
            .collect();
        match self.mode {
            Mode::Free(h) => energies.iter().map(|e| (e - h).abs()).fold(0.0, f64::max),
            Mode::Fixed(_) => {
                let mean = energies.iter().sum::<f64>() / energies.len() as f64;
                energies.iter().map(|e| (e - mean).abs()).fold(0.0, f64::max)
            }
        }
    }

    /// Candidate bends for a straight seed passing much closer to a binary
    /// collision than either endpoint: the pair is pushed apart, both ways,
    /// by a broad bump and by one a few cells wide at the closest approach.
    fn bends(&self, cells: usize) -> Vec<Bend> {
        if self.singular {
            return Vec::new();
        }
        let (nb, d) = (self.ms.n_bodies(), self.ms.dim());
        let m = self.ms.masses();
        let mut out = Vec::new();
        for i in 0..nb {
            for j in i + 1..nb {
                let rel = |x: &Vector| -> Vec<f64> { (0..d).map(|c| x[j * d + c] - x[i * d + c]).collect() };
                let (d0, d1) = (rel(&self.x), rel(&self.y));
                let dd: Vec<f64> = d0.iter().zip(&d1).map(|(a, b)| b - a).collect();
                let aa: f64 = dd.iter().map(|v| v * v).sum();
                if aa == 0.0 {
                    continue;
                }
                let s = (-d0.iter().zip(&dd).map(|(a, b)| a * b).sum::<f64>() / aa).clamp(0.0, 1.0);
                let close: Vec<f64> = d0.iter().zip(&dd).map(|(a, b)| a + s * b).collect();
                let rc = close.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r_end = norm_slice(&d0).min(norm_slice(&d1));
                if rc >= 0.25 * r_end {
                    continue;
                }
                let mut e: Vec<f64> = close.clone();
                if rc < 1e-9 * r_end {
                    // any direction orthogonal to the relative motion
                    let k = (0..d).min_by(|&a, &b| dd[a].abs().total_cmp(&dd[b].abs())).unwrap();
                    e = vec![0.0; d];
                    e[k] = 1.0;
                    let p: f64 = e.iter().zip(&dd).map(|(a, b)| a * b).sum::<f64>() / aa;
                    e.iter_mut().zip(&dd).for_each(|(a, b)| *a -= p * b);
                }
                let ne = norm_slice(&e);
                let chord = aa.sqrt() / cells as f64;
                let shapes = [(0.5 * r_end, None), ((2.0 * chord).max(0.5 * r_end), Some((s, 2.0 / cells as f64)))];
                for (amp, local) in shapes {
                    for sign in [1.0, -1.0] {
                        let mut b = Vector::zeros(self.ms.len());
                        for c in 0..d {
                            let dir = sign * amp * e[c] / ne;
                            b[i * d + c] -= m[j] / (m[i] + m[j]) * dir;
                            b[j * d + c] += m[i] / (m[i] + m[j]) * dir;
                        }
                        out.push(Bend { shift: b, local });
                    }
                }
            }
        }
        out
    }
}

/// Displacement `shift` times a profile vanishing at both ends: `4 rho (1 - rho)`
/// or, when `local = (centre, width)`, a Gaussian of that width normalized to
/// one at the centre.
struct Bend {
    shift: Vector,
    local: Option<(f64, f64)>,
}

impl Bend {
    fn profile(&self, rho: f64) -> (f64, f64) {
        let (p, dp) = (4.0 * rho * (1.0 - rho), 4.0 * (1.0 - 2.0 * rho));
        match self.local {
            None => (p, dp),
            Some((c, w)) => {
                let pc = (4.0 * c * (1.0 - c)).max(1e-12);
                let u = (rho - c) / w;
                let gauss = (-u * u).exp();
                ((p / pc) * gauss, (dp / pc) * gauss - (p / pc) * gauss * 2.0 * u / w)
            }
        }
    }
}

fn norm_slice(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct ActionOptions {
    /// Relative tolerance; `tol_abs = tol max(1, value)`.
    pub tol: f64,
    /// Coarse grid; one refinement to `2 m` follows.
    pub grid: usize,
    pub max_iter: usize,
    /// Re-solve free-time minimizers between regular endpoints by shooting.
    pub polish: bool,
}

impl ActionOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, grid: 64, max_iter: 200, polish: true }
    }

    pub fn grid(mut self, m: usize) -> Self {
        self.grid = m;
        self
    }

    pub fn polish(mut self, p: bool) -> Self {
        self.polish = p;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionResult {
    pub value: f64,
    pub tau: f64,
    pub curve: DiscreteCurve,
    pub grid: usize,
    /// Transcription value on the refined grid.
    pub transcription_value: f64,
    /// `|F_m - F_2m|` between the two grids.
    pub discretization_gap: f64,
    pub polished: bool,
    /// Energy `|v|^2/2 - U` at the transcription knots, deviation from `h`
    /// (free time) or spread (fixed time).
    pub energy_spread: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol_abs: f64,
    pub stats: OptimizerStats,
    /// Initial velocity of the polished motion.
    pub v_start: Option<Vector>,
}

impl ActionResult {
    pub fn within_brackets(&self) -> bool {
        self.lower <= self.value + self.tol_abs && self.value <= self.upper + self.tol_abs
    }
}

fn validate_pair(ms: &MassSystem, x: &Vector, y: &Vector) -> Result<bool> {
    ms.check(x)?;
    ms.check(y)?;
    let (sx, sy) = (ms.collision_pair(x).is_some(), ms.collision_pair(y).is_some());
    if sx && sy {
        return Err(Error::InvalidArgument("both endpoints are collisions".into()));
    }
    Ok(sy)
}

struct Solved {
    value: f64,
    tau: f64,
    z: Vec<f64>,
    m: usize,
    gap: f64,
    spread: f64,
    stats: OptimizerStats,
}

/// Local minimizers from every start, lowest value first.
fn transcribe(tr: &Transcription, opts: &ActionOptions) -> Result<Vec<Solved>> {
    let m = opts.grid.max(2);
    // (starting grid, seed); minimizers from a collision are not unique, so
    // those start from several coarse grids and are continued upwards
    let mut starts: Vec<(usize, Vec<f64>)> = vec![(m, tr.seed(m, None))];
    if tr.singular {
        let mut m0 = 8;
        while m0 < m {
            starts.push((m0, tr.seed(m0, None)));
            m0 *= 2;
        }
    }
    for b in tr.bends(m) {
        starts.push((m, tr.seed(m, Some(&b))));
    }
    let mut found: Vec<Solved> = Vec::new();
    let mut last_err = None;
    for (m0, seed) in starts {
        let attempt = (|| -> Result<Solved> {
            let (mut z, _) = tr.minimize(seed, m0, opts.max_iter)?;
            let mut mc = m0;
            while mc < m {
                z = tr.minimize(tr.refine(&z, mc), 2 * mc, opts.max_iter)?.0;
                mc *= 2;
            }
            let (k1, p1) = tr.values(&z, mc);
            let coarse = tr.objective(k1, p1);
            let (z2, stats) = tr.minimize(tr.refine(&z, mc), 2 * mc, opts.max_iter)?;
            let (k2, p2) = tr.values(&z2, 2 * mc);
            let value = tr.objective(k2, p2);
            let tau = tr.tau(k2, p2);
            let spread = tr.energy_spread(&z2, 2 * mc, tau);
            Ok(Solved { value, tau, z: z2, m: 2 * mc, gap: (coarse - value).abs(), spread, stats })
        })();
        match attempt {
            Ok(s) => {
                found.push(s)
            }
            Err(e) => last_err = Some(e),
        }
    }
    if found.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Optimizer("no seed converged".into())));
    }
    found.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(found)
}

/// Fixed-time minimal action `phi(x, y, tau)`.
pub fn action_fixed_time(ms: &MassSystem, x: &Vector, y: &Vector, tau: f64, grid_m: usize, tol: f64) -> Result<ActionResult> {
    action_fixed_time_with(ms, x, y, tau, &ActionOptions::new(tol).grid(grid_m))
}

pub fn action_fixed_time_with(ms: &MassSystem, x: &Vector, y: &Vector, tau: f64, opts: &ActionOptions) -> Result<ActionResult> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {tau}")));
    }
    let swap = validate_pair(ms, x, y)?;
    let (a, b) = if swap { (y, x) } else { (x, y) };
    let tr = Transcription {
        ms,
        x: a.clone(),
        y: b.clone(),
        singular: ms.collision_pair(a).is_some(),
        mode: Mode::Fixed(tau),
        rule: gauss_legendre_unit(8),
    };
    let s = transcribe(&tr, opts)?.swap_remove(0);
    let mut curve = tr.curve(&s.z, s.m, tau);
    if swap {
        curve = curve.reversed();
    }
    let len = ms.norm(&(y - x));
    let kin = len * len / (2.0 * tau);
    Ok(ActionResult {
        value: s.value,
        tau,
        curve,
        grid: s.m,
        transcription_value: s.value,
        discretization_gap: s.gap,
        polished: false,
        energy_spread: s.spread,
        lower: kin,
        upper: kin + tau * segment_potential_integral(ms, x, y),
        tol_abs: opts.tol * s.value.max(1.0),
        stats: s.stats,
        v_start: None,
    })
}

/// Free-time potential `phi_h(x, y) = min_tau phi(x, y, tau) + h tau`.
pub fn action_free_time(ms: &MassSystem, x: &Vector, y: &Vector, h: f64, tol: f64) -> Result<ActionResult> {
    action_free_time_with(ms, x, y, h, &ActionOptions::new(tol))
}

pub fn action_free_time_with(ms: &MassSystem, x: &Vector, y: &Vector, h: f64, opts: &ActionOptions) -> Result<ActionResult> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("energy must be positive, got {h}")));
    }
    let swap = validate_pair(ms, x, y)?;
    let (a, b) = if swap { (y, x) } else { (x, y) };
    let len = ms.norm(&(y - x));
    let speed = (2.0 * h).sqrt();
    let lower = speed * len;
    let upper = lower + len / speed * segment_potential_integral(ms, x, y);
    if len == 0.0 {
        return Ok(ActionResult {
            value: 0.0,
            tau: 0.0,
            curve: DiscreteCurve { knots: vec![x.clone()], times: vec![0.0] },
            grid: 0,
            transcription_value: 0.0,
            discretization_gap: 0.0,
            polished: false,
            energy_spread: 0.0,
            lower,
            upper,
            tol_abs: opts.tol,
            stats: OptimizerStats::default(),
            v_start: None,
        });
    }
    let singular = ms.collision_pair(a).is_some();
    let tr = Transcription { ms, x: a.clone(), y: b.clone(), singular, mode: Mode::Free(h), rule: gauss_legendre_unit(8) };
    let found = transcribe(&tr, opts)?;
    let s = &found[0];
    let mut result = ActionResult {
        value: s.value,
        tau: s.tau,
        curve: tr.curve(&s.z, s.m, s.tau),
        grid: s.m,
        transcription_value: s.value,
        discretization_gap: s.gap,
        polished: false,
        energy_spread: s.spread,
        lower,
        upper,
        tol_abs: opts.tol * s.value.max(1.0),
        stats: s.stats,
        v_start: None,
    };
    if opts.polish && !singular {
        // the lowest transcription value may sit on a worse resolved branch,
        // so every candidate is shot and the best accepted shot kept
        for c in &found {
            let (_, w0) = tr.knot(&c.z, 0);
            let v0 = w0 / c.tau;
            let mut sr = shoot_free_time(ms, a, b, h, &v0, c.tau, opts.tol);
            // a candidate through a collision cannot be shot; kick it sideways
            for bend in tr.bends(c.m) {
                if sr.is_ok() {
                    break;
                }
                for scale in [1e-2, 1e-1] {
                    let kick = &v0 + &bend.shift * (scale * ms.norm(&v0) / ms.norm(&bend.shift));
                    sr = shoot_free_time(ms, a, b, h, &kick, c.tau, opts.tol);
                    if sr.is_ok() {
                        break;
                    }
                }
            }
            if let Ok(shot) = sr {
                // keep the shot only if it is the same minimizer, not another critical point
                let slack = 10.0 * c.gap + 1e-9 * c.value;
                if shot.value <= c.value + slack && (!result.polished || shot.value < result.value) {
                    result.value = shot.value;
                    result.tau = shot.tau;
                    result.curve = shot.curve;
                    result.polished = true;
                    result.v_start = Some(shot.v0);
                }
            }
        }
    }
    if swap {
        result.curve = result.curve.reversed();
        result.v_start = None;
    }
    result.tol_abs = opts.tol * result.value.max(1.0);
    Ok(result)
}

pub struct Shot {
    pub v0: Vector,
    pub tau: f64,
    /// `int_0^tau (|v|^2/2 + U) dt + h tau`.
    pub value: f64,
    pub curve: DiscreteCurve,
    pub iterations: usize,
}

/// Solves `x(tau) = y` with energy `h` for the initial velocity and the
/// duration by Newton iteration on the flow and its Jacobi fields.
pub fn shoot_free_time(ms: &MassSystem, x: &Vector, y: &Vector, h: f64, v0: &Vector, tau0: f64, tol: f64) -> Result<Shot> {
    let n = ms.len();
    let len = ms.norm(&(y - x));
    let speed0 = (2.0 * (h + ms.potential(x))).sqrt();
    let on_shell = |v: &Vector| -> Vector {
        let nv = ms.norm(v);
        if nv > 0.0 {
            v * (speed0 / nv)
        } else {
            v.clone()
        }
    };
    let zero = DMatrix::zeros(n, n);
    let id = DMatrix::identity(n, n);
    let fopts = FlowOptions::new(1e-12).record(false);
    let run = |v: &Vector, tau: f64, jac: bool| -> Result<crate::flow::Sample> {
        let mut p = Propagator::new(ms, &PhaseState::new(x.clone(), v.clone()), jac.then_some((&zero, &id)), fopts)?;
        p.advance_to(tau)?;
        Ok(p.current())
    };
    let merit = |s: &crate::flow::Sample, v: &Vector, tau: f64| -> f64 {
        let e = 0.5 * ms.inner(v, v) - ms.potential(x) - h;
        ms.norm(&(&s.x - y)) + e.abs() * tau / speed0
    };
    let xtol = (tol * 1e-2).max(1e-11) * len.max(1.0);
    let mut v = on_shell(v0);
    let mut tau = tau0;
    let mut cur = run(&v, tau, true)?;
    let mut res = merit(&cur, &v, tau);
    for it in 0..40 {
        if res <= xtol {
            let fine = {
                let mut p = Propagator::new(ms, &PhaseState::new(x.clone(), v.clone()), None, FlowOptions::new(1e-12))?;
                p.advance_to(tau)?;
                p.into_trajectory()
            };
            let m = 128;
            let knots = (0..=m).map(|k| fine.sample_at(tau * k as f64 / m as f64).0).collect();
            let times = (0..=m).map(|k| tau * k as f64 / m as f64).collect();
            return Ok(Shot {
                v0: v,
                tau,
                value: cur.action + h * tau,
                curve: DiscreteCurve { knots, times },
                iterations: it,
            });
        }
        let js = cur.jacobi.as_ref().unwrap();
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&js.j);
        for r in 0..n {
            jac[(r, n)] = cur.v[r];
            jac[(n, r)] = ms.component_mass(r) * v[r];
        }
        let mut rhs = DVector::zeros(n + 1);
        for r in 0..n {
            rhs[r] = -(cur.x[r] - y[r]);
        }
        rhs[n] = -(0.5 * ms.inner(&v, &v) - ms.potential(x) - h);
        let step = jac.lu().solve(&rhs).ok_or(Error::SingularJacobian)?;
        let dv = Vector::from_column_slice(&step.as_slice()[..n]);
        let dtau = step[n];
        let mut frac = 1.0;
        let mut moved = false;
        for _ in 0..12 {
            let (vt, tt) = (&v + &dv * frac, tau + dtau * frac);
            if tt > 0.0 {
                if let Ok(s) = run(&vt, tt, true) {
                    let r = merit(&s, &vt, tt);
                    if r < res {
                        v = vt;
                        tau = tt;
                        cur = s;
                        res = r;
                        moved = true;
                        break;
                    }
                }
            }
            frac *= 0.5;
        }
        if !moved {
            return Err(Error::Stagnation { residual: res });
        }
    }
    Err(Error::Stagnation { residual: res })
}

#[derive(Debug, Clone, Serialize)]
pub struct Excess {
    pub value: f64,
    pub phi_xy: f64,
    pub phi_yz: f64,
    pub phi_xz: f64,
    pub tol_abs: f64,
}

/// Triangle excess `D(x, y, z) = phi_h(x, y) + phi_h(y, z) - phi_h(x, z)`.
pub fn excess_d(ms: &MassSystem, x: &Vector, y: &Vector, z: &Vector, h: f64, tol: f64) -> Result<Excess> {
    let opts = ActionOptions::new(tol);
    let (xy, (yz, xz)) = rayon::join(
        || action_free_time_with(ms, x, y, h, &opts),
        || rayon::join(|| action_free_time_with(ms, y, z, h, &opts), || action_free_time_with(ms, x, z, h, &opts)),
    );
    let (xy, yz, xz) = (xy?, yz?, xz?);
    Ok(Excess {
        value: xy.value + yz.value - xz.value,
        phi_xy: xy.value,
        phi_yz: yz.value,
        phi_xz: xz.value,
        tol_abs: xy.tol_abs.max(yz.tol_abs).max(xz.tol_abs),
    })
}

/// `k (l - lambda) rho - m` with `k = 2 sqrt(2h)`, `l = 1 - sqrt(1 - beta^2)`
/// and `m = (2 mu / sqrt(2h)) sqrt(1/beta^2 - 1)`, `mu = sup U` on the unit
/// sphere of `C_a(beta)`.
pub fn excess_lower_bound(ms: &MassSystem, a: &Vector, beta: f64, h: f64, rho: f64, lambda: f64) -> Result<f64> {
    let mu = sup_potential_on_cone(ms, a, beta)?;
    let s = (2.0 * h).sqrt();
    let k = 2.0 * s;
    let l = 1.0 - (1.0 - beta * beta).sqrt();
    let m = 2.0 * mu / s * (1.0 / (beta * beta) - 1.0).sqrt();
    Ok(k * (l - lambda) * rho - m)
}

/// Euclidean (mass metric) excess `|s - p| + |q - s| - |q - p|`.
pub fn euclid_excess(ms: &MassSystem, p: &Vector, s: &Vector, q: &Vector) -> f64 {
    ms.norm(&(s - p)) + ms.norm(&(q - s)) - ms.norm(&(q - p))
}

/// Nearest point of `{ x : <x, u> >= alpha |x|, |x| <= e }` (`u` a unit vector).
fn project_cone_ball(ms: &MassSystem, x: &Vector, u: &Vector, alpha: f64, e: f64) -> Vector {
    let t = ms.inner(x, u);
    let w = x - u * t;
    let nw = ms.norm(&w);
    let kappa = (1.0 - alpha * alpha).sqrt() / alpha;
    let p = if nw <= kappa * t {
        x.clone()
    } else if kappa * nw <= -t {
        Vector::zeros(x.len())
    } else {
        let c = (t + kappa * nw) / (1.0 + kappa * kappa);
        u * c + w * (kappa * c / nw)
    };
    let np = ms.norm(&p);
    if np > e {
        p * (e / np)
    } else {
        p
    }
}

/// Nearest point of the unit sphere of `{ cos angle(x, u) = beta }`.
fn project_rim(ms: &MassSystem, x: &Vector, u: &Vector, beta: f64, fallback: &Vector) -> Vector {
    let w = x - u * ms.inner(x, u);
    let nw = ms.norm(&w);
    let dir = if nw > 1e-12 { w / nw } else { fallback.clone() };
    u * beta + dir * (1.0 - beta * beta).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct NuEstimate {
    pub nu: f64,
    pub p: Vector,
    pub s: Vector,
    pub q: Vector,
    pub starts: usize,
}

/// `nu = min E(p, s, q)` over `p, q in C_a(alpha)` with `|p|, |q| <= e` and
/// `s` on the unit sphere of the boundary of `C_a(beta)`, by multistart
/// projected gradient descent.
pub fn excess_nu(ms: &MassSystem, a: &Vector, alpha: f64, beta: f64, e: f64, starts: usize, seed: u64) -> Result<NuEstimate> {
    use rand::SeedableRng;
    if !(beta < alpha && alpha < 1.0 && beta > 0.0 && e > 0.0) {
        return Err(Error::InvalidArgument(format!("need 0 < beta < alpha < 1 and e > 0 (alpha {alpha}, beta {beta}, e {e})")));
    }
    ms.check(a)?;
    let u = a / ms.norm(a);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<NuEstimate> = None;
    let grad_norm = |from: &Vector, to: &Vector| -> Vector {
        // mass gradient of |to - from| with respect to `to`
        let d = to - from;
        let n = ms.norm(&d);
        if n > 0.0 {
            d / n
        } else {
            Vector::zeros(to.len())
        }
    };
    for k in 0..starts.max(1) {
        let fallback = crate::cone::random_direction(ms, &mut rng);
        let mut p = project_cone_ball(ms, &(crate::cone::random_direction(ms, &mut rng) * e + &u * e), &u, alpha, e);
        let mut q = project_cone_ball(ms, &(crate::cone::random_direction(ms, &mut rng) * e + &u * e), &u, alpha, e);
        if k == 0 {
            p = Vector::zeros(a.len());
            q = &u * e;
        }
        let mut s = project_rim(ms, &fallback, &u, beta, &fallback);
        let mut f = euclid_excess(ms, &p, &s, &q);
        let mut step = 0.1 * e;
        for _ in 0..3000 {
            // E = |s - p| + |q - s| - |q - p|
            let gp = -grad_norm(&p, &s) + grad_norm(&p, &q);
            let gs = grad_norm(&p, &s) - grad_norm(&s, &q);
            let gq = grad_norm(&s, &q) - grad_norm(&p, &q);
            let pn = project_cone_ball(ms, &(&p - &gp * step), &u, alpha, e);
            let sn = project_rim(ms, &(&s - &gs * step), &u, beta, &fallback);
            let qn = project_cone_ball(ms, &(&q - &gq * step), &u, alpha, e);
            let fnew = euclid_excess(ms, &pn, &sn, &qn);
            if fnew < f {
                p = pn;
                s = sn;
                q = qn;
                f = fnew;
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-13 * e {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|b| f < b.nu) {
            best = Some(NuEstimate { nu: f, p, s, q, starts });
        }
    }
    Ok(best.unwrap())
}
