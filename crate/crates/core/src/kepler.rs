//! Closed-form two-body hyperbolic motion.
//!
//! The relative coordinate `r = r_2 - r_1` obeys `r'' = -mu r / |r|^3` with
//! `mu = m_1 + m_2`; the barycentre moves uniformly. All conic geometry is done
//! in the orbital plane, embedded back into the ambient dimension.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::PhaseState;
use crate::system::{MassSystem, Vector};

type V2 = [f64; 2];

fn dot2(a: V2, b: V2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross2(a: V2, b: V2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn rot90(a: V2) -> V2 {
    [-a[1], a[0]]
}

fn norm2(a: V2) -> f64 {
    dot2(a, a).sqrt()
}

fn scale2(a: V2, s: f64) -> V2 {
    [a[0] * s, a[1] * s]
}

/// Barycentric split of a two-body state.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBodySplit {
    pub com: Vec<f64>,
    pub com_velocity: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

fn require_two(ms: &MassSystem) -> Result<()> {
    if ms.n_bodies() != 2 {
        return Err(Error::Kepler(format!("needs exactly 2 bodies, got {}", ms.n_bodies())));
    }
    Ok(())
}

pub fn split(ms: &MassSystem, x: &Vector, v: &Vector) -> Result<TwoBodySplit> {
    require_two(ms)?;
    ms.check(x)?;
    ms.check(v)?;
    let d = ms.dim();
    let (m1, m2) = (ms.masses()[0], ms.masses()[1]);
    let mt = m1 + m2;
    let com = (0..d).map(|c| (m1 * x[c] + m2 * x[d + c]) / mt).collect();
    let com_velocity = (0..d).map(|c| (m1 * v[c] + m2 * v[d + c]) / mt).collect();
    let r = (0..d).map(|c| x[d + c] - x[c]).collect();
    let w = (0..d).map(|c| v[d + c] - v[c]).collect();
    Ok(TwoBodySplit { com, com_velocity, r, w })
}

/// Inverse of [`split`].
pub fn join(ms: &MassSystem, com: &[f64], r: &[f64]) -> Vector {
    let d = ms.dim();
    let (m1, m2) = (ms.masses()[0], ms.masses()[1]);
    let mt = m1 + m2;
    let mut x = Vector::zeros(2 * d);
    for c in 0..d {
        x[c] = com[c] - m2 / mt * r[c];
        x[d + c] = com[c] + m1 / mt * r[c];
    }
    x
}

/// Orthonormal pair spanning `u` and `w` (or completing `u` when they are
/// parallel).
fn plane_basis(u: &[f64], w: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let nu = u.iter().map(|c| c * c).sum::<f64>().sqrt();
    if nu == 0.0 {
        return None;
    }
    let e1: Vec<f64> = u.iter().map(|c| c / nu).collect();
    let proj: f64 = w.iter().zip(&e1).map(|(a, b)| a * b).sum();
    let mut e2: Vec<f64> = w.iter().zip(&e1).map(|(a, b)| a - proj * b).collect();
    let mut n2 = e2.iter().map(|c| c * c).sum::<f64>().sqrt();
    let wn = w.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n2 <= 1e-13 * wn.max(1e-300) || wn == 0.0 {
        // any direction orthogonal to e1
        let k = (0..e1.len()).min_by(|&a, &b| e1[a].abs().total_cmp(&e1[b].abs())).unwrap();
        e2 = vec![0.0; e1.len()];
        e2[k] = 1.0;
        let p = e1[k];
        e2.iter_mut().zip(&e1).for_each(|(a, b)| *a -= p * b);
        n2 = e2.iter().map(|c| c * c).sum::<f64>().sqrt();
    }
    e2.iter_mut().for_each(|c| *c /= n2);
    Some((e1, e2))
}

fn to_plane(p: &[f64], e1: &[f64], e2: &[f64]) -> V2 {
    [
        p.iter().zip(e1).map(|(a, b)| a * b).sum(),
        p.iter().zip(e2).map(|(a, b)| a * b).sum(),
    ]
}

fn from_plane(q: V2, e1: &[f64], e2: &[f64]) -> Vec<f64> {
    e1.iter().zip(e2).map(|(a, b)| q[0] * a + q[1] * b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeplerElements {
    pub masses: [f64; 2],
    /// Gravitational parameter `m_1 + m_2`.
    pub mu: f64,
    /// Specific relative energy `|w|^2/2 - mu/|r|`.
    pub specific_energy: f64,
    /// Total energy `|v|^2/2 - U` of the full configuration.
    pub energy: f64,
    /// Signed angular momentum of the relative motion in the orbital plane.
    pub angular_momentum: f64,
    pub eccentricity: f64,
    /// `mu / (2 eps)`.
    pub semi_major: f64,
    pub rectilinear: bool,
    /// Orbital plane basis (ambient components).
    pub plane: (Vec<f64>, Vec<f64>),
    /// Unit periapsis direction in plane coordinates (the radial direction for
    /// rectilinear motion).
    pub periapsis: V2,
    pub outgoing: V2,
    pub incoming: V2,
    /// Hyperbolic anomaly of the anchor state.
    pub anomaly0: f64,
    pub com0: Vec<f64>,
    pub com_velocity: Vec<f64>,
    pub dim: usize,
}

/// Conic elements of a two-body state with positive relative energy.
pub fn kepler_elements(ms: &MassSystem, x: &Vector, v: &Vector) -> Result<KeplerElements> {
    let s = split(ms, x, v)?;
    let (m1, m2) = (ms.masses()[0], ms.masses()[1]);
    let mu = m1 + m2;
    let (e1, e2) = plane_basis(&s.r, &s.w).ok_or_else(|| Error::Kepler("bodies coincide".into()))?;
    let r = to_plane(&s.r, &e1, &e2);
    let w = to_plane(&s.w, &e1, &e2);
    let rn = norm2(r);
    let eps = 0.5 * dot2(w, w) - mu / rn;
    if !(eps > 1e-12 * mu / rn) {
        return Err(Error::Kepler(format!("relative energy {eps:.3e} is not positive (not a hyperbola)")));
    }
    let energy = ms.energy(x, v)?;
    let am = cross2(r, w);
    let a = mu / (2.0 * eps);
    let n = (mu / a.powi(3)).sqrt();
    let rw = dot2(r, w);
    let rectilinear = am.abs() <= 1e-13 * rn * norm2(w);
    if rectilinear {
        let dir = scale2(r, 1.0 / rn);
        // r = a (cosh F - 1), sign of F from the radial velocity
        let f0 = (1.0 + rn / a).acosh() * rw.signum();
        return Ok(KeplerElements {
            masses: [m1, m2],
            mu,
            specific_energy: eps,
            energy,
            angular_momentum: 0.0,
            eccentricity: 1.0,
            semi_major: a,
            rectilinear,
            plane: (e1, e2),
            periapsis: dir,
            outgoing: dir,
            incoming: scale2(dir, -1.0),
            anomaly0: f0,
            com0: s.com,
            com_velocity: s.com_velocity,
            dim: ms.dim(),
        });
    }
    // Laplace-Runge-Lenz vector
    let ev = [
        ((dot2(w, w) - mu / rn) * r[0] - rw * w[0]) / mu,
        ((dot2(w, w) - mu / rn) * r[1] - rw * w[1]) / mu,
    ];
    let e = norm2(ev);
    let p = scale2(ev, 1.0 / e);
    let q = scale2(rot90(p), am.signum());
    let f0 = (rw / (e * (mu * a).sqrt())).asinh();
    let k = a * n / e;
    let g = (e * e - 1.0).sqrt();
    let outgoing = [k * (-p[0] + g * q[0]), k * (-p[1] + g * q[1])];
    let incoming = [k * (p[0] + g * q[0]), k * (p[1] + g * q[1])];
    let un = |u: V2| scale2(u, 1.0 / norm2(u));
    Ok(KeplerElements {
        masses: [m1, m2],
        mu,
        specific_energy: eps,
        energy,
        angular_momentum: am,
        eccentricity: e,
        semi_major: a,
        rectilinear,
        plane: (e1, e2),
        periapsis: p,
        outgoing: un(outgoing),
        incoming: un(incoming),
        anomaly0: f0,
        com0: s.com,
        com_velocity: s.com_velocity,
        dim: ms.dim(),
    })
}

/// Solves `e sinh F - F = m` (with `e = 1` covering the rectilinear law).
pub fn solve_hyperbolic_anomaly(e: f64, m: f64) -> Result<f64> {
    if m == 0.0 {
        return Ok(0.0);
    }
    let sgn = m.signum();
    let ma = m.abs();
    let g = |f: f64| e * f.sinh() - f - ma;
    let mut hi = 1.0f64;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0f64;
    // log-based guess for large anomalies avoids evaluating huge sinh values
    let series = if e > 1.0 { ma / (e - 1.0) } else { f64::INFINITY };
    let mut f = if ma > 5.0 { (2.0 * ma / e).ln() } else { series.min((6.0 * ma / e).cbrt()) };
    f = f.clamp(lo, hi);
    for _ in 0..200 {
        let val = g(f);
        if val > 0.0 {
            hi = hi.min(f);
        } else {
            lo = lo.max(f);
        }
        let der = e * f.cosh() - 1.0;
        let mut next = f - val / der;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - f).abs() <= 1e-15 * f.abs().max(1.0);
        f = next;
        if done {
            return Ok(sgn * f);
        }
    }
    Err(Error::Kepler(format!("anomaly solve did not converge for e = {e}, M = {m}")))
}

impl KeplerElements {
    fn mean_motion(&self) -> f64 {
        (self.mu / self.semi_major.powi(3)).sqrt()
    }

    fn mean_anomaly(&self, f: f64) -> f64 {
        self.eccentricity * f.sinh() - f
    }

    /// Relative state in plane coordinates at hyperbolic anomaly `f`.
    fn relative_at_anomaly(&self, f: f64) -> (V2, V2) {
        let (a, e) = (self.semi_major, self.eccentricity);
        let n = self.mean_motion();
        let fdot = n / (e * f.cosh() - 1.0);
        if self.rectilinear {
            let rr = a * (f.cosh() - 1.0);
            let rd = a * f.sinh() * fdot;
            let u = self.periapsis;
            return (scale2(u, rr), scale2(u, rd));
        }
        let p = self.periapsis;
        let q = scale2(rot90(p), self.angular_momentum.signum());
        let g = (e * e - 1.0).sqrt();
        let (xp, yp) = (a * (e - f.cosh()), a * g * f.sinh());
        let (vx, vy) = (-a * f.sinh() * fdot, a * g * f.cosh() * fdot);
        (
            [xp * p[0] + yp * q[0], xp * p[1] + yp * q[1]],
            [vx * p[0] + vy * q[0], vx * p[1] + vy * q[1]],
        )
    }

    fn assemble(&self, t: f64, r: V2, w: V2) -> PhaseState {
        let d = self.dim;
        let (m1, m2) = (self.masses[0], self.masses[1]);
        let mt = m1 + m2;
        let (e1, e2) = (&self.plane.0, &self.plane.1);
        let ra = from_plane(r, e1, e2);
        let wa = from_plane(w, e1, e2);
        let mut x = Vector::zeros(2 * d);
        let mut v = Vector::zeros(2 * d);
        for c in 0..d {
            let com = self.com0[c] + self.com_velocity[c] * t;
            x[c] = com - m2 / mt * ra[c];
            x[d + c] = com + m1 / mt * ra[c];
            v[c] = self.com_velocity[c] - m2 / mt * wa[c];
            v[d + c] = self.com_velocity[c] + m1 / mt * wa[c];
        }
        PhaseState { x, v, t }
    }

    /// Exact state at time `t` after the anchor.
    pub fn propagate(&self, t: f64) -> Result<PhaseState> {
        let n = self.mean_motion();
        let m = self.mean_anomaly(self.anomaly0) + n * t;
        let f = solve_hyperbolic_anomaly(self.eccentricity, m)?;
        if self.rectilinear && (f == 0.0 || f.signum() != self.anomaly0.signum()) {
            return Err(Error::Kepler("rectilinear motion passes through collision".into()));
        }
        let (r, w) = self.relative_at_anomaly(f);
        Ok(self.assemble(t, r, w))
    }

    /// Asymptotic velocity (limit shape) of the full configuration.
    pub fn limit_shape(&self) -> Vector {
        let speed = (2.0 * self.specific_energy).sqrt();
        let w = scale2(self.outgoing, speed);
        self.assemble(0.0, [0.0, 0.0], w).v
    }

    /// Action `int (|v|^2/2 + U) dt` over `[0, t]` along the exact motion.
    ///
    /// Closed form through `d/dt (r . w) = 2 eps + mu / r`.
    pub fn action(&self, t: f64) -> Result<f64> {
        let s0 = self.propagate(0.0)?;
        let s1 = self.propagate(t)?;
        let (m1, m2) = (self.masses[0], self.masses[1]);
        let mt = m1 + m2;
        let mred = m1 * m2 / mt;
        let rw = |s: &PhaseState| {
            let d = self.dim;
            (0..d).map(|c| (s.x[d + c] - s.x[c]) * (s.v[d + c] - s.v[c])).sum::<f64>()
        };
        // L_rel = |w|^2/2 + mu/r = eps + 2 mu / r and (r.w)' = 2 eps + mu/r,
        // hence int L_rel = 2 (r.w)|_0^t - 3 eps t.
        let rel = 2.0 * (rw(&s1) - rw(&s0)) - 3.0 * self.specific_energy * t;
        let vc2: f64 = self.com_velocity.iter().map(|c| c * c).sum();
        Ok(mred * rel + 0.5 * mt * vc2 * t)
    }
}

pub fn kepler_propagate(elems: &KeplerElements, t: f64) -> Result<PhaseState> {
    elems.propagate(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeplerBranch {
    pub v: Vector,
    pub angular_momentum: f64,
    pub rectilinear: bool,
    /// The whole forward motion stays inside some cone around `a`.
    pub confined: bool,
    /// `min_t cos angle(x(t), a)` along the forward motion.
    pub min_cosine: f64,
}

/// Initial velocities at `x0` whose forward motion has limit shape `a`.
///
/// With `c = (r0 x w_inf)` and `D = mu (|r0| - w_inf_hat . r0)`, the angular
/// momentum solves `h^2 - c h - D = 0`; then `e = h (w_inf x k)/mu - w_inf_hat`
/// and `w0 = (mu / h) k x (e + r0_hat)`. On the positive axis `D = 0` leaves the
/// single rectilinear solution.
pub fn kepler_branches(ms: &MassSystem, x0: &Vector, a: &Vector) -> Result<Vec<KeplerBranch>> {
    let s = split(ms, x0, a)?;
    let mu = ms.total_mass();
    let (e1, e2) = plane_basis(&s.w, &s.r).ok_or_else(|| Error::Kepler("target limit shape has no relative motion".into()))?;
    let w_inf = to_plane(&s.w, &e1, &e2);
    let r0 = to_plane(&s.r, &e1, &e2);
    let rn = norm2(r0);
    if rn == 0.0 {
        return Err(Error::Collision { i: 0, j: 1 });
    }
    let speed = norm2(w_inf);
    let wh = scale2(w_inf, 1.0 / speed);
    let eps = 0.5 * speed * speed;
    let c = cross2(r0, w_inf);
    let dd = mu * (rn - dot2(wh, r0));
    let a0 = ms.alpha0(a)?.max(0.0);
    let mut out = Vec::new();
    let disc = (c * c + 4.0 * dd).max(0.0).sqrt();
    let on_axis = dd <= 1e-14 * mu * rn && c.abs() <= 1e-14 * rn * speed;
    let roots: Vec<f64> = if on_axis { vec![0.0] } else { vec![0.5 * (c + disc), 0.5 * (c - disc)] };
    for h in roots {
        let w0 = if h == 0.0 {
            scale2(r0, (2.0 * eps + 2.0 * mu / rn).sqrt() / rn)
        } else {
            let wxk = [w_inf[1], -w_inf[0]];
            let ev = [h * wxk[0] / mu - wh[0], h * wxk[1] / mu - wh[1]];
            let sum = [ev[0] + r0[0] / rn, ev[1] + r0[1] / rn];
            scale2(rot90(sum), mu / h)
        };
        let wa = from_plane(w0, &e1, &e2);
        let d = ms.dim();
        let (m1, m2) = (ms.masses()[0], ms.masses()[1]);
        let mut v = Vector::zeros(2 * d);
        for k in 0..d {
            v[k] = s.com_velocity[k] - m2 / mu * wa[k];
            v[d + k] = s.com_velocity[k] + m1 / mu * wa[k];
        }
        let elems = kepler_elements(ms, x0, &v)?;
        let min_cosine = min_cosine_along(ms, &elems, a)?;
        out.push(KeplerBranch {
            v,
            angular_momentum: h,
            rectilinear: h == 0.0,
            confined: min_cosine > a0,
            min_cosine,
        });
    }
    Ok(out)
}

/// Smallest cosine between `x(t)` and `a` over the forward motion, scanned on
/// a dense anomaly grid running out to the asymptotic regime.
fn min_cosine_along(ms: &MassSystem, elems: &KeplerElements, a: &Vector) -> Result<f64> {
    let f0 = elems.anomaly0;
    let n = elems.mean_motion();
    let m0 = elems.mean_anomaly(f0);
    let mut best = f64::INFINITY;
    let steps = 4000;
    let f_end = f0.max(0.0) + 40.0;
    for k in 0..=steps {
        let f = f0 + (f_end - f0) * k as f64 / steps as f64;
        if elems.rectilinear && f <= 0.0 {
            continue;
        }
        let t = (elems.mean_anomaly(f) - m0) / n;
        let (r, w) = elems.relative_at_anomaly(f);
        let st = elems.assemble(t, r, w);
        best = best.min(ms.cosine(&st.x, a));
    }
    Ok(best)
}
