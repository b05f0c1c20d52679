//! Truncated cones around a collision-free axis and their constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{MassSystem, Vector};

/// `C_a(alpha, r) = { x : <x, a> >= alpha |x| |a|, |x| >= r }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub axis: Vector,
    pub alpha: f64,
    pub r: f64,
}

impl ConeSpec {
    pub fn new(ms: &MassSystem, axis: Vector, alpha: f64, r: f64) -> Result<Self> {
        ms.check(&axis)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("aperture must lie in (0, 1), got {alpha}")));
        }
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("truncation radius must be >= 0, got {r}")));
        }
        if let Some((i, j)) = ms.collision_pair(&axis) {
            return Err(Error::Collision { i, j });
        }
        Ok(Self { axis, alpha, r })
    }

    pub fn unit_axis(&self, ms: &MassSystem) -> Vector {
        &self.axis / ms.norm(&self.axis)
    }

    /// Signed membership margin; non-negative exactly on the cone.
    pub fn margin(&self, ms: &MassSystem, x: &Vector) -> f64 {
        let nx = ms.norm(x);
        let ang = ms.inner(x, &self.axis) / ms.norm(&self.axis) - self.alpha * nx;
        ang.min(nx - self.r)
    }

    pub fn contains(&self, ms: &MassSystem, x: &Vector) -> bool {
        let nx = ms.norm(x);
        ms.inner(x, &self.axis) >= self.alpha * nx * ms.norm(&self.axis) && nx >= self.r
    }

    /// Nearest point of the unit sphere intersected with the (untruncated) cone.
    pub fn project_unit(&self, ms: &MassSystem, y: &Vector) -> Vector {
        let ah = self.unit_axis(ms);
        let ny = ms.norm(y);
        let c = ms.inner(y, &ah);
        if ny > 0.0 && c >= self.alpha * ny {
            return y / ny;
        }
        let mut u = y - &ah * c;
        let mut nu = ms.norm(&u);
        if nu <= 1e-300 {
            u = orthogonal_direction(ms, &ah);
            nu = 1.0;
        }
        &ah * self.alpha + u * ((1.0 - self.alpha * self.alpha).sqrt() / nu)
    }

    /// Random unit-norm configuration in the cone; `boundary` forces the
    /// aperture to be exactly `alpha`.
    pub fn random_unit<R: Rng>(&self, ms: &MassSystem, rng: &mut R, boundary: bool) -> Vector {
        let ah = self.unit_axis(ms);
        let mut u = random_direction(ms, rng);
        u -= &ah * ms.inner(&u, &ah);
        let nu = ms.norm(&u);
        let u = if nu > 1e-12 { u / nu } else { orthogonal_direction(ms, &ah) };
        let theta_max = self.alpha.acos();
        // uniform in cos keeps samples spread toward the rim
        let c = if boundary { self.alpha } else { self.alpha + (1.0 - self.alpha) * rng.random::<f64>() };
        let theta = c.acos().min(theta_max);
        &ah * theta.cos() + u * theta.sin()
    }

    /// Random point of `C_a(alpha, r)` with norm in `[r_lo, r_hi]`.
    pub fn sample<R: Rng>(&self, ms: &MassSystem, rng: &mut R, r_lo: f64, r_hi: f64) -> Vector {
        let lo = r_lo.max(self.r);
        let rad = lo + (r_hi.max(lo) - lo) * rng.random::<f64>();
        self.random_unit(ms, rng, false) * rad
    }
}

/// Mass-normalized Gaussian-like random direction.
pub fn random_direction<R: Rng>(ms: &MassSystem, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(ms.len(), |k, _| {
            let g: f64 = (0..6).map(|_| rng.random::<f64>()).sum::<f64>() - 3.0;
            g / ms.component_mass(k).sqrt()
        });
        let n = ms.norm(&v);
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Random point of the mass ball `B(center, radius)`.
pub fn sample_ball<R: Rng>(ms: &MassSystem, rng: &mut R, center: &Vector, radius: f64) -> Vector {
    let dir = random_direction(ms, rng);
    let rad = radius * rng.random::<f64>().powf(1.0 / ms.len() as f64);
    center + dir * rad
}

fn orthogonal_direction(ms: &MassSystem, ah: &Vector) -> Vector {
    for k in 0..ms.len() {
        let mut e = Vector::zeros(ms.len());
        e[k] = 1.0;
        e -= ah * ms.inner(&e, ah);
        let n = ms.norm(&e);
        if n > 1e-6 {
            return e / n;
        }
    }
    unreachable!("configuration space has dimension >= 4")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeConstants {
    pub alpha: f64,
    pub eps: f64,
    pub delta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub r0: f64,
}

/// `sup |grad U|` over the unit sphere of `C_a(alpha)`.
///
/// Multistart projected gradient ascent of `|grad U|^2`, whose mass gradient
/// is `2 HU grad U`. Seeds are the axis, the rim points facing each collision
/// subspace, and random rim and interior points.
pub fn sup_gradient_on_cone(ms: &MassSystem, a: &Vector, alpha: f64) -> Result<f64> {
    let best = sup_on_cone(ms, a, alpha, |x| {
        let g = ms.gradient(x)?;
        let hg = ms.hessian_apply(x, &g)?;
        Ok((ms.inner(&g, &g), hg * 2.0))
    })?;
    Ok(best.sqrt())
}

/// `sup U` over the unit sphere of `C_a(alpha)`, by the same ascent.
pub fn sup_potential_on_cone(ms: &MassSystem, a: &Vector, alpha: f64) -> Result<f64> {
    sup_on_cone(ms, a, alpha, |x| Ok((ms.potential(x), ms.gradient(x)?)))
}

/// `sup sum_{i<j} 2 (m_i + m_j) / r_ij^3` over the unit sphere of `C_a(alpha)`.
/// The sum bounds `|HU(x)|` in the mass metric, pair by pair.
pub fn sup_hessian_bound_on_cone(ms: &MassSystem, a: &Vector, alpha: f64) -> Result<f64> {
    sup_on_cone(ms, a, alpha, |x| Ok(pair_hessian_bound(ms, x)))
}

/// `sum_{i<j} 2 (m_i + m_j) / r_ij^3` and its mass gradient.
pub fn pair_hessian_bound(ms: &MassSystem, x: &Vector) -> (f64, Vector) {
    let (n, d) = (ms.n_bodies(), ms.dim());
    let m = ms.masses();
    let mut b = 0.0;
    let mut g = Vector::zeros(x.len());
    for i in 0..n {
        for j in i + 1..n {
            let r2 = ms.dist2(x, i, j);
            let r = r2.sqrt();
            let c = 2.0 * (m[i] + m[j]);
            b += c / (r2 * r);
            for k in 0..d {
                let dx = x[i * d + k] - x[j * d + k];
                let f = -3.0 * c * dx / (r2 * r2 * r);
                g[i * d + k] += f / m[i];
                g[j * d + k] -= f / m[j];
            }
        }
    }
    (b, g)
}

fn sup_on_cone<F>(ms: &MassSystem, a: &Vector, alpha: f64, objective: F) -> Result<f64>
where
    F: Fn(&Vector) -> Result<(f64, Vector)>,
{
    let cone = ConeSpec::new(ms, a.clone(), alpha, 0.0)?;
    let a0 = ms.alpha0(a)?;
    if alpha <= a0 {
        return Err(Error::InvalidArgument(format!(
            "aperture {alpha} does not exceed alpha0 = {a0}; the cone meets the collision set"
        )));
    }
    let ah = cone.unit_axis(ms);
    let mut seeds = vec![ah.clone()];
    let n = ms.n_bodies();
    for i in 0..n {
        for j in i + 1..n {
            let p = ms.project_collision(&ah, i, j);
            let dir = &p - &ah * ms.inner(&p, &ah);
            seeds.push(cone.project_unit(ms, &(&ah * (alpha * 0.5) + dir)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c0e);
    for k in 0..48 {
        seeds.push(cone.random_unit(ms, &mut rng, k % 2 == 0));
    }
    let mut best: f64 = 0.0;
    for seed in seeds {
        let mut x = seed;
        let (mut f, mut grad) = objective(&x)?;
        let mut step = 0.05;
        for _ in 0..400 {
            let ng = ms.norm(&grad);
            if ng == 0.0 {
                break;
            }
            let cand = cone.project_unit(ms, &(&x + &grad * (step / ng)));
            let (fc, gc) = objective(&cand)?;
            if fc > f {
                x = cand;
                f = fc;
                grad = gc;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
        best = best.max(f);
    }
    Ok(best)
}

/// Constants of the cone `C_a(alpha)` for the velocity tolerance `eps`:
/// `delta` is the largest radius `<= alpha |a| / 4` with `B(a, 2 delta)` inside
/// the cone, `lambda = alpha |a| - 2 delta`, `mu = sup |grad U|` on the unit
/// sphere of the cone and `r0 = 2 mu / (lambda min(eps, delta))`.
pub fn cone_constants(ms: &MassSystem, a: &Vector, alpha: f64, eps: f64) -> Result<ConeConstants> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mu = sup_gradient_on_cone(ms, a, alpha)?;
    let na = ms.norm(a);
    let delta = (na * (1.0 - alpha * alpha).sqrt() / 2.0).min(alpha * na / 4.0);
    let lambda = alpha * na - 2.0 * delta;
    let r0 = 2.0 * mu / (lambda * eps.min(delta));
    Ok(ConeConstants { alpha, eps, delta, lambda, mu, r0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    #[test]
    fn membership_basics() {
        let ms = MassSystem::new(vec![1.0, 2.0], 2).unwrap();
        let a = v(&[-1.0, 0.3, 0.6, 0.1]);
        let cone = ConeSpec::new(&ms, a.clone(), 0.99, 0.0).unwrap();
        assert!(cone.contains(&ms, &a));
        assert!(!cone.contains(&ms, &(-&a)));
        let trunc = ConeSpec::new(&ms, a.clone(), 0.5, 10.0).unwrap();
        assert!(!trunc.contains(&ms, &a));
        assert!(trunc.contains(&ms, &(&a * 20.0)));
        assert!(ConeSpec::new(&ms, a.clone(), 1.0, 0.0).is_err());
    }

    #[test]
    fn projection_lands_on_sphere_and_cone() {
        let ms = MassSystem::new(vec![1.0, 2.0, 0.7], 2).unwrap();
        let a = v(&[-1.0, 0.3, 0.6, 0.1, 0.2, -0.9]);
        let cone = ConeSpec::new(&ms, a.clone(), 0.8, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let y = random_direction(&ms, &mut rng) * 3.0;
            let p = cone.project_unit(&ms, &y);
            assert_relative_eq!(ms.norm(&p), 1.0, epsilon = 1e-12);
            assert!(cone.margin(&ms, &p) >= -1e-12);
        }
    }

    #[test]
    fn pair_bound_dominates_hessian() {
        let ms = MassSystem::new(vec![1.0, 2.0, 0.7], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_direction(&ms, &mut rng) * 3.0;
            let (b, g) = pair_hessian_bound(&ms, &x);
            assert!(ms.hessian_norm(&x).unwrap() <= b * (1.0 + 1e-12));
            let e = random_direction(&ms, &mut rng);
            let s = 1e-6;
            let fd = (pair_hessian_bound(&ms, &(&x + &e * s)).0 - pair_hessian_bound(&ms, &(&x - &e * s)).0) / (2.0 * s);
            assert_relative_eq!(fd, ms.inner(&g, &e), max_relative = 1e-5);
        }
    }

    #[test]
    fn lambda_formula() {
        // alpha = 0.9, |a| = 2, delta = 0.1
        assert_relative_eq!(0.9 * 2.0 - 2.0 * 0.1, 1.6, epsilon = 1e-15);
    }

    #[test]
    fn mu_two_body_closed_form() {
        // |grad U|^2 = m1 m2 (m1 + m2) / r^4 and r >= alpha |a| on the unit sphere
        let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let a = v(&[-1.0, 0.0, 1.0, 0.0]);
        let mu = sup_gradient_on_cone(&ms, &a, 0.5).unwrap();
        assert_relative_eq!(mu, 2.0 * 2f64.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn mu_matches_dense_sampling() {
        let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let a = v(&[-1.0, 0.0, 1.0, 0.0]);
        let cone = ConeSpec::new(&ms, a.clone(), 0.5, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut best: f64 = 0.0;
        for k in 0..200_000 {
            let x = cone.random_unit(&ms, &mut rng, k % 4 == 0);
            let g = ms.gradient(&x).unwrap();
            best = best.max(ms.norm(&g));
        }
        let mu = sup_gradient_on_cone(&ms, &a, 0.5).unwrap();
        assert!(mu >= best * (1.0 - 1e-9));
        assert!((mu - best).abs() <= 0.01 * mu, "{mu} vs {best}");
    }

    #[test]
    fn sup_potential_two_body() {
        // U = 1 / r_12 and r_12 >= alpha sqrt(2) on the unit sphere of the cone
        let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let a = v(&[-1.0, 0.0, 1.0, 0.0]);
        let mu = sup_potential_on_cone(&ms, &a, 0.6).unwrap();
        assert_relative_eq!(mu, 1.0 / (0.6 * 2f64.sqrt()), max_relative = 1e-9);
    }

    #[test]
    fn constants_reject_small_aperture() {
        let ms = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let a = v(&[0.0, 0.0, 1.0, 0.0]);
        assert!(cone_constants(&ms, &a, 0.5, 0.1).is_err());
        let c = cone_constants(&ms, &a, 0.9, 0.1).unwrap();
        assert!(c.lambda > 0.0 && c.delta <= 0.9 * ms.norm(&a) / 4.0 + 1e-15);
        assert_relative_eq!(c.r0, 2.0 * c.mu / (c.lambda * 0.1f64.min(c.delta)));
    }
}
