//! Masses, configurations and the Newtonian potential.
//!
//! Configurations are flat vectors of length `N*d`, body `i` occupying
//! components `i*d .. (i+1)*d`. Every norm and inner product is the mass one,
//! `<x, y> = sum_i m_i <x_i, y_i>`, and gradients are taken with respect to it
//! so that Newton's equations read `x'' = grad U(x)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Configuration = Vector;
pub type TangentVector = Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSystem {
    masses: Vec<f64>,
    dim: usize,
}

impl MassSystem {
    pub fn new(masses: Vec<f64>, dim: usize) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidSystem(format!("need at least 2 bodies, got {}", masses.len())));
        }
        if dim < 2 {
            return Err(Error::InvalidSystem(format!("spatial dimension must be >= 2, got {dim}")));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidSystem(format!("masses must be positive and finite, got {m}")));
        }
        Ok(Self { masses, dim })
    }

    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of a flat configuration vector.
    pub fn len(&self) -> usize {
        self.masses.len() * self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of the body owning flat component `k`.
    pub fn component_mass(&self, k: usize) -> f64 {
        self.masses[k / self.dim]
    }

    pub fn check(&self, x: &Vector) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Shape { expected: self.len(), got: x.len() });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite component".into()));
        }
        Ok(())
    }

    pub fn from_points(&self, points: &[Vec<f64>]) -> Result<Vector> {
        if points.len() != self.n_bodies() || points.iter().any(|p| p.len() != self.dim) {
            return Err(Error::Shape {
                expected: self.len(),
                got: points.iter().map(Vec::len).sum(),
            });
        }
        Ok(Vector::from_iterator(self.len(), points.iter().flatten().copied()))
    }

    pub fn to_points(&self, x: &Vector) -> Vec<Vec<f64>> {
        x.as_slice().chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn inner(&self, x: &Vector, y: &Vector) -> f64 {
        let d = self.dim;
        x.iter()
            .zip(y.iter())
            .enumerate()
            .map(|(k, (a, b))| self.masses[k / d] * a * b)
            .sum()
    }

    /// Checked form of [`MassSystem::inner`].
    pub fn mass_inner(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.inner(x, y))
    }

    pub fn norm(&self, x: &Vector) -> f64 {
        self.inner(x, x).sqrt()
    }

    /// Euclidean vector `M x` (the covector of `x`).
    pub fn lower(&self, x: &Vector) -> Vector {
        let d = self.dim;
        Vector::from_fn(x.len(), |k, _| self.masses[k / d] * x[k])
    }

    /// Squared distance between bodies `i` and `j`.
    pub fn dist2(&self, x: &Vector, i: usize, j: usize) -> f64 {
        let d = self.dim;
        (0..d).map(|c| (x[j * d + c] - x[i * d + c]).powi(2)).sum()
    }

    /// Smallest mutual distance and the pair realizing it.
    pub fn min_distance(&self, x: &Vector) -> (f64, usize, usize) {
        let n = self.n_bodies();
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..n {
            for j in i + 1..n {
                let r = self.dist2(x, i, j).sqrt();
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        best
    }

    /// Whether some relative position `r_j - r_i` turns by more than a right
    /// angle from `x` to `y` while the chord between the two passes within a
    /// quarter of the shorter endpoint distance of the collision.
    pub fn pair_reverses(&self, x: &Vector, y: &Vector) -> bool {
        let (n, d) = (self.n_bodies(), self.dim());
        for i in 0..n {
            for j in i + 1..n {
                let p: Vec<f64> = (0..d).map(|c| x[j * d + c] - x[i * d + c]).collect();
                let q: Vec<f64> = (0..d).map(|c| y[j * d + c] - y[i * d + c]).collect();
                let dot: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
                if dot >= 0.0 {
                    continue;
                }
                let e: Vec<f64> = q.iter().zip(&p).map(|(b, a)| b - a).collect();
                let ee: f64 = e.iter().map(|v| v * v).sum();
                let s = (-p.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ee).clamp(0.0, 1.0);
                let closest: f64 = p.iter().zip(&e).map(|(a, b)| (a + s * b).powi(2)).sum::<f64>().sqrt();
                let (np, nq) = (p.iter().map(|v| v * v).sum::<f64>(), q.iter().map(|v| v * v).sum::<f64>());
                if closest < 0.25 * np.min(nq).sqrt() {
                    return true;
                }
            }
        }
        false
    }

    pub fn collision_pair(&self, x: &Vector) -> Option<(usize, usize)> {
        let (r, i, j) = self.min_distance(x);
        (r == 0.0).then_some((i, j))
    }

    fn require_regular(&self, x: &Vector) -> Result<()> {
        self.check(x)?;
        match self.collision_pair(x) {
            Some((i, j)) => Err(Error::Collision { i, j }),
            None => Ok(()),
        }
    }

    /// `U(x) = sum_{i<j} m_i m_j / r_ij`; `+inf` on the collision set.
    pub fn potential(&self, x: &Vector) -> f64 {
        let n = self.n_bodies();
        let mut u = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r2 = self.dist2(x, i, j);
                if r2 == 0.0 {
                    return f64::INFINITY;
                }
                u += self.masses[i] * self.masses[j] / r2.sqrt();
            }
        }
        u
    }

    /// Mass-metric gradient without the collision check.
    pub(crate) fn gradient_unchecked(&self, x: &Vector, out: &mut [f64]) {
        let (n, d) = (self.n_bodies(), self.dim);
        out.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let r2 = self.dist2(x, i, j);
                let inv3 = 1.0 / (r2 * r2.sqrt());
                for c in 0..d {
                    let dc = (x[j * d + c] - x[i * d + c]) * inv3;
                    out[i * d + c] += self.masses[j] * dc;
                    out[j * d + c] -= self.masses[i] * dc;
                }
            }
        }
    }

    /// `grad U(x)`: component `i` is `sum_{j != i} m_j (r_j - r_i) / r_ij^3`.
    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.require_regular(x)?;
        let mut g = Vector::zeros(x.len());
        self.gradient_unchecked(x, g.as_mut_slice());
        Ok(g)
    }

    /// `HU(x) xi`, the mass-metric Hessian operator applied to `xi`.
    pub fn hessian_apply(&self, x: &Vector, xi: &Vector) -> Result<Vector> {
        self.require_regular(x)?;
        self.check(xi)?;
        let (n, d) = (self.n_bodies(), self.dim);
        let mut out = Vector::zeros(x.len());
        for i in 0..n {
            for j in i + 1..n {
                let r2 = self.dist2(x, i, j);
                let r = r2.sqrt();
                let inv3 = 1.0 / (r2 * r);
                let inv5 = inv3 / r2;
                let mut proj = 0.0;
                for c in 0..d {
                    let dc = x[j * d + c] - x[i * d + c];
                    proj += dc * (xi[i * d + c] - xi[j * d + c]);
                }
                for c in 0..d {
                    let dc = x[j * d + c] - x[i * d + c];
                    let rel = xi[i * d + c] - xi[j * d + c];
                    let w = 3.0 * dc * proj * inv5 - rel * inv3;
                    out[i * d + c] += self.masses[j] * w;
                    out[j * d + c] -= self.masses[i] * w;
                }
            }
        }
        Ok(out)
    }

    /// Euclidean Hessian matrix of `U` (second derivatives in flat coordinates).
    pub fn euclidean_hessian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        self.require_regular(x)?;
        let mut h = DMatrix::zeros(x.len(), x.len());
        self.euclidean_hessian_into(x, &mut h);
        Ok(h)
    }

    pub(crate) fn euclidean_hessian_into(&self, x: &Vector, h: &mut DMatrix<f64>) {
        let (n, d) = (self.n_bodies(), self.dim);
        h.fill(0.0);
        for i in 0..n {
            for j in i + 1..n {
                let r2 = self.dist2(x, i, j);
                let r = r2.sqrt();
                let mm = self.masses[i] * self.masses[j];
                let inv3 = mm / (r2 * r);
                let inv5 = inv3 / r2;
                for a in 0..d {
                    let da = x[j * d + a] - x[i * d + a];
                    for b in 0..d {
                        let db = x[j * d + b] - x[i * d + b];
                        let mut v = 3.0 * da * db * inv5;
                        if a == b {
                            v -= inv3;
                        }
                        h[(i * d + a, i * d + b)] += v;
                        h[(j * d + a, j * d + b)] += v;
                        h[(i * d + a, j * d + b)] -= v;
                        h[(j * d + a, i * d + b)] -= v;
                    }
                }
            }
        }
    }

    /// Matrix of the operator `HU(x)` (rows of body `i` divided by `m_i`).
    pub fn hessian_matrix(&self, x: &Vector) -> Result<DMatrix<f64>> {
        let mut h = self.euclidean_hessian(x)?;
        for k in 0..x.len() {
            let m = self.component_mass(k);
            h.row_mut(k).scale_mut(1.0 / m);
        }
        Ok(h)
    }

    /// Operator norm of `HU(x)` in the mass metric, by 20 steps of power
    /// iteration on the self-adjoint operator `HU^2`.
    pub fn hessian_norm(&self, x: &Vector) -> Result<f64> {
        self.require_regular(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut q = Vector::from_fn(x.len(), |_, _| rng.random::<f64>() - 0.5);
        let mut est = 0.0;
        for _ in 0..20 {
            let nq = self.norm(&q);
            if nq == 0.0 {
                return Ok(0.0);
            }
            q /= nq;
            let hq = self.hessian_apply(x, &q)?;
            let h2q = self.hessian_apply(x, &hq)?;
            est = self.inner(&q, &h2q).max(0.0).sqrt();
            q = h2q;
        }
        Ok(est)
    }

    /// `H = |v|^2 / 2 - U(x)`.
    pub fn energy(&self, x: &Vector, v: &Vector) -> Result<f64> {
        self.require_regular(x)?;
        self.check(v)?;
        Ok(0.5 * self.inner(v, v) - self.potential(x))
    }

    /// Largest cosine between `a` and a collision configuration; the aperture
    /// below which the cone around `a` meets the collision set.
    ///
    /// The mass-orthogonal projection onto `{r_i = r_j}` replaces both bodies
    /// by their barycentre, removing `m_i m_j / (m_i + m_j) |a_i - a_j|^2` from
    /// the squared norm.
    pub fn alpha0(&self, a: &Vector) -> Result<f64> {
        self.require_regular(a)?;
        let n2 = self.inner(a, a);
        let n = self.n_bodies();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let (mi, mj) = (self.masses[i], self.masses[j]);
                let removed = mi * mj / (mi + mj) * self.dist2(a, i, j);
                best = best.max(((n2 - removed) / n2).max(0.0).sqrt());
            }
        }
        Ok(best)
    }

    /// Projection of `x` onto the collision subspace `{r_i = r_j}`.
    pub fn project_collision(&self, x: &Vector, i: usize, j: usize) -> Vector {
        let d = self.dim;
        let (mi, mj) = (self.masses[i], self.masses[j]);
        let mut p = x.clone();
        for c in 0..d {
            let bary = (mi * x[i * d + c] + mj * x[j * d + c]) / (mi + mj);
            p[i * d + c] = bary;
            p[j * d + c] = bary;
        }
        p
    }

    /// Cosine of the mass angle between `x` and `y`.
    pub fn cosine(&self, x: &Vector, y: &Vector) -> f64 {
        self.inner(x, y) / (self.norm(x) * self.norm(y))
    }

    /// Centre-of-mass position of configuration `x`.
    pub fn centre_of_mass(&self, x: &Vector) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d];
        for (i, m) in self.masses.iter().enumerate() {
            for k in 0..d {
                c[k] += m * x[i * d + k];
            }
        }
        let total = self.total_mass();
        c.iter_mut().for_each(|v| *v /= total);
        c
    }
}

/// Free-function spelling of [`MassSystem::mass_inner`].
pub fn mass_inner(ms: &MassSystem, x: &Vector, y: &Vector) -> Result<f64> {
    ms.mass_inner(x, y)
}

pub fn potential(ms: &MassSystem, x: &Vector) -> f64 {
    ms.potential(x)
}

pub fn potential_gradient(ms: &MassSystem, x: &Vector) -> Result<Vector> {
    ms.gradient(x)
}

pub fn hessian_apply(ms: &MassSystem, x: &Vector, xi: &Vector) -> Result<Vector> {
    ms.hessian_apply(x, xi)
}

pub fn energy(ms: &MassSystem, x: &Vector, v: &Vector) -> Result<f64> {
    ms.energy(x, v)
}

pub fn alpha0(ms: &MassSystem, a: &Vector) -> Result<f64> {
    ms.alpha0(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two() -> MassSystem {
        MassSystem::new(vec![1.0, 1.0], 2).unwrap()
    }

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    #[test]
    fn rejects_bad_systems() {
        assert!(MassSystem::new(vec![1.0], 2).is_err());
        assert!(MassSystem::new(vec![1.0, 1.0], 1).is_err());
        assert!(MassSystem::new(vec![1.0, -1.0], 2).is_err());
        assert!(MassSystem::new(vec![1.0, f64::NAN], 3).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let ms = MassSystem::new(vec![2.0, 3.0], 2).unwrap();
        let x = v(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(ms.mass_inner(&x, &x).unwrap(), 5.0);
        let y = v(&[0.0, 1.0, 0.0, 0.0]);
        let z = v(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ms.mass_inner(&z, &y).unwrap(), 0.0);
        assert!(ms.mass_inner(&v(&[1.0]), &y).is_err());
        assert_relative_eq!(ms.norm(&z), 2f64.sqrt());
    }

    #[test]
    fn potential_examples() {
        let ms = two();
        let x = v(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ms.potential(&x), 1.0);
        assert_eq!(ms.potential(&(&x * 2.0)), 0.5);
        let tri = MassSystem::new(vec![1.0; 3], 2).unwrap();
        let s = 3f64.sqrt() / 2.0;
        let t = v(&[0.0, 0.0, 1.0, 0.0, 0.5, s]);
        assert_relative_eq!(tri.potential(&t), 3.0, epsilon = 1e-14);
        assert_eq!(ms.potential(&v(&[1.0, 1.0, 1.0, 1.0])), f64::INFINITY);
    }

    #[test]
    fn gradient_examples() {
        let ms = two();
        let x = v(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ms.gradient(&x).unwrap(), v(&[1.0, 0.0, -1.0, 0.0]));
        assert_eq!(ms.gradient(&(&x * 2.0)).unwrap(), v(&[0.25, 0.0, -0.25, 0.0]));
        assert_eq!(
            ms.gradient(&v(&[0.0, 0.0, 0.0, 0.0])),
            Err(Error::Collision { i: 0, j: 1 })
        );
    }

    #[test]
    fn euler_identity_example() {
        let ms = two();
        let x = v(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ms.hessian_apply(&x, &x).unwrap(), v(&[-2.0, 0.0, 2.0, 0.0]));
    }

    #[test]
    fn hessian_matrix_matches_operator() {
        let ms = MassSystem::new(vec![1.0, 2.0, 0.5], 3).unwrap();
        let x = v(&[0.1, 0.2, -0.3, 1.0, -0.4, 0.2, -0.7, 0.9, 0.5]);
        let xi = v(&[0.3, -0.1, 0.2, 0.5, 0.4, -0.6, 0.1, 0.1, 0.9]);
        let m = ms.hessian_matrix(&x).unwrap();
        let a = ms.hessian_apply(&x, &xi).unwrap();
        assert_relative_eq!(m * &xi, a, epsilon = 1e-12);
    }

    #[test]
    fn energy_examples() {
        let ms = two();
        let x = v(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ms.energy(&x, &Vector::zeros(4)).unwrap(), -1.0);
        let vel = v(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ms.inner(&vel, &vel), 1.0);
        let vel = v(&[1.0, 0.0, -1.0, 0.0]);
        assert_eq!(ms.energy(&x, &vel).unwrap(), 0.0);
    }

    #[test]
    fn alpha0_examples() {
        let ms = two();
        assert_eq!(ms.alpha0(&v(&[-1.0, 0.0, 1.0, 0.0])).unwrap(), 0.0);
        assert_relative_eq!(ms.alpha0(&v(&[0.0, 0.0, 1.0, 0.0])).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(ms.alpha0(&v(&[1.0, 0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn projection_matches_alpha0_pair_formula() {
        let ms = MassSystem::new(vec![1.0, 3.0, 2.0], 2).unwrap();
        let a = v(&[0.3, -1.0, 1.2, 0.4, -0.5, 0.8]);
        let na = ms.norm(&a);
        let best = (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .map(|(i, j)| ms.norm(&ms.project_collision(&a, i, j)) / na)
            .fold(0.0, f64::max);
        assert_relative_eq!(ms.alpha0(&a).unwrap(), best, epsilon = 1e-14);
    }

    #[test]
    fn power_iteration_tracks_spectral_norm() {
        let ms = MassSystem::new(vec![1.0, 2.0, 0.5], 2).unwrap();
        let x = v(&[0.1, 0.2, 1.0, -0.4, -0.7, 0.9]);
        // symmetric form M^{1/2} HU M^{-1/2} shares the spectrum of HU
        let h = ms.euclidean_hessian(&x).unwrap();
        let s = Vector::from_fn(6, |k, _| 1.0 / ms.component_mass(k).sqrt());
        let sym = DMatrix::from_fn(6, 6, |i, j| s[i] * h[(i, j)] * s[j]);
        let exact = sym.symmetric_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let est = ms.hessian_norm(&x).unwrap();
        assert!(est <= exact * (1.0 + 1e-12));
        assert!(est >= 0.95 * exact, "{est} vs {exact}");
    }
}
