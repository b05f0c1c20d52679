//! Run configuration: a single JSON document, validated before any work starts.

use hyperbolic_core::{MassSystem, Vector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub masses: Vec<f64>,
    pub dimension: usize,
    /// Flat configurations, body by body.
    #[serde(default)]
    pub configurations: Vec<Vec<f64>>,
    /// Initial velocities matching `configurations` (`limit-shape`, `chazy`).
    #[serde(default)]
    pub velocities: Vec<Vec<f64>>,
    /// Target limit shape.
    #[serde(default)]
    pub limit_shape: Option<Vec<f64>>,
    /// Energy; derived from the limit shape when absent.
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default)]
    pub cone: ConeConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub horizons: Horizons,
    /// Index pairs into `configurations` for `action`.
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
    /// Fixed duration for `action`; only the free-time potential when absent.
    #[serde(default)]
    pub duration: Option<f64>,
    /// Seed of the stochastic multistarts; the suite default when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    /// Aperture; defaults to `alpha0 + 0.75 (1 - alpha0)`.
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub integrator: f64,
    pub shooting: f64,
    pub action: f64,
    pub busemann: f64,
    /// Schedule `lambda_n`; the default geometric schedule when empty.
    pub busemann_schedule: Vec<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { integrator: 1e-10, shooting: 1e-10, action: 1e-8, busemann: 1e-9, busemann_schedule: Vec::new() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Horizons {
    /// End time of emitted rays.
    pub ray: f64,
    /// End time of the `chazy` run.
    pub chazy: f64,
}

impl Default for Horizons {
    fn default() -> Self {
        Self { ray: 200.0, chazy: 1e4 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Also write CSV tables next to the JSON report.
    pub csv: bool,
    /// Acceptance criteria run by `verify`; all when empty.
    pub criteria: Vec<usize>,
    /// Starts of the two-branch probe in `verify`.
    pub probe_starts: Option<usize>,
}

/// A validated configuration with its mass system and hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub raw: RunConfig,
    pub ms: MassSystem,
    pub points: Vec<Vector>,
    pub velocities: Vec<Vector>,
    /// Limit shape rescaled to `|a| = sqrt(2h)`.
    pub a: Option<Vector>,
    pub h: Option<f64>,
    pub sha256: String,
}

pub fn load(path: &str) -> Result<Loaded, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Read { path: path.to_string(), source })?;
    let raw: RunConfig = serde_json::from_slice(&bytes)?;
    let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    validate(raw, sha256)
}

fn vector(ms: &MassSystem, c: &[f64], what: &str) -> Result<Vector, ConfigError> {
    if c.len() != ms.len() {
        return Err(ConfigError::Invalid(format!("{what} has {} components, expected {}", c.len(), ms.len())));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(ConfigError::Invalid(format!("{what} has a non-finite component")));
    }
    Ok(Vector::from_column_slice(c))
}

pub fn validate(raw: RunConfig, sha256: String) -> Result<Loaded, ConfigError> {
    let ms = MassSystem::new(raw.masses.clone(), raw.dimension).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let points = raw
        .configurations
        .iter()
        .enumerate()
        .map(|(k, c)| vector(&ms, c, &format!("configurations[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let velocities = raw
        .velocities
        .iter()
        .enumerate()
        .map(|(k, c)| vector(&ms, c, &format!("velocities[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    if !velocities.is_empty() && velocities.len() != points.len() {
        return Err(ConfigError::Invalid(format!(
            "{} velocities for {} configurations",
            velocities.len(),
            points.len()
        )));
    }
    if let Some(h) = raw.energy {
        if !(h > 0.0 && h.is_finite()) {
            return Err(ConfigError::Invalid(format!("energy must be positive, got {h}")));
        }
    }
    let (a, h) = match &raw.limit_shape {
        Some(c) => {
            let a = vector(&ms, c, "limit_shape")?;
            if let Some((i, j)) = ms.collision_pair(&a) {
                return Err(ConfigError::Invalid(format!("limit_shape has a collision between bodies {i} and {j}")));
            }
            let na = ms.norm(&a);
            match raw.energy {
                Some(h) => {
                    let want = (2.0 * h).sqrt();
                    if (na - want).abs() > 1e-8 * want {
                        return Err(ConfigError::Invalid(format!(
                            "limit_shape norm {na} disagrees with energy {h} (expected sqrt(2h) = {want})"
                        )));
                    }
                    (Some(a * (want / na)), Some(h))
                }
                None => (Some(a), Some(0.5 * na * na)),
            }
        }
        None => (None, raw.energy),
    };
    for [i, j] in &raw.pairs {
        if *i >= points.len() || *j >= points.len() {
            return Err(ConfigError::Invalid(format!("pair [{i}, {j}] outside the {} configurations", points.len())));
        }
    }
    if let Some(alpha) = raw.cone.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("cone.alpha must lie in (0, 1), got {alpha}")));
        }
    }
    if let Some(eps) = raw.cone.eps {
        if !(eps > 0.0) {
            return Err(ConfigError::Invalid(format!("cone.eps must be positive, got {eps}")));
        }
    }
    let t = &raw.tolerances;
    for (name, v) in [("integrator", t.integrator), ("shooting", t.shooting), ("action", t.action), ("busemann", t.busemann)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(ConfigError::Invalid(format!("tolerances.{name} must lie in (0, 1), got {v}")));
        }
    }
    if t.busemann_schedule.windows(2).any(|w| !(w[1] > w[0])) || t.busemann_schedule.iter().any(|l| !(*l > 0.0)) {
        return Err(ConfigError::Invalid("tolerances.busemann_schedule must be positive and increasing".into()));
    }
    if !(raw.horizons.ray > 0.0 && raw.horizons.chazy > 1.0) {
        return Err(ConfigError::Invalid("horizons must be positive (chazy > 1)".into()));
    }
    if let Some(d) = raw.duration {
        if !(d > 0.0) {
            return Err(ConfigError::Invalid(format!("duration must be positive, got {d}")));
        }
    }
    Ok(Loaded { raw, ms, points, velocities, a, h, sha256 })
}

impl Loaded {
    pub fn require_a(&self) -> Result<(&Vector, f64), ConfigError> {
        match (&self.a, self.h) {
            (Some(a), Some(h)) => Ok((a, h)),
            _ => Err(ConfigError::Invalid("this command needs limit_shape".into())),
        }
    }

    /// At least `n` configurations; collisions are rejected when `regular`.
    pub fn require_points(&self, n: usize, regular: bool) -> Result<&[Vector], ConfigError> {
        if self.points.len() < n {
            return Err(ConfigError::Invalid(format!("this command needs at least {n} configurations")));
        }
        for (k, p) in self.points.iter().enumerate().filter(|_| regular) {
            if let Some((i, j)) = self.ms.collision_pair(p) {
                return Err(ConfigError::Invalid(format!("configurations[{k}] has a collision between bodies {i} and {j}")));
            }
        }
        Ok(&self.points)
    }
}
