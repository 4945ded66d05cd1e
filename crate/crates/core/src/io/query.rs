//! Synthetic query clouds: uniform surface samples plus optional noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{Point3, PointCloud};
use crate::grammar::{ModelFamily, ParamVector};

fn default_side() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Adds `multiplier` times the clean point count, uniformly inside an
    /// axis-aligned cube centered on the clean centroid.
    UniformCube {
        #[serde(default = "default_side")]
        side: f64,
        multiplier: f64,
    },
    /// Perturbs every point with isotropic Gaussian noise.
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), IoError> {
        let ok = match *self {
            NoiseSpec::UniformCube { side, multiplier } => {
                side >= 0.0 && multiplier >= 0.0 && side.is_finite() && multiplier.is_finite()
            }
            NoiseSpec::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(IoError::Config(format!(
                "negative or non-finite noise magnitude in {self:?}"
            )))
        }
    }
}

/// Samples the instantiated model at `resolution` and applies `noise` in
/// order. Deterministic for a given seed.
pub fn synthesize_query(
    family: &ModelFamily,
    params: &ParamVector,
    resolution: f64,
    noise: &[NoiseSpec],
    seed: u64,
) -> Result<PointCloud, IoError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(IoError::Config(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    for n in noise {
        n.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = family.instantiate(params)?;
    let mut points: Vec<Point3> = prims
        .iter()
        .flat_map(|p| p.sample_uniform(resolution, &mut rng))
        .collect();
    let clean = points.len();
    let centroid = PointCloud::new(points.clone())
        .centroid()
        .unwrap_or_else(Point3::origin);
    for spec in noise {
        match *spec {
            NoiseSpec::UniformCube { side, multiplier } => {
                let extra = (multiplier * clean as f64).round() as usize;
                let half = 0.5 * side;
                for _ in 0..extra {
                    let mut p = centroid;
                    for a in 0..3 {
                        p[a] += if half > 0.0 { rng.gen_range(-half..half) } else { 0.0 };
                    }
                    points.push(p);
                }
            }
            NoiseSpec::Gaussian { sigma } => {
                if sigma > 0.0 {
                    let normal = Normal::new(0.0, sigma).expect("validated sigma");
                    for p in &mut points {
                        for a in 0..3 {
                            p[a] += normal.sample(&mut rng);
                        }
                    }
                }
            }
        }
    }
    Ok(PointCloud::new(points).with_resolution(resolution))
}
