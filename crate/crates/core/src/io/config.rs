//! TOML run configurations. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, CloudFormat, IoError, NoiseSpec};
use crate::engine::FitConfig;
use crate::experiments::SweepMetric;
use crate::grammar::{FamilyId, ModelFamily, ParamKind, ParamVector, StructureConfig};
use crate::metrics::MetricConfig;

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, IoError> {
    toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))
}

fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    parse_toml(&read_text(path)?)
}

/// Resolves `p` against the directory holding the config file.
fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

fn build_family(
    id: FamilyId,
    structure: &StructureConfig,
    bounds: &BTreeMap<String, ParamKind>,
) -> Result<ModelFamily, IoError> {
    if !(structure.outer_len > 0.0 && structure.floor_height > 0.0) {
        return Err(IoError::Config("outer_len and floor_height must be positive".into()));
    }
    if !(0.0..0.5).contains(&structure.min_gap_fraction) {
        return Err(IoError::Config("min_gap_fraction must lie in [0, 0.5)".into()));
    }
    let mut family = ModelFamily::new(id);
    family.structure = structure.clone();
    for (name, kind) in bounds {
        if !family.bounds.contains_key(name) {
            return Err(IoError::Config(format!("family {id} has no parameter named {name:?}")));
        }
        let ok = match kind {
            ParamKind::Continuous { min, max } => min.is_finite() && max.is_finite() && min < max,
            ParamKind::Discrete { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if !ok {
            return Err(IoError::Config(format!("empty or invalid bounds for {name:?}")));
        }
        family.bounds.insert(name.clone(), kind.clone());
    }
    Ok(family)
}

fn default_snapshot_level() -> u32 {
    5
}

/// Configuration of a single fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilyId,
    #[serde(default)]
    pub structure: StructureConfig,
    /// Prior bounds overriding the family defaults, by parameter name.
    #[serde(default)]
    pub bounds: BTreeMap<String, ParamKind>,
    #[serde(default)]
    pub fit: FitConfig,
    pub query: PathBuf,
    pub query_format: Option<CloudFormat>,
    /// Dividing level of OBJ snapshots.
    #[serde(default = "default_snapshot_level")]
    pub snapshot_level: u32,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        let cfg: RunConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates; a relative query path is taken relative to the
    /// config file.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let mut cfg: RunConfig = load(path)?;
        cfg.query = relative_to(path, &cfg.query);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.fit.validate().map_err(|e| IoError::Config(e.to_string()))?;
        if self.snapshot_level < 1 {
            return Err(IoError::Config("snapshot_level must be at least 1".into()));
        }
        self.model_family().map(|_| ())
    }

    pub fn model_family(&self) -> Result<ModelFamily, IoError> {
        build_family(self.family, &self.structure, &self.bounds)
    }

    pub fn query_format(&self) -> CloudFormat {
        self.query_format
            .or_else(|| CloudFormat::from_path(&self.query))
            .unwrap_or(CloudFormat::Xyz)
    }
}

fn default_format() -> CloudFormat {
    CloudFormat::Xyz
}

/// Configuration for synthesizing a query cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub family: FamilyId,
    #[serde(default)]
    pub structure: StructureConfig,
    #[serde(default)]
    pub bounds: BTreeMap<String, ParamKind>,
    /// Parameter values by full trace key, e.g. `"frame/x"`.
    pub params: BTreeMap<String, f64>,
    pub resolution: f64,
    #[serde(default)]
    pub noise: Vec<NoiseSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_format")]
    pub format: CloudFormat,
}

impl GenerateConfig {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        let cfg: GenerateConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let cfg: GenerateConfig = load(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(IoError::Config(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        for n in &self.noise {
            n.validate()?;
        }
        let family = self.model_family()?;
        family.instantiate(&self.param_vector())?;
        Ok(())
    }

    pub fn model_family(&self) -> Result<ModelFamily, IoError> {
        build_family(self.family, &self.structure, &self.bounds)
    }

    pub fn param_vector(&self) -> ParamVector {
        let mut p = ParamVector::new(self.family);
        for (k, v) in &self.params {
            p.set(k.as_str(), *v);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Full trace key of the swept parameter.
    pub param: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e10).round() / 1e10)
            .collect()
    }
}

fn default_fixture_x() -> f64 {
    1.0
}

fn default_query_resolution() -> f64 {
    0.02
}

/// A query for a sweep: either a built-in family sampled on the cell-center
/// grid at `x` (the swept parameter), or a point-cloud file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySource {
    pub family: Option<FamilyId>,
    #[serde(default = "default_fixture_x")]
    pub x: f64,
    #[serde(default = "default_query_resolution")]
    pub resolution: f64,
    pub path: Option<PathBuf>,
    pub format: Option<CloudFormat>,
}

impl QuerySource {
    pub fn fixture(family: FamilyId) -> Self {
        Self {
            family: Some(family),
            x: default_fixture_x(),
            resolution: default_query_resolution(),
            path: None,
            format: None,
        }
    }

    pub fn label(&self) -> String {
        match (&self.family, &self.path) {
            (Some(f), _) => f.to_string(),
            (None, Some(p)) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "query".into()),
            (None, None) => "query".into(),
        }
    }

    fn validate(&self) -> Result<(), IoError> {
        if self.family.is_some() == self.path.is_some() {
            return Err(IoError::Config("each query needs exactly one of family or path".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(IoError::Config("query resolution must be positive".into()));
        }
        Ok(())
    }
}

fn default_model_resolution() -> f64 {
    0.01
}

fn default_metrics() -> Vec<SweepMetric> {
    SweepMetric::ALL.to_vec()
}

/// Configuration of a one-parameter similarity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub models: Vec<FamilyId>,
    pub queries: Vec<QuerySource>,
    pub grid: GridSpec,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<SweepMetric>,
    /// Fixed values of every other parameter, by full trace key.
    #[serde(default)]
    pub base_params: BTreeMap<String, f64>,
    #[serde(default = "default_model_resolution")]
    pub model_resolution: f64,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub structure: StructureConfig,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        let cfg: SweepConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let mut cfg: SweepConfig = load(path)?;
        for q in &mut cfg.queries {
            if let Some(p) = &mut q.path {
                *p = relative_to(path, p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.models.is_empty() || self.queries.is_empty() || self.metrics.is_empty() {
            return Err(IoError::Config("models, queries and metrics must be non-empty".into()));
        }
        let g = &self.grid;
        if !(g.step > 0.0 && g.min <= g.max && g.min.is_finite() && g.max.is_finite()) {
            return Err(IoError::Config(format!("invalid grid {g:?}")));
        }
        if !(self.model_resolution > 0.0) {
            return Err(IoError::Config("model_resolution must be positive".into()));
        }
        if !(self.metric.epsilon > 0.0 && self.metric.h >= 0.0 && self.metric.vd_resolution > 0.0) {
            return Err(IoError::Config(
                "metric epsilon and vd_resolution must be positive, h non-negative".into(),
            ));
        }
        for q in &self.queries {
            q.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;

    #[test]
    fn run_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            family = "sphere"
            query = "q.xyz"
            [fit]
            delta = 0.04
            h = 10.0
            budget = 100
            "#,
        )
        .unwrap();
        assert_eq!(cfg.fit.h, 10.0);
        assert_eq!(cfg.fit.beta, 0.8);
        assert_eq!(cfg.fit.metric, MetricKind::Wmm);
        assert_eq!(cfg.query_format(), CloudFormat::Xyz);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("family = \"sphere\"\nquery = \"q.xyz\"\n[fit]\nsigmma = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("sigmma"), "{err}");
        assert!(RunConfig::from_toml("family = \"sphere\"\nquery = \"q\"\ncolour = 1\n").is_err());
    }

    #[test]
    fn bounds_override_and_validation() {
        let cfg =
            RunConfig::from_toml("family = \"frame_full\"\nquery = \"q\"\n[bounds]\nx = { min = 0.5, max = 1.5 }\n")
                .unwrap();
        let fam = cfg.model_family().unwrap();
        assert_eq!(fam.bounds["x"], ParamKind::Continuous { min: 0.5, max: 1.5 });
        assert!(RunConfig::from_toml(
            "family = \"frame_full\"\nquery = \"q\"\n[bounds]\nradius = { min = 0.5, max = 1.5 }\n"
        )
        .is_err());
        assert!(
            RunConfig::from_toml("family = \"frame_full\"\nquery = \"q\"\n[bounds]\nx = { min = 2, max = 1 }\n")
                .is_err()
        );
    }

    #[test]
    fn full_building_config() {
        let cfg = RunConfig::from_toml(
            r#"
            family = "building_1f"
            query = "scan.xyz"
            snapshot_level = 4
            [structure]
            floor_height = 2.5
            windows_per_floor = 5
            [bounds]
            height = { min = 4.5, max = 9.0 }
            [fit]
            metric = "smm"
            h = 2.5
            epsilon = 1e-8
            delta = 0.1
            beta = 0.8
            sigma = 0.05
            budget = 50000
            n_chains = 2
            temperatures = [1.0, 1.5]
            swap_probability = 0.1
            seed = 1
            early_rejection = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.fit.metric, MetricKind::Smm);
        assert_eq!(cfg.model_family().unwrap().structure.windows_per_floor, 5);
        assert_eq!(cfg.snapshot_level, 4);
    }

    #[test]
    fn invalid_fit_values_rejected() {
        assert!(RunConfig::from_toml("family = \"sphere\"\nquery = \"q\"\n[fit]\nbeta = 2.0\n").is_err());
    }

    #[test]
    fn generate_config_with_noise() {
        let cfg = GenerateConfig::from_toml(
            r#"
            family = "sphere"
            resolution = 0.2
            params = { "sphere/cx" = 0.0, "sphere/cy" = 0.0, "sphere/cz" = 0.0, "sphere/radius" = 1.0 }
            noise = [{ kind = "uniform_cube", multiplier = 1.0 }, { kind = "gaussian", sigma = 0.2 }]
            "#,
        )
        .unwrap();
        assert_eq!(
            cfg.noise[0],
            NoiseSpec::UniformCube {
                side: 2.0,
                multiplier: 1.0
            }
        );
        assert!(GenerateConfig::from_toml("family = \"sphere\"\nresolution = 0.2\nparams = {}\n").is_err());
    }

    #[test]
    fn sweep_grid_values() {
        let g = GridSpec {
            param: "frame/x".into(),
            min: 0.1,
            max: 2.0,
            step: 0.1,
        };
        let v = g.values();
        assert_eq!(v.len(), 20);
        assert_eq!(v[9], 1.0);
        assert_eq!(v[19], 2.0);
    }

    #[test]
    fn sweep_config_query_sources() {
        let cfg = SweepConfig::from_toml(
            r#"
            models = ["frame_full"]
            queries = [{ family = "frame_1q" }, { path = "scan.xyz" }]
            metrics = ["wmm", "shd"]
            grid = { param = "frame/x", min = 0.1, max = 2.0, step = 0.1 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.queries[0].label(), "frame_1q");
        assert_eq!(cfg.queries[1].label(), "scan");
        assert_eq!(cfg.model_resolution, 0.01);
        let both = "models = [\"frame_full\"]\nqueries = [{ family = \"frame_1q\", path = \"a.xyz\" }]\ngrid = { param = \"frame/x\", min = 0.1, max = 2.0, step = 0.1 }\n";
        assert!(SweepConfig::from_toml(both).is_err());
    }
}
