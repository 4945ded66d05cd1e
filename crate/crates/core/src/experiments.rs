//! Built-in fixtures and experiment drivers: similarity sweeps over one
//! parameter, the frame similarity matrix, sphere and facade queries, and
//! the early-rejection A/B run.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_fit, EngineError, FitConfig, FitResult, ModelPosterior, Posterior};
use crate::geometry::{model_gamma, sampling_level, Point3, PointCloud, Primitive};
use crate::grammar::{FamilyId, GrammarError, ModelFamily, ParamVector};
use crate::io::config::SweepConfig;
use crate::io::{csv_bytes, read_cloud, synthesize_query, CloudFormat, IoError, NoiseSpec};
use crate::metrics::{
    default_ir_threshold, ir, normalize_curve, ohdqm, shd_indexed, similarity, vd, MetricConfig, MetricKind,
    MetricsError, NormalizedCurve, SampledModel,
};
use crate::spatial_index::{IndexError, NnIndex};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub const FRAME_QUERY_RESOLUTION: f64 = 0.02;
pub const FRAME_MODEL_RESOLUTION: f64 = 0.01;
pub const FRAME_FAMILIES: [FamilyId; 4] = [
    FamilyId::FrameFull,
    FamilyId::Frame3q,
    FamilyId::Frame2q,
    FamilyId::Frame1q,
];

pub fn frame_params(id: FamilyId, x: f64) -> ParamVector {
    ParamVector::new(id).with("frame/x", x)
}

/// The model divided at the level whose cell side first drops to
/// `resolution`.
pub fn grid_model(family: &ModelFamily, params: &ParamVector, resolution: f64) -> Result<SampledModel, GrammarError> {
    let prims = family.instantiate(params)?;
    let level = sampling_level(model_gamma(&prims), resolution);
    Ok(SampledModel::from_primitives(&prims, level))
}

/// Cell centers of [`grid_model`] as a query cloud.
pub fn grid_cloud(family: &ModelFamily, params: &ParamVector, resolution: f64) -> Result<PointCloud, GrammarError> {
    Ok(grid_model(family, params, resolution)?
        .centers()
        .with_resolution(resolution))
}

/// Frame query sampled at `x` on the cell-center grid.
pub fn frame_query(id: FamilyId, x: f64, resolution: f64) -> PointCloud {
    let family = ModelFamily::new(id);
    grid_cloud(&family, &frame_params(id, x), resolution).expect("frame parameters in bounds")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMetric {
    Wmm,
    Mm,
    Smm,
    Shd,
    Ohdqm,
    Vd,
    Ir,
}

impl SweepMetric {
    pub const ALL: [SweepMetric; 7] = [
        SweepMetric::Wmm,
        SweepMetric::Mm,
        SweepMetric::Smm,
        SweepMetric::Shd,
        SweepMetric::Ohdqm,
        SweepMetric::Vd,
        SweepMetric::Ir,
    ];

    /// Column name; distances are stored negated so larger is better for
    /// every column.
    pub fn column(self) -> &'static str {
        match self {
            SweepMetric::Wmm => "wmm",
            SweepMetric::Mm => "mm",
            SweepMetric::Smm => "smm",
            SweepMetric::Shd => "neg_shd",
            SweepMetric::Ohdqm => "neg_ohdqm",
            SweepMetric::Vd => "neg_vd",
            SweepMetric::Ir => "ir",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub model: FamilyId,
    pub query: String,
    pub param: String,
    pub xs: Vec<f64>,
    pub metrics: Vec<SweepMetric>,
    /// `raw[m][i]` is metric `m` at `xs[i]`.
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<NormalizedCurve>,
}

impl SweepTable {
    pub fn column(&self, metric: SweepMetric) -> Option<&[f64]> {
        let m = self.metrics.iter().position(|&k| k == metric)?;
        Some(&self.raw[m])
    }

    /// Grid value at the first maximum of `metric`.
    pub fn argmax_x(&self, metric: SweepMetric) -> Option<f64> {
        let col = self.column(metric)?;
        crate::metrics::argmax(col).map(|i| self.xs[i])
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec![self.param.clone()];
        h.extend(self.metrics.iter().map(|m| format!("{}_raw", m.column())));
        h.extend(self.metrics.iter().map(|m| format!("{}_norm", m.column())));
        h
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, IoError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for i in 0..self.xs.len() {
            let mut row = vec![self.xs[i].to_string()];
            row.extend(self.raw.iter().map(|c| c[i].to_string()));
            row.extend(self.normalized.iter().map(|c| c.values[i].to_string()));
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn file_name(&self) -> String {
        format!("sweep_{}_vs_{}.csv", self.model, self.query)
    }
}

fn evaluate(
    metric: SweepMetric,
    model: &SampledModel,
    model_idx: Option<&NnIndex>,
    query: &PointCloud,
    query_idx: &NnIndex,
    cfg: &MetricConfig,
    ir_threshold: f64,
) -> f64 {
    match metric {
        SweepMetric::Wmm => similarity(MetricKind::Wmm, model, query_idx, cfg).value,
        SweepMetric::Mm => similarity(MetricKind::Mm, model, query_idx, cfg).value,
        SweepMetric::Smm => similarity(MetricKind::Smm, model, query_idx, cfg).value,
        SweepMetric::Shd => match model_idx {
            Some(mi) => -shd_indexed(mi.source(), mi, query, query_idx),
            None => f64::NEG_INFINITY,
        },
        SweepMetric::Ohdqm => -ohdqm(query, model_idx),
        SweepMetric::Vd => {
            let pts: Vec<Point3> = model.submodels.iter().map(|s| s.center).collect();
            -vd(&pts, query, cfg)
        }
        SweepMetric::Ir => ir(model_idx, query, ir_threshold),
    }
}

/// Evaluates every metric on `family` as `param` moves over `xs`, other
/// parameters held at `base`.
#[allow(clippy::too_many_arguments)]
pub fn similarity_sweep(
    family: &ModelFamily,
    base: &ParamVector,
    param: &str,
    xs: &[f64],
    query_label: &str,
    query: &PointCloud,
    metrics: &[SweepMetric],
    cfg: &MetricConfig,
    model_resolution: f64,
) -> Result<SweepTable, ExperimentError> {
    let query_idx = NnIndex::build(query)?;
    let ir_threshold = cfg
        .ir_threshold
        .unwrap_or_else(|| default_ir_threshold(query, &query_idx));
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| {
            let params = base.clone().with(param, x);
            let model = grid_model(family, &params, model_resolution)?;
            let model_idx = NnIndex::build(&model.centers()).ok();
            Ok(metrics
                .iter()
                .map(|&m| evaluate(m, &model, model_idx.as_ref(), query, &query_idx, cfg, ir_threshold))
                .collect())
        })
        .collect::<Result<_, ExperimentError>>()?;
    let raw: Vec<Vec<f64>> = (0..metrics.len())
        .map(|m| rows.iter().map(|r| r[m]).collect())
        .collect();
    let normalized = raw.iter().map(|c| normalize_curve(c)).collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        model: family.id,
        query: query_label.to_string(),
        param: param.to_string(),
        xs: xs.to_vec(),
        metrics: metrics.to_vec(),
        raw,
        normalized,
    })
}

/// Frame family `model` against the frame fixture `query`, both at the
/// standard resolutions.
pub fn frame_sweep(
    model: FamilyId,
    query: FamilyId,
    metrics: &[SweepMetric],
    cfg: &MetricConfig,
) -> Result<SweepTable, ExperimentError> {
    let xs: Vec<f64> = (1..=20).map(|i| i as f64 / 10.0).collect();
    let q = frame_query(query, 1.0, FRAME_QUERY_RESOLUTION);
    similarity_sweep(
        &ModelFamily::new(model),
        &ParamVector::new(model),
        "frame/x",
        &xs,
        &query.to_string(),
        &q,
        metrics,
        cfg,
        FRAME_MODEL_RESOLUTION,
    )
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepTable>, ExperimentError> {
    let xs = cfg.grid.values();
    let mut tables = Vec::new();
    for source in &cfg.queries {
        let query = match (&source.family, &source.path) {
            (Some(family), _) => {
                let mut fam = ModelFamily::new(*family);
                fam.structure = cfg.structure.clone();
                let mut p = ParamVector::new(*family);
                for (k, v) in &cfg.base_params {
                    p.set(k.as_str(), *v);
                }
                grid_cloud(&fam, &p.with(&cfg.grid.param, source.x), source.resolution)?
            }
            (None, Some(path)) => {
                let fmt = source
                    .format
                    .or_else(|| CloudFormat::from_path(path))
                    .unwrap_or(CloudFormat::Xyz);
                read_cloud(path, fmt)?
            }
            (None, None) => return Err(IoError::Config("query has neither family nor path".into()).into()),
        };
        for &model in &cfg.models {
            let mut family = ModelFamily::new(model);
            family.structure = cfg.structure.clone();
            let mut base = ParamVector::new(model);
            for (k, v) in &cfg.base_params {
                base.set(k.as_str(), *v);
            }
            tables.push(similarity_sweep(
                &family,
                &base,
                &cfg.grid.param,
                &xs,
                &source.label(),
                &query,
                &cfg.metrics,
                &cfg.metric,
                cfg.model_resolution,
            )?);
        }
    }
    Ok(tables)
}

/// WMM of the four frame models at x = 1 against the four frame queries.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTable {
    /// `values[q][m]`: query `q`, model `m`, both in [`FRAME_FAMILIES`] order.
    pub values: [[f64; 4]; 4],
}

impl FrameTable {
    pub fn compute(cfg: &MetricConfig) -> Result<FrameTable, ExperimentError> {
        let mut values = [[0.0; 4]; 4];
        for (qi, &qid) in FRAME_FAMILIES.iter().enumerate() {
            let idx = NnIndex::build(&frame_query(qid, 1.0, FRAME_QUERY_RESOLUTION))?;
            for (mi, &mid) in FRAME_FAMILIES.iter().enumerate() {
                let model = grid_model(&ModelFamily::new(mid), &frame_params(mid, 1.0), FRAME_MODEL_RESOLUTION)?;
                values[qi][mi] = similarity(MetricKind::Wmm, &model, &idx, cfg).value;
            }
        }
        Ok(FrameTable { values })
    }

    /// Rows whose maximum is not on the diagonal.
    pub fn off_diagonal_rows(&self) -> Vec<usize> {
        (0..4)
            .filter(|&q| crate::metrics::argmax(&self.values[q]) != Some(q))
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, IoError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["query".to_string()];
        header.extend(FRAME_FAMILIES.iter().map(|f| f.to_string()));
        w.write_record(header)?;
        for (q, row) in self.values.iter().enumerate() {
            let mut rec = vec![FRAME_FAMILIES[q].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        w.into_inner().map_err(|e| IoError::Config(e.to_string()))
    }
}

pub const SPHERE_QUERY_RESOLUTION: f64 = 0.2;
/// Added uniform points per clean point for the heavy-noise query.
pub const HIGH_NOISE_MULTIPLIER: f64 = 4.437;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereFixture {
    Clean,
    LowUniform,
    HighUniform,
    Gaussian,
}

impl SphereFixture {
    pub const ALL: [SphereFixture; 4] = [
        SphereFixture::Clean,
        SphereFixture::LowUniform,
        SphereFixture::HighUniform,
        SphereFixture::Gaussian,
    ];

    pub fn noise(self) -> Vec<NoiseSpec> {
        match self {
            SphereFixture::Clean => vec![],
            SphereFixture::LowUniform => vec![NoiseSpec::UniformCube {
                side: 2.0,
                multiplier: 1.0,
            }],
            SphereFixture::HighUniform => vec![NoiseSpec::UniformCube {
                side: 2.0,
                multiplier: HIGH_NOISE_MULTIPLIER,
            }],
            SphereFixture::Gaussian => vec![NoiseSpec::Gaussian { sigma: 0.2 }],
        }
    }
}

pub fn sphere_truth() -> ParamVector {
    ParamVector::new(FamilyId::Sphere)
        .with("sphere/cx", 0.1)
        .with("sphere/cy", -0.2)
        .with("sphere/cz", 0.15)
        .with("sphere/radius", 1.0)
}

pub fn sphere_query(fixture: SphereFixture, seed: u64) -> PointCloud {
    synthesize_query(
        &ModelFamily::new(FamilyId::Sphere),
        &sphere_truth(),
        SPHERE_QUERY_RESOLUTION,
        &fixture.noise(),
        seed,
    )
    .expect("sphere fixture is valid")
}

/// Largest deviation of center coordinates and radius from the truth.
pub fn sphere_error(params: &ParamVector) -> f64 {
    let truth = sphere_truth();
    ["sphere/cx", "sphere/cy", "sphere/cz", "sphere/radius"]
        .iter()
        .map(|k| (params.get(k).unwrap_or(f64::NAN) - truth.get(k).unwrap()).abs())
        .fold(0.0, f64::max)
}

pub const BUILDING_QUERY_RESOLUTION: f64 = 0.2;

/// Ground-truth building with three floors of distinct window sizes.
pub fn building_truth(id: FamilyId) -> ParamVector {
    let p = match id {
        FamilyId::Building4f => ParamVector::new(id).with("building/mass/width", 5.0),
        _ => ParamVector::new(id),
    };
    p.with("building/rot", 0.1)
        .with("building/tx", 0.3)
        .with("building/ty", -0.2)
        .with("building/tz", 0.0)
        .with("building/mass/height", 6.6)
        .with("building/mass/length", 8.0)
        .with("building/F1/win_w", 1.0)
        .with("building/F1/win_h", 1.2)
        .with("building/F2/win_w", 1.2)
        .with("building/F2/win_h", 1.0)
        .with("building/F3/win_w", 0.8)
        .with("building/F3/win_h", 1.4)
}

pub fn building_query(id: FamilyId, seed: u64) -> PointCloud {
    synthesize_query(
        &ModelFamily::new(id),
        &building_truth(id),
        BUILDING_QUERY_RESOLUTION,
        &[],
        seed,
    )
    .expect("building fixture is valid")
}

pub fn floor_count(family: &ModelFamily, params: &ParamVector) -> Option<u32> {
    let key = family.key("mass/height");
    params.values.get(&key).map(|&h| family.floors_for_height(h))
}

pub const FACADE_QUERY_RESOLUTION: f64 = 0.1;

pub fn facade_truth() -> ParamVector {
    ParamVector::new(FamilyId::FacadeCorruptTest)
        .with("facade/rot", 0.0)
        .with("facade/tx", 0.0)
        .with("facade/ty", 0.0)
        .with("facade/tz", 0.0)
        .with("facade/mass/height", 6.6)
        .with("facade/mass/length", 8.0)
        .with("facade/windows/win_w", 1.0)
        .with("facade/windows/win_h", 1.2)
        .with("facade/windows/windows_per_floor", 4.0)
}

/// Facade scan whose window openings are partly filled: every other hole
/// carries points on a plane recessed `depth` behind the wall, as from
/// curtains or reflections seen through glass.
pub fn corrupted_facade_query(depth: f64, seed: u64) -> PointCloud {
    let family = ModelFamily::new(FamilyId::FacadeCorruptTest);
    let truth = facade_truth();
    let mut cloud =
        synthesize_query(&family, &truth, FACADE_QUERY_RESOLUTION, &[], seed).expect("facade fixture is valid");
    let prims = family.instantiate(&truth).expect("facade fixture is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for prim in &prims {
        let Primitive::Quad(q) = prim else { continue };
        let back = -q.normal() * depth;
        for hole in q.holes.iter().step_by(2) {
            let nu = ((hole.u1 - hole.u0) / FACADE_QUERY_RESOLUTION).round().max(1.0) as usize;
            let nv = ((hole.v1 - hole.v0) / FACADE_QUERY_RESOLUTION).round().max(1.0) as usize;
            for i in 0..nu {
                for j in 0..nv {
                    let cu = hole.u0 + (i as f64 + rng.gen_range(0.25..0.75)) * (hole.u1 - hole.u0) / nu as f64;
                    let cv = hole.v0 + (j as f64 + rng.gen_range(0.25..0.75)) * (hole.v1 - hole.v0) / nv as f64;
                    cloud.points.push(q.origin + q.u * cu + q.v * cv + back);
                }
            }
        }
    }
    cloud
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub early_rejection: bool,
    pub proposals: u64,
    pub seconds: f64,
    pub proposals_per_second: f64,
    pub best_log_post: f64,
    pub best_params: BTreeMap<String, f64>,
}

impl RunSummary {
    pub fn of(r: &FitResult) -> Self {
        Self {
            early_rejection: r.early_rejection,
            proposals: r.proposals,
            seconds: r.elapsed_seconds,
            proposals_per_second: r.proposals_per_second(),
            best_log_post: r.best_log_post,
            best_params: r.best_params.values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErComparison {
    pub with_er: RunSummary,
    pub without_er: RunSummary,
}

impl ErComparison {
    pub fn speedup(&self) -> f64 {
        self.with_er.proposals_per_second / self.without_er.proposals_per_second
    }

    /// Relative gap between the best log-posteriors.
    pub fn ll_gap(&self) -> f64 {
        let (a, b) = (self.with_er.best_log_post, self.without_er.best_log_post);
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, IoError> {
        #[derive(Serialize)]
        struct Row {
            early_rejection: bool,
            proposals: u64,
            seconds: f64,
            proposals_per_second: f64,
            best_log_post: f64,
        }
        let rows: Vec<Row> = [&self.with_er, &self.without_er]
            .iter()
            .map(|s| Row {
                early_rejection: s.early_rejection,
                proposals: s.proposals,
                seconds: s.seconds,
                proposals_per_second: s.proposals_per_second,
                best_log_post: s.best_log_post,
            })
            .collect();
        csv_bytes(&rows)
    }
}

/// Runs the same fit with and without early rejection.
pub fn compare_er(family: &ModelFamily, query: &PointCloud, cfg: &FitConfig) -> Result<ErComparison, ExperimentError> {
    let with = run_fit(
        family,
        query,
        &FitConfig {
            early_rejection: true,
            ..cfg.clone()
        },
    )?;
    let without = run_fit(
        family,
        query,
        &FitConfig {
            early_rejection: false,
            ..cfg.clone()
        },
    )?;
    Ok(ErComparison {
        with_er: RunSummary::of(&with),
        without_er: RunSummary::of(&without),
    })
}

/// Top-level log-posterior of `params` against `query`.
pub fn log_posterior_of(
    family: &ModelFamily,
    query: &PointCloud,
    params: &ParamVector,
    cfg: &FitConfig,
) -> Result<f64, ExperimentError> {
    let idx = NnIndex::build(query)?;
    Ok(ModelPosterior::new(family, &idx, cfg).log_posterior_top(params))
}
