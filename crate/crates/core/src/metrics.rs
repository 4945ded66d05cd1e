//! Rigid similarity between a divided model and a query point set.
//!
//! The mean-measure family divides a model's measure by a distance from the
//! model to the query: [`mm`] uses the one-sided Hausdorff distance, [`smm`]
//! its square, and [`wmm`] an exponentially weighted mean over sub-models so
//! that parts of the model far from the query barely contribute. The
//! comparison baselines (SHD, OHDQM, VD, IR) live here as well.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, PointCloud, Primitive, SubModel};
use crate::spatial_index::NnIndex;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 values to normalize, got {0}")]
    TooFewValues(usize),
    #[error("NaN in curve at position {0}")]
    NotANumber(usize),
}

/// A model divided at one level: sub-model centers and their measures.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledModel {
    pub submodels: Vec<SubModel>,
    pub total_measure: f64,
    pub level: u32,
}

impl SampledModel {
    pub fn new(submodels: Vec<SubModel>, level: u32) -> Self {
        let total_measure = submodels.iter().map(|s| s.measure).sum();
        Self {
            submodels,
            total_measure,
            level,
        }
    }

    /// Divides every primitive at the same level.
    pub fn from_primitives(primitives: &[Primitive], level: u32) -> Self {
        let subs = primitives.iter().flat_map(|p| p.divide(level)).collect();
        Self::new(subs, level)
    }

    pub fn is_empty(&self) -> bool {
        self.submodels.is_empty()
    }

    pub fn centers(&self) -> PointCloud {
        PointCloud::new(self.submodels.iter().map(|s| s.center).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mm,
    Smm,
    Wmm,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::Mm => "mm",
            MetricKind::Smm => "smm",
            MetricKind::Wmm => "wmm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Denominator guard; never zero.
    pub epsilon: f64,
    /// WMM weighting factor.
    pub h: f64,
    pub vd_resolution: f64,
    /// IR inlier distance; defaults to the query's resolution hint.
    pub ir_threshold: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            h: 2.5,
            vd_resolution: 0.04,
            ir_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityValue {
    pub value: f64,
    pub metric: MetricKind,
    pub level: u32,
}

/// One-sided Hausdorff distance from `points` to the indexed cloud. Zero for
/// an empty `points`.
pub fn ohd_points(points: &[Point3], idx: &NnIndex) -> f64 {
    points.iter().map(|p| idx.nearest_distance(p)).fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two point sets. Infinite when exactly
/// one of them is empty.
pub fn shd(a: &PointCloud, b: &PointCloud) -> f64 {
    match (NnIndex::build(a), NnIndex::build(b)) {
        (Ok(ia), Ok(ib)) => shd_indexed(a, &ia, b, &ib),
        (Err(_), Err(_)) => 0.0,
        _ => f64::INFINITY,
    }
}

pub fn shd_indexed(a: &PointCloud, a_idx: &NnIndex, b: &PointCloud, b_idx: &NnIndex) -> f64 {
    ohd_points(&a.points, b_idx).max(ohd_points(&b.points, a_idx))
}

/// Sub-models come out of `divide` in spatially coherent order, so the
/// previous answer is a good starting bound for the next search.
fn center_distances(model: &SampledModel, idx: &NnIndex) -> Vec<f64> {
    let mut hint = 0;
    model
        .submodels
        .iter()
        .map(|s| {
            let n = idx.nearest_with_hint(&s.center, hint);
            hint = n.index;
            n.distance
        })
        .collect()
}

/// Mean measure: `|M| / (eps + d(M, Q))`.
pub fn mm(model: &SampledModel, idx: &NnIndex, cfg: &MetricConfig) -> SimilarityValue {
    let d = center_distances(model, idx).into_iter().fold(0.0, f64::max);
    SimilarityValue {
        value: model.total_measure / (cfg.epsilon + d),
        metric: MetricKind::Mm,
        level: model.level,
    }
}

/// Squared mean measure: `|M| / (eps + d(M, Q)^2)`.
pub fn smm(model: &SampledModel, idx: &NnIndex, cfg: &MetricConfig) -> SimilarityValue {
    let d = center_distances(model, idx).into_iter().fold(0.0, f64::max);
    SimilarityValue {
        value: model.total_measure / (cfg.epsilon + d * d),
        metric: MetricKind::Smm,
        level: model.level,
    }
}

/// Weighted mean measure with weights `exp(-d_i h)`.
pub fn wmm(model: &SampledModel, idx: &NnIndex, cfg: &MetricConfig) -> SimilarityValue {
    let dists = center_distances(model, idx);
    SimilarityValue {
        value: wmm_from_distances(&model.submodels, &dists, cfg),
        metric: MetricKind::Wmm,
        level: model.level,
    }
}

/// WMM given precomputed per-sub-model distances. Weights are factored as
/// `exp(-d_min h) * exp(-(d_i - d_min) h)` so a model far from the query
/// does not underflow every weight to zero.
pub fn wmm_from_distances(submodels: &[SubModel], dists: &[f64], cfg: &MetricConfig) -> f64 {
    if submodels.is_empty() {
        return 0.0;
    }
    let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut wm, mut wd, mut w) = (0.0, 0.0, 0.0);
    for (s, &d) in submodels.iter().zip(dists) {
        let wi = (-(d - d_min) * cfg.h).exp();
        wm += wi * s.measure;
        wd += wi * d;
        w += wi;
    }
    (-d_min * cfg.h).exp() * wm / (cfg.epsilon + wd / w)
}

pub fn similarity(kind: MetricKind, model: &SampledModel, idx: &NnIndex, cfg: &MetricConfig) -> SimilarityValue {
    match kind {
        MetricKind::Mm => mm(model, idx, cfg),
        MetricKind::Smm => smm(model, idx, cfg),
        MetricKind::Wmm => wmm(model, idx, cfg),
    }
}

/// One-sided Hausdorff distance from the query to the model samples; the
/// baseline similarity is its negation. Infinite for an empty model.
pub fn ohdqm(query: &PointCloud, model_idx: Option<&NnIndex>) -> f64 {
    match model_idx {
        Some(idx) => ohd_points(&query.points, idx),
        None => f64::INFINITY,
    }
}

fn voxel_keys(points: &[Point3], origin: &Point3, res: f64) -> HashSet<[i64; 3]> {
    points
        .iter()
        .map(|p| {
            [
                ((p.x - origin.x) / res).floor() as i64,
                ((p.y - origin.y) / res).floor() as i64,
                ((p.z - origin.z) / res).floor() as i64,
            ]
        })
        .collect()
}

/// Voxel difference: number of cells of side `cfg.vd_resolution` occupied by
/// exactly one of the model samples and the query. The grid origin is the
/// joint bounding-box minimum snapped down to the lattice.
pub fn vd(model_points: &[Point3], query: &PointCloud, cfg: &MetricConfig) -> f64 {
    let res = cfg.vd_resolution;
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for p in model_points.iter().chain(&query.points) {
        lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
    }
    if !lo.x.is_finite() {
        return 0.0;
    }
    let origin = Point3::new(
        (lo.x / res).floor() * res,
        (lo.y / res).floor() * res,
        (lo.z / res).floor() * res,
    );
    let a = voxel_keys(model_points, &origin, res);
    let b = voxel_keys(&query.points, &origin, res);
    a.symmetric_difference(&b).count() as f64
}

/// Default IR inlier threshold: the query's resolution hint, or else its
/// median nearest-neighbor spacing.
pub fn default_ir_threshold(query: &PointCloud, query_idx: &NnIndex) -> f64 {
    query.resolution_hint.unwrap_or_else(|| median_spacing(query_idx))
}

/// Median distance from each point to its nearest other point.
pub fn median_spacing(idx: &NnIndex) -> f64 {
    let mut d: Vec<f64> = (0..idx.len())
        .filter_map(|i| idx.nearest_other(i).map(|n| n.distance))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Inlier ratio: fraction of query points within `threshold` of a model sample.
pub fn ir(model_idx: Option<&NnIndex>, query: &PointCloud, threshold: f64) -> f64 {
    let Some(idx) = model_idx else {
        return 0.0;
    };
    if query.is_empty() {
        return 0.0;
    }
    let inliers = query
        .points
        .iter()
        .filter(|p| idx.nearest_distance(p) <= threshold)
        .count();
    inliers as f64 / query.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCurve {
    pub values: Vec<f64>,
    /// Set when every input was equal; all outputs are then 0.5.
    pub flat: bool,
}

/// Min-max normalization into [0, 1]. Infinite entries (e.g. the distance to
/// an empty model) map to the matching end of the range.
pub fn normalize_curve(values: &[f64]) -> Result<NormalizedCurve, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewValues(values.len()));
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(MetricsError::NotANumber(i));
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let all_equal = values.iter().all(|&v| v == values[0]);
    if all_equal {
        return Ok(NormalizedCurve {
            values: vec![0.5; values.len()],
            flat: true,
        });
    }
    let span = hi - lo;
    let out = values
        .iter()
        .map(|&v| {
            if v == f64::INFINITY {
                1.0
            } else if v == f64::NEG_INFINITY {
                0.0
            } else if span > 0.0 {
                (v - lo) / span
            } else {
                // Single finite level alongside infinities.
                0.5
            }
        })
        .collect();
    Ok(NormalizedCurve {
        values: out,
        flat: false,
    })
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellId;
    use approx::assert_relative_eq;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    fn model(subs: &[([f64; 3], f64)]) -> SampledModel {
        SampledModel::new(
            subs.iter()
                .enumerate()
                .map(|(i, (c, m))| SubModel {
                    center: Point3::new(c[0], c[1], c[2]),
                    measure: *m,
                    cell: CellId::Lattice {
                        level: 0,
                        index: i as u32,
                    },
                })
                .collect(),
            0,
        )
    }

    #[test]
    fn ohd_is_directional() {
        let p = cloud(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let q = cloud(&[[0.0, 0.0, 0.0]]);
        let (ip, iq) = (NnIndex::build(&p).unwrap(), NnIndex::build(&q).unwrap());
        assert_eq!(ohd_points(&p.points, &iq), 10.0);
        assert_eq!(ohd_points(&q.points, &ip), 0.0);
        assert_eq!(ohd_points(&p.points, &ip), 0.0);
        assert_eq!(shd(&p, &q), 10.0);
        assert_eq!(shd(&q, &p), 10.0);
        assert_eq!(shd(&p, &p), 0.0);
    }

    #[test]
    fn mm_and_smm_scalar_values() {
        let cfg = MetricConfig::default();
        let q = NnIndex::build(&cloud(&[[0.0, 0.0, 0.0]])).unwrap();
        let on = model(&[([0.0, 0.0, 0.0], 12.0)]);
        assert_relative_eq!(mm(&on, &q, &cfg).value, 1.2e9, max_relative = 1e-12);
        assert_relative_eq!(smm(&on, &q, &cfg).value, 1.2e9, max_relative = 1e-12);

        let off = model(&[([0.1, 0.0, 0.0], 6.0), ([0.0, 0.05, 0.0], 6.0)]);
        assert_relative_eq!(mm(&off, &q, &cfg).value, 12.0 / (1e-8 + 0.1), max_relative = 1e-12);
        assert_relative_eq!(mm(&off, &q, &cfg).value, 119.999988, epsilon = 1e-6);
        assert_relative_eq!(smm(&off, &q, &cfg).value, 12.0 / (1e-8 + 0.01), max_relative = 1e-9);

        let unit = model(&[([1.0, 0.0, 0.0], 12.0)]);
        assert_relative_eq!(mm(&unit, &q, &cfg).value, smm(&unit, &q, &cfg).value);
    }

    #[test]
    fn mm_is_linear_in_measure() {
        let cfg = MetricConfig::default();
        let q = NnIndex::build(&cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])).unwrap();
        let a = model(&[([0.2, 0.1, 0.0], 1.0), ([0.7, 0.0, 0.3], 2.0)]);
        let b = model(&[([0.2, 0.1, 0.0], 2.0), ([0.7, 0.0, 0.3], 4.0)]);
        assert_relative_eq!(
            mm(&b, &q, &cfg).value,
            2.0 * mm(&a, &q, &cfg).value,
            max_relative = 1e-12
        );
    }

    #[test]
    fn wmm_single_submodel() {
        let cfg = MetricConfig {
            h: 2.5,
            ..Default::default()
        };
        let q = NnIndex::build(&cloud(&[[0.0, 0.0, 0.0]])).unwrap();
        let m = model(&[([0.2, 0.0, 0.0], 1.0)]);
        let expected = (-0.5f64).exp() / (1e-8 + 0.2);
        assert_relative_eq!(wmm(&m, &q, &cfg).value, expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 3.0327, epsilon = 1e-4);
    }

    #[test]
    fn wmm_h_zero_is_mean_distance() {
        let cfg = MetricConfig {
            h: 0.0,
            ..Default::default()
        };
        let q = NnIndex::build(&cloud(&[[0.0, 0.0, 0.0]])).unwrap();
        let m = model(&[([0.1, 0.0, 0.0], 1.0), ([0.0, 0.3, 0.0], 3.0)]);
        assert_relative_eq!(wmm(&m, &q, &cfg).value, 4.0 / (1e-8 + 0.2), max_relative = 1e-12);
    }

    #[test]
    fn wmm_survives_far_models() {
        let cfg = MetricConfig {
            h: 10.0,
            ..Default::default()
        };
        let q = NnIndex::build(&cloud(&[[0.0, 0.0, 0.0]])).unwrap();
        let m = model(&[([1000.0, 0.0, 0.0], 1.0), ([1001.0, 0.0, 0.0], 1.0)]);
        let v = wmm(&m, &q, &cfg).value;
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn empty_model_scores_zero() {
        let cfg = MetricConfig::default();
        let q = NnIndex::build(&cloud(&[[0.0, 0.0, 0.0]])).unwrap();
        let empty = SampledModel::new(vec![], 3);
        for kind in [MetricKind::Mm, MetricKind::Smm, MetricKind::Wmm] {
            assert_eq!(similarity(kind, &empty, &q, &cfg).value, 0.0);
        }
    }

    #[test]
    fn weight_decreases_with_distance() {
        let cfg = MetricConfig::default();
        let mut prev = f64::INFINITY;
        for d in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let w = (-d * cfg.h).exp();
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn ohdqm_examples() {
        let model_pts = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let idx = NnIndex::build(&model_pts).unwrap();
        assert_eq!(ohdqm(&cloud(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), Some(&idx)), 0.0);
        assert_eq!(ohdqm(&cloud(&[[1.0, 0.0, 0.0], [2.0, 7.0, 0.0]]), Some(&idx)), 7.0);
        assert_eq!(ohdqm(&model_pts, None), f64::INFINITY);
    }

    #[test]
    fn vd_examples() {
        let cfg = MetricConfig {
            vd_resolution: 1.0,
            ..Default::default()
        };
        let q = cloud(&[[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]]);
        assert_eq!(vd(&q.points, &q, &cfg), 0.0);
        let a = cloud(&[[0.5, 0.5, 0.5]]);
        let b = cloud(&[[3.5, 0.5, 0.5]]);
        assert_eq!(vd(&a.points, &b, &cfg), 2.0);
        assert_eq!(vd(&[], &q, &cfg), 2.0);
    }

    #[test]
    fn ir_examples() {
        let model_pts = cloud(&[[0.0, 0.0, 0.0]]);
        let idx = NnIndex::build(&model_pts).unwrap();
        let near: Vec<[f64; 3]> = (0..50).map(|i| [0.001 * i as f64, 0.0, 0.0]).collect();
        let far: Vec<[f64; 3]> = (0..50).map(|i| [5.0 + i as f64, 0.0, 0.0]).collect();
        assert_eq!(ir(Some(&idx), &cloud(&near), 0.1), 1.0);
        assert_eq!(ir(Some(&idx), &cloud(&far), 0.1), 0.0);
        let both: Vec<[f64; 3]> = near.iter().chain(&far).copied().collect();
        assert_eq!(ir(Some(&idx), &cloud(&both), 0.1), 0.5);
        assert_eq!(ir(None, &cloud(&both), 0.1), 0.0);
    }

    #[test]
    fn ir_threshold_defaults() {
        let q = cloud(&[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.5, 0.0, 0.0]]);
        let idx = NnIndex::build(&q).unwrap();
        assert_eq!(default_ir_threshold(&q, &idx), 0.5);
        let hinted = q.clone().with_resolution(0.2);
        assert_eq!(default_ir_threshold(&hinted, &idx), 0.2);
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_curve(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        assert!(!n.flat);
        let flat = normalize_curve(&[3.0, 3.0, 3.0]).unwrap();
        assert!(flat.flat);
        assert_eq!(flat.values, vec![0.5; 3]);
        assert_eq!(normalize_curve(&[5.0]), Err(MetricsError::TooFewValues(1)));
        let inf = normalize_curve(&[-1.0, -3.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(inf.values, vec![1.0, 0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn normalize_preserves_argmax(v in proptest::collection::vec(-1e6..1e6f64, 2..40)) {
            let n = normalize_curve(&v).unwrap();
            proptest::prop_assert!(n.values.iter().all(|x| (0.0..=1.0).contains(x)));
            if !n.flat {
                proptest::prop_assert_eq!(argmax(&v), argmax(&n.values));
            }
        }
    }
}
