//! Parametric procedural model families.
//!
//! Each family maps a [`ParamVector`] to a list of primitives. Parameters are
//! addressed by calling-trace keys (`"building/F2/win_w"`), so a parameter
//! spawned by a recursive rule keeps its identity across iterations. Building
//! families spawn one `(win_w, win_h)` pair per floor, and the floor count
//! follows the height parameter, so the active dimension changes during a fit.
//! Keys that become inactive are kept (and ignored) so they come back
//! unchanged if their floor reappears.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FrameRegion, GeometryError, HoledQuad, Point3, Primitive, Quadrants, Rect, Sphere};

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("missing structural parameter {0}")]
    MissingKey(String),
    #[error("invalid parameter {key} = {value}")]
    InvalidParameter { key: String, value: f64 },
    #[error("no bounds declared for parameter {0}")]
    UnknownParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Calling-trace key identifying one parameter instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamKey(String);

impl ParamKey {
    pub fn new(trace: impl Into<String>) -> Self {
        Self(trace.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last trace segment; parameters spawned from the same rule share it.
    pub fn name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParamKey {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamKind {
    Continuous { min: f64, max: f64 },
    Discrete { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDescriptor {
    pub key: ParamKey,
    pub kind: ParamKind,
}

impl ParamDescriptor {
    pub fn contains(&self, value: f64) -> bool {
        match &self.kind {
            ParamKind::Continuous { min, max } => (*min..=*max).contains(&value),
            ParamKind::Discrete { values } => values.contains(&value),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, ParamKind::Continuous { .. })
    }

    /// Draw from the uniform prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            ParamKind::Continuous { min, max } => rng.gen_range(*min..=*max),
            ParamKind::Discrete { values } => values[rng.gen_range(0..values.len())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyId {
    FrameFull,
    #[serde(rename = "frame_3q")]
    Frame3q,
    #[serde(rename = "frame_2q")]
    Frame2q,
    #[serde(rename = "frame_1q")]
    Frame1q,
    Sphere,
    #[serde(rename = "building_4f")]
    Building4f,
    #[serde(rename = "building_1f")]
    Building1f,
    FacadeCorruptTest,
}

impl FamilyId {
    pub fn frame_with_quadrants(count: u32) -> Option<FamilyId> {
        match count {
            4 => Some(FamilyId::FrameFull),
            3 => Some(FamilyId::Frame3q),
            2 => Some(FamilyId::Frame2q),
            1 => Some(FamilyId::Frame1q),
            _ => None,
        }
    }

    fn quadrants(self) -> Option<Quadrants> {
        match self {
            FamilyId::FrameFull => Some(Quadrants::all()),
            FamilyId::Frame3q => Some(Quadrants::I | Quadrants::II | Quadrants::III),
            FamilyId::Frame2q => Some(Quadrants::I | Quadrants::II),
            FamilyId::Frame1q => Some(Quadrants::I),
            _ => None,
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Parameter values keyed by calling trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub family: FamilyId,
    pub values: BTreeMap<ParamKey, f64>,
}

impl ParamVector {
    pub fn new(family: FamilyId) -> Self {
        Self {
            family,
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(&ParamKey::new(key)).copied()
    }

    pub fn set(&mut self, key: impl Into<ParamKey>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.set(key, value);
        self
    }

    pub fn contains(&self, key: &ParamKey) -> bool {
        self.values.contains_key(key)
    }
}

impl From<String> for ParamKey {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Structural constants of a family; not fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructureConfig {
    pub outer_len: f64,
    pub floor_height: f64,
    /// Windows per floor on length-wise facades.
    pub windows_per_floor: u32,
    /// Windows per floor on width-wise facades.
    pub side_windows_per_floor: u32,
    /// Minimum gap between neighbouring holes, as a fraction of the facade
    /// extent along the same axis.
    pub min_gap_fraction: f64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            outer_len: 4.0,
            floor_height: 2.0,
            windows_per_floor: 4,
            side_windows_per_floor: 2,
            min_gap_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    pub id: FamilyId,
    pub structure: StructureConfig,
    /// Prior support per parameter name (last trace segment).
    pub bounds: BTreeMap<String, ParamKind>,
}

fn cont(min: f64, max: f64) -> ParamKind {
    ParamKind::Continuous { min, max }
}

const BUILDING_MASS: [&str; 7] = ["rot", "tx", "ty", "tz", "height", "length", "width"];

impl ModelFamily {
    pub fn new(id: FamilyId) -> Self {
        let mut bounds = BTreeMap::new();
        let mut put = |k: &str, kind: ParamKind| {
            bounds.insert(k.to_string(), kind);
        };
        match id {
            FamilyId::FrameFull | FamilyId::Frame3q | FamilyId::Frame2q | FamilyId::Frame1q => {
                put("x", cont(0.0, 2.0));
            }
            FamilyId::Sphere => {
                for k in ["cx", "cy", "cz"] {
                    put(k, cont(-1.0, 1.0));
                }
                put("radius", cont(0.25, 1.5));
            }
            FamilyId::Building4f | FamilyId::Building1f | FamilyId::FacadeCorruptTest => {
                put("rot", cont(-0.5, 0.5));
                put("tx", cont(-2.0, 2.0));
                put("ty", cont(-2.0, 2.0));
                put("tz", cont(-1.0, 1.0));
                put("height", cont(4.5, 9.0));
                put("length", cont(5.0, 11.0));
                put("win_w", cont(0.3, 2.0));
                put("win_h", cont(0.3, 1.8));
                if id == FamilyId::Building4f {
                    put("width", cont(3.0, 8.0));
                }
                if id == FamilyId::FacadeCorruptTest {
                    put(
                        "windows_per_floor",
                        ParamKind::Discrete {
                            values: vec![2.0, 3.0, 4.0, 5.0, 6.0],
                        },
                    );
                }
            }
        }
        Self {
            id,
            structure: StructureConfig::default(),
            bounds,
        }
    }

    pub fn with_bounds(mut self, name: &str, kind: ParamKind) -> Self {
        self.bounds.insert(name.to_string(), kind);
        self
    }

    fn prefix(&self) -> &'static str {
        match self.id {
            FamilyId::FrameFull | FamilyId::Frame3q | FamilyId::Frame2q | FamilyId::Frame1q => "frame",
            FamilyId::Sphere => "sphere",
            FamilyId::Building4f | FamilyId::Building1f => "building",
            FamilyId::FacadeCorruptTest => "facade",
        }
    }

    pub fn key(&self, path: &str) -> ParamKey {
        ParamKey::new(format!("{}/{}", self.prefix(), path))
    }

    fn floor_key(&self, floor: u32, name: &str) -> ParamKey {
        self.key(&format!("F{floor}/{name}"))
    }

    pub fn descriptor(&self, key: &ParamKey) -> Result<ParamDescriptor, GrammarError> {
        self.bounds
            .get(key.name())
            .map(|kind| ParamDescriptor {
                key: key.clone(),
                kind: kind.clone(),
            })
            .ok_or_else(|| GrammarError::UnknownParameter(key.to_string()))
    }

    fn require(&self, params: &ParamVector, path: &str) -> Result<f64, GrammarError> {
        let key = self.key(path);
        params
            .values
            .get(&key)
            .copied()
            .ok_or_else(|| GrammarError::MissingKey(key.to_string()))
    }

    /// Floor count implied by a building height; at least one.
    pub fn floors_for_height(&self, height: f64) -> u32 {
        let n = (height / self.structure.floor_height + 1e-9).floor();
        (n as u32).max(1)
    }

    fn mass_keys(&self) -> Vec<ParamKey> {
        let names: &[&str] = match self.id {
            FamilyId::Building4f => &BUILDING_MASS,
            _ => &BUILDING_MASS[..6],
        };
        names
            .iter()
            .map(|n| match *n {
                "height" | "length" | "width" => self.key(&format!("mass/{n}")),
                _ => self.key(n),
            })
            .collect()
    }

    /// Trace keys of the parameters that currently shape the model, in a
    /// fixed order.
    pub fn active_keys(&self, params: &ParamVector) -> Result<Vec<ParamKey>, GrammarError> {
        let keys = match self.id {
            FamilyId::FrameFull | FamilyId::Frame3q | FamilyId::Frame2q | FamilyId::Frame1q => {
                vec![self.key("x")]
            }
            FamilyId::Sphere => ["cx", "cy", "cz", "radius"].iter().map(|k| self.key(k)).collect(),
            FamilyId::Building4f | FamilyId::Building1f => {
                let n = self.floors_for_height(self.require(params, "mass/height")?);
                let mut keys = self.mass_keys();
                for floor in 1..=n {
                    keys.push(self.floor_key(floor, "win_w"));
                    keys.push(self.floor_key(floor, "win_h"));
                }
                keys
            }
            FamilyId::FacadeCorruptTest => {
                let mut keys = self.mass_keys();
                keys.push(self.key("windows/win_w"));
                keys.push(self.key("windows/win_h"));
                keys.push(self.key("windows/windows_per_floor"));
                keys
            }
        };
        Ok(keys)
    }

    pub fn active_params(&self, params: &ParamVector) -> Result<Vec<ParamDescriptor>, GrammarError> {
        self.active_keys(params)?.iter().map(|k| self.descriptor(k)).collect()
    }

    /// Uniform prior: 0 when every active parameter is present and in
    /// bounds, `-inf` otherwise.
    pub fn log_prior(&self, params: &ParamVector) -> f64 {
        let Ok(active) = self.active_params(params) else {
            return f64::NEG_INFINITY;
        };
        let ok = active
            .iter()
            .all(|d| params.values.get(&d.key).is_some_and(|&v| d.contains(v)));
        if ok {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Fills in newly active parameters from their priors. Values already
    /// present, active or not, are left untouched.
    pub fn resync_params<R: Rng + ?Sized>(&self, params: &ParamVector, rng: &mut R) -> ParamVector {
        let mut out = params.clone();
        // Structural keys first: the active set depends on them.
        for key in self.structural_keys() {
            if !out.contains(&key) {
                if let Ok(d) = self.descriptor(&key) {
                    out.values.insert(key, d.sample_prior(rng));
                }
            }
        }
        if let Ok(active) = self.active_params(&out) {
            for d in active {
                if !out.contains(&d.key) {
                    let v = d.sample_prior(rng);
                    out.values.insert(d.key, v);
                }
            }
        }
        out
    }

    fn structural_keys(&self) -> Vec<ParamKey> {
        match self.id {
            FamilyId::Building4f | FamilyId::Building1f => vec![self.key("mass/height")],
            _ => vec![],
        }
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.resync_params(&ParamVector::new(self.id), rng)
    }

    /// Builds the model's primitives. Every active parameter must be present
    /// and inside its bounds.
    pub fn instantiate(&self, params: &ParamVector) -> Result<Vec<Primitive>, GrammarError> {
        for d in self.active_params(params)? {
            let v = params
                .values
                .get(&d.key)
                .copied()
                .ok_or_else(|| GrammarError::MissingKey(d.key.to_string()))?;
            if !d.contains(v) {
                return Err(GrammarError::InvalidParameter {
                    key: d.key.to_string(),
                    value: v,
                });
            }
        }
        match self.id {
            FamilyId::FrameFull | FamilyId::Frame3q | FamilyId::Frame2q | FamilyId::Frame1q => {
                let x = self.require(params, "x")?;
                let outer = self.structure.outer_len;
                let quadrants = self.id.quadrants().expect("frame family");
                let inner = (outer / 2.0 * x).min(outer);
                Ok(vec![Primitive::Frame(FrameRegion::new(
                    Point3::origin(),
                    outer,
                    inner,
                    quadrants,
                )?)])
            }
            FamilyId::Sphere => {
                let c = Point3::new(
                    self.require(params, "cx")?,
                    self.require(params, "cy")?,
                    self.require(params, "cz")?,
                );
                Ok(vec![Primitive::Sphere(Sphere::new(
                    c,
                    self.require(params, "radius")?,
                )?)])
            }
            FamilyId::Building4f | FamilyId::Building1f | FamilyId::FacadeCorruptTest => {
                self.instantiate_building(params)
            }
        }
    }

    fn instantiate_building(&self, params: &ParamVector) -> Result<Vec<Primitive>, GrammarError> {
        let rot = self.require(params, "rot")?;
        let t = Vector3::new(
            self.require(params, "tx")?,
            self.require(params, "ty")?,
            self.require(params, "tz")?,
        );
        let height = self.require(params, "mass/height")?;
        let length = self.require(params, "mass/length")?;
        let n = self.floors_for_height(height);

        let window_sizes: Vec<(f64, f64)> = match self.id {
            FamilyId::FacadeCorruptTest => {
                let size = (
                    self.require(params, "windows/win_w")?,
                    self.require(params, "windows/win_h")?,
                );
                vec![size; n as usize]
            }
            _ => (1..=n)
                .map(|f| {
                    Ok((
                        self.require(params, &format!("F{f}/win_w"))?,
                        self.require(params, &format!("F{f}/win_h"))?,
                    ))
                })
                .collect::<Result<_, GrammarError>>()?,
        };
        let front_windows = match self.id {
            FamilyId::FacadeCorruptTest => self.require(params, "windows/windows_per_floor")? as u32,
            _ => self.structure.windows_per_floor,
        };

        let up = Vector3::z();
        let mut facades = Vec::new();
        match self.id {
            FamilyId::Building4f => {
                let width = self.require(params, "mass/width")?;
                let (hl, hw) = (0.5 * length, 0.5 * width);
                let sides = self.structure.side_windows_per_floor;
                facades.push((Point3::new(-hl, -hw, 0.0), Vector3::x(), length, front_windows));
                facades.push((Point3::new(hl, -hw, 0.0), Vector3::y(), width, sides));
                facades.push((Point3::new(hl, hw, 0.0), -Vector3::x(), length, front_windows));
                facades.push((Point3::new(-hl, hw, 0.0), -Vector3::y(), width, sides));
            }
            _ => facades.push((
                Point3::new(-0.5 * length, 0.0, 0.0),
                Vector3::x(),
                length,
                front_windows,
            )),
        }

        facades
            .into_iter()
            .map(|(origin, u, lu, per_floor)| {
                let holes = self.window_grid(lu, height, per_floor, &window_sizes);
                let quad = HoledQuad::new(origin, u, up, lu, height, holes)?;
                Ok(Primitive::Quad(quad).rigid_place(rot, t))
            })
            .collect()
    }

    /// Evenly spaced windows, one row per floor, each shrunk as needed to
    /// keep a minimum gap to its neighbours and to the facade border.
    fn window_grid(&self, lu: f64, lv: f64, per_floor: u32, sizes: &[(f64, f64)]) -> Vec<Rect> {
        if per_floor == 0 || sizes.is_empty() {
            return Vec::new();
        }
        let slot_w = lu / per_floor as f64;
        let band_h = lv / sizes.len() as f64;
        let max_w = slot_w - self.structure.min_gap_fraction * lu;
        let max_h = band_h - self.structure.min_gap_fraction * lv;
        let mut holes = Vec::new();
        for (floor, &(w, h)) in sizes.iter().enumerate() {
            let (w, h) = (w.min(max_w), h.min(max_h));
            if w <= 0.0 || h <= 0.0 {
                continue;
            }
            let cv = (floor as f64 + 0.5) * band_h;
            for slot in 0..per_floor {
                let cu = (slot as f64 + 0.5) * slot_w;
                holes.push(Rect::new(cu - 0.5 * w, cv - 0.5 * h, cu + 0.5 * w, cv + 0.5 * h));
            }
        }
        holes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn building(id: FamilyId, height: f64) -> (ModelFamily, ParamVector) {
        let fam = ModelFamily::new(id);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamVector::new(id);
        p.set(fam.key("mass/height"), height);
        let p = fam.resync_params(&p, &mut rng);
        (fam, p)
    }

    #[test]
    fn building_parameter_counts() {
        let fh = StructureConfig::default().floor_height;
        let (fam, p) = building(FamilyId::Building4f, 2.5 * fh);
        assert_eq!(fam.active_params(&p).unwrap().len(), 11);
        let (fam, p) = building(FamilyId::Building1f, 2.5 * fh);
        assert_eq!(fam.active_params(&p).unwrap().len(), 10);
    }

    #[test]
    fn sphere_always_has_four_parameters() {
        let fam = ModelFamily::new(FamilyId::Sphere);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let p = fam.sample_prior(&mut rng);
            assert_eq!(fam.active_params(&p).unwrap().len(), 4);
        }
    }

    #[test]
    fn missing_structural_key_is_an_error() {
        let fam = ModelFamily::new(FamilyId::Building4f);
        let err = fam.active_params(&ParamVector::new(FamilyId::Building4f)).unwrap_err();
        assert_eq!(err, GrammarError::MissingKey("building/mass/height".into()));
    }

    #[test]
    fn frame_instances() {
        let fam = ModelFamily::new(FamilyId::FrameFull);
        let p = ParamVector::new(FamilyId::FrameFull).with("frame/x", 1.0);
        let prims = fam.instantiate(&p).unwrap();
        assert_eq!(prims[0].measure(), 12.0);
        let empty = fam
            .instantiate(&ParamVector::new(FamilyId::FrameFull).with("frame/x", 2.0))
            .unwrap();
        assert_eq!(empty[0].measure(), 0.0);
        let quarter = ModelFamily::new(FamilyId::Frame1q).instantiate(&p.clone()).unwrap();
        assert_eq!(quarter[0].measure(), 3.0);
    }

    #[test]
    fn frame_measure_decreases_to_zero() {
        let fam = ModelFamily::new(FamilyId::FrameFull);
        let mut prev = f64::INFINITY;
        for i in 0..=40 {
            let x = i as f64 * 0.05;
            let m = fam.instantiate(&ParamVector::new(fam.id).with("frame/x", x)).unwrap()[0].measure();
            assert!((m - (16.0 - 4.0 * x * x)).abs() < 1e-9);
            assert!(m <= prev);
            prev = m;
        }
        assert!(prev.abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_is_invalid() {
        let fam = ModelFamily::new(FamilyId::FrameFull);
        let p = ParamVector::new(fam.id).with("frame/x", -0.1);
        assert!(matches!(
            fam.instantiate(&p),
            Err(GrammarError::InvalidParameter { .. })
        ));
        assert_eq!(fam.log_prior(&p), f64::NEG_INFINITY);
        assert_eq!(fam.log_prior(&p.clone().with("frame/x", 0.3)), 0.0);
        assert_eq!(fam.log_prior(&p.clone().with("frame/x", 1.7)), 0.0);
    }

    #[test]
    fn windows_share_size_within_a_floor() {
        let (fam, mut p) = building(FamilyId::Building4f, 5.0);
        p.set("building/F1/win_w", 0.9);
        p.set("building/F1/win_h", 1.1);
        p.set("building/F2/win_w", 0.5);
        p.set("building/F2/win_h", 0.7);
        let prims = fam.instantiate(&p).unwrap();
        assert_eq!(prims.len(), 4);
        let Primitive::Quad(front) = &prims[0] else { panic!() };
        assert_eq!(front.holes.len(), 8);
        let band = 2.5;
        for h in &front.holes {
            let (w, ht) = (h.u1 - h.u0, h.v1 - h.v0);
            if h.v0 < band {
                assert!((w - 0.9).abs() < 1e-12 && (ht - 1.1).abs() < 1e-12);
            } else {
                assert!((w - 0.5).abs() < 1e-12 && (ht - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_windows_are_clamped() {
        let (fam, mut p) = building(FamilyId::Building1f, 4.5);
        p.set("building/mass/length", 5.0);
        p.set("building/F1/win_w", 2.0);
        p.set("building/F1/win_h", 1.8);
        p.set("building/F2/win_w", 2.0);
        p.set("building/F2/win_h", 1.8);
        // HoledQuad::new validates disjointness and containment.
        let prims = fam.instantiate(&p).unwrap();
        let Primitive::Quad(q) = &prims[0] else { panic!() };
        assert_eq!(q.holes.len(), 8);
        assert!(prims[0].measure() > 0.0);
    }

    #[test]
    fn resync_keeps_vector_when_floor_count_unchanged() {
        let (fam, p) = building(FamilyId::Building4f, 5.0);
        let mut moved = p.clone();
        moved.set("building/mass/height", 5.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(fam.resync_params(&moved, &mut rng), moved);
    }

    #[test]
    fn resync_adds_exactly_the_new_floor() {
        let (fam, p) = building(FamilyId::Building4f, 5.0);
        let mut grown = p.clone();
        grown.set("building/mass/height", 6.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let synced = fam.resync_params(&grown, &mut rng);
        let added: Vec<_> = synced.values.keys().filter(|k| !grown.contains(k)).collect();
        assert_eq!(added.len(), 2);
        assert!(added.iter().all(|k| k.as_str().starts_with("building/F3/")));
        assert_eq!(fam.log_prior(&synced), 0.0);
    }

    #[test]
    fn shrinking_then_regrowing_restores_floor() {
        let (fam, p) = building(FamilyId::Building4f, 6.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f3 = (p.get("building/F3/win_w").unwrap(), p.get("building/F3/win_h").unwrap());
        let mut shrunk = p.clone();
        shrunk.set("building/mass/height", 5.0);
        let shrunk = fam.resync_params(&shrunk, &mut rng);
        assert_eq!(fam.active_params(&shrunk).unwrap().len(), 11);
        let mut regrown = shrunk.clone();
        regrown.set("building/mass/height", 6.5);
        let regrown = fam.resync_params(&regrown, &mut rng);
        assert_eq!(regrown.get("building/F3/win_w").unwrap(), f3.0);
        assert_eq!(regrown.get("building/F3/win_h").unwrap(), f3.1);
    }

    #[test]
    fn parameter_count_law_over_random_heights() {
        let fam = ModelFamily::new(FamilyId::Building4f);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let p = fam.sample_prior(&mut rng);
            let h = p.get("building/mass/height").unwrap();
            let n = (h / fam.structure.floor_height).floor() as usize;
            assert_eq!(fam.active_params(&p).unwrap().len(), 7 + 2 * n);
        }
    }

    #[test]
    fn instantiate_is_referentially_transparent() {
        let fam = ModelFamily::new(FamilyId::Building4f);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = fam.sample_prior(&mut rng);
        assert_eq!(fam.instantiate(&p).unwrap(), fam.instantiate(&p).unwrap());
    }

    #[test]
    fn facade_test_family_has_discrete_window_count() {
        let fam = ModelFamily::new(FamilyId::FacadeCorruptTest);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = fam.sample_prior(&mut rng);
        let active = fam.active_params(&p).unwrap();
        assert_eq!(active.len(), 9);
        assert_eq!(active.iter().filter(|d| !d.is_continuous()).count(), 1);
        let prims = fam.instantiate(&p).unwrap();
        let Primitive::Quad(q) = &prims[0] else { panic!() };
        let per_floor = p.get("facade/windows/windows_per_floor").unwrap() as usize;
        let floors = fam.floors_for_height(p.get("facade/mass/height").unwrap()) as usize;
        assert_eq!(q.holes.len(), per_floor * floors);
    }
}
