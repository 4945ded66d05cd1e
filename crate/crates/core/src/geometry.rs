//! Geometric primitives, their measures, rigid placement, coarse-to-fine
//! dividing into sub-models and uniform point sampling.
//!
//! Every primitive is a surface; its measure is its area. Dividing a
//! primitive at level `eta` overlays a `2^eta x 2^eta` grid on its bounding
//! square (planar primitives) or places `4^eta` spherical Fibonacci lattice
//! points (spheres) and keeps one center point per cell.

use std::f64::consts::PI;
use std::sync::OnceLock;

use bitflags::bitflags;
use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("resolution coarser than extent (delta {delta} > gamma {gamma})")]
    ResolutionCoarserThanExtent { gamma: f64, delta: f64 },
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
    #[error("empty point cloud")]
    Empty,
}

/// A finite, ordered set of 3D points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Sampling spacing, when known.
    pub resolution_hint: Option<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            resolution_hint: None,
        }
    }

    pub fn with_resolution(mut self, resolution: f64) -> Self {
        self.resolution_hint = Some(resolution);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3> {
        self.points.iter()
    }

    /// Checks the metric preconditions: non-empty, all coordinates finite.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::Empty);
        }
        match self
            .points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            Some(i) => Err(GeometryError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        Self::new(points)
    }
}

bitflags! {
    /// Quadrants of a frame region, counted counter-clockwise from +x/+y.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Quadrants: u8 {
        const I = 0b0001;
        const II = 0b0010;
        const III = 0b0100;
        const IV = 0b1000;
    }
}

impl Quadrants {
    /// Quadrant containing the in-plane point. Points on an axis belong to
    /// the quadrant on their non-negative side.
    pub fn of(x: f64, y: f64) -> Quadrants {
        match (x >= 0.0, y >= 0.0) {
            (true, true) => Quadrants::I,
            (false, true) => Quadrants::II,
            (false, false) => Quadrants::III,
            (true, false) => Quadrants::IV,
        }
    }

    pub fn count(self) -> u32 {
        self.bits().count_ones()
    }
}

/// Ring-like planar region between a centered outer and inner square,
/// restricted to a subset of its quadrants. Lies in the local z = 0 plane of
/// `pose`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRegion {
    pub pose: Isometry3<f64>,
    pub outer_len: f64,
    pub inner_len: f64,
    pub quadrants: Quadrants,
}

impl FrameRegion {
    /// `inner_len == outer_len` is allowed and yields the empty model.
    pub fn new(center: Point3, outer_len: f64, inner_len: f64, quadrants: Quadrants) -> Result<Self, GeometryError> {
        if !(outer_len > 0.0 && outer_len.is_finite()) {
            return Err(GeometryError::InvalidPrimitive(format!(
                "outer length {outer_len} must be positive"
            )));
        }
        if !(0.0..=outer_len).contains(&inner_len) {
            return Err(GeometryError::InvalidPrimitive(format!(
                "inner length {inner_len} outside [0, {outer_len}]"
            )));
        }
        Ok(Self {
            pose: Isometry3::from_parts(Translation3::from(center.coords), UnitQuaternion::identity()),
            outer_len,
            inner_len,
            quadrants,
        })
    }

    pub fn center(&self) -> Point3 {
        Point3::from(self.pose.translation.vector)
    }

    /// Membership test in local plane coordinates; the inner square is open.
    fn contains_local(&self, x: f64, y: f64) -> bool {
        let half = 0.5 * self.outer_len;
        let m = x.abs().max(y.abs());
        m <= half && m >= 0.5 * self.inner_len && self.quadrants.contains(Quadrants::of(x, y))
    }
}

/// Axis-aligned rectangle in a quad's `(u, v)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl Rect {
    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Self {
        Self { u0, v0, u1, v1 }
    }

    pub fn area(&self) -> f64 {
        (self.u1 - self.u0) * (self.v1 - self.v0)
    }

    /// Open-interior containment.
    fn contains(&self, u: f64, v: f64) -> bool {
        u > self.u0 && u < self.u1 && v > self.v0 && v < self.v1
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.u0 < other.u1 && other.u0 < self.u1 && self.v0 < other.v1 && other.v0 < self.v1
    }
}

/// Rectangle `origin + [0, lu] * u + [0, lv] * v` with rectangular holes.
#[derive(Debug, Clone, PartialEq)]
pub struct HoledQuad {
    pub origin: Point3,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub lu: f64,
    pub lv: f64,
    pub holes: Vec<Rect>,
}

impl HoledQuad {
    pub fn new(
        origin: Point3,
        u: Vector3<f64>,
        v: Vector3<f64>,
        lu: f64,
        lv: f64,
        holes: Vec<Rect>,
    ) -> Result<Self, GeometryError> {
        let invalid = |msg: String| Err(GeometryError::InvalidPrimitive(msg));
        if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 || u.dot(&v).abs() > 1e-9 {
            return invalid("edge directions must be orthonormal".into());
        }
        if !(lu > 0.0 && lv > 0.0 && lu.is_finite() && lv.is_finite()) {
            return invalid(format!("extents {lu} x {lv} must be positive"));
        }
        for (i, h) in holes.iter().enumerate() {
            if !(h.u0 < h.u1 && h.v0 < h.v1) {
                return invalid(format!("hole {i} is degenerate"));
            }
            if h.u0 < 0.0 || h.v0 < 0.0 || h.u1 > lu || h.v1 > lv {
                return invalid(format!("hole {i} leaves the quad"));
            }
            if holes[..i].iter().any(|o| o.overlaps(h)) {
                return invalid(format!("hole {i} overlaps another hole"));
            }
        }
        Ok(Self {
            origin,
            u,
            v,
            lu,
            lv,
            holes,
        })
    }

    fn contains_local(&self, cu: f64, cv: f64) -> bool {
        (0.0..=self.lu).contains(&cu) && (0.0..=self.lv).contains(&cv) && !self.holes.iter().any(|h| h.contains(cu, cv))
    }

    fn at(&self, cu: f64, cv: f64) -> Point3 {
        self.origin + self.u * cu + self.v * cv
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Point3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidPrimitive(format!(
                "radius {radius} must be positive and finite"
            )));
        }
        Ok(Self { center, radius })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Frame(FrameRegion),
    Quad(HoledQuad),
    Sphere(Sphere),
}

/// Identifies one cell of a division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellId {
    Grid { level: u32, row: u32, col: u32 },
    Lattice { level: u32, index: u32 },
}

/// One cell of a divided primitive, represented by its center point.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub center: Point3,
    pub measure: f64,
    pub cell: CellId,
}

impl Primitive {
    /// Analytic area.
    pub fn measure(&self) -> f64 {
        match self {
            Primitive::Frame(f) => {
                (f.outer_len * f.outer_len - f.inner_len * f.inner_len) * f.quadrants.count() as f64 / 4.0
            }
            Primitive::Quad(q) => q.lu * q.lv - q.holes.iter().map(Rect::area).sum::<f64>(),
            Primitive::Sphere(s) => 4.0 * PI * s.radius * s.radius,
        }
    }

    /// Characteristic extent used for the top dividing level: the side of the
    /// bounding square for planar pieces, the great-circle length for spheres.
    pub fn gamma(&self) -> f64 {
        match self {
            Primitive::Frame(f) => f.outer_len,
            Primitive::Quad(q) => q.lu.max(q.lv),
            Primitive::Sphere(s) => 2.0 * PI * s.radius,
        }
    }

    /// Splits the primitive into non-overlapping cells at dividing level `eta`.
    pub fn divide(&self, eta: u32) -> Vec<SubModel> {
        match self {
            Primitive::Frame(f) => divide_frame(f, eta),
            Primitive::Quad(q) => divide_quad(q, eta),
            Primitive::Sphere(s) => divide_sphere(s, eta),
        }
    }

    /// Rotates about the vertical (z) axis through the world origin, then
    /// translates by `t`.
    pub fn rigid_place(&self, rot_z: f64, t: Vector3<f64>) -> Primitive {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), rot_z);
        match self {
            Primitive::Frame(f) => {
                let motion = Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&rot));
                Primitive::Frame(FrameRegion {
                    pose: motion * f.pose,
                    ..f.clone()
                })
            }
            Primitive::Quad(q) => Primitive::Quad(HoledQuad {
                origin: rot * q.origin + t,
                u: rot * q.u,
                v: rot * q.v,
                ..q.clone()
            }),
            Primitive::Sphere(s) => Primitive::Sphere(Sphere {
                center: rot * s.center + t,
                radius: s.radius,
            }),
        }
    }

    /// Uniform surface sample with roughly `resolution` spacing. Planar
    /// primitives use a regular grid of cell centers; spheres use
    /// Marsaglia's rejection method with `round(area / resolution^2)` points.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, resolution: f64, rng: &mut R) -> Vec<Point3> {
        match self {
            Primitive::Frame(f) => {
                let n = ((f.outer_len / resolution).round() as usize).max(1);
                let side = f.outer_len / n as f64;
                let half = 0.5 * f.outer_len;
                let mut out = Vec::new();
                for row in 0..n {
                    let y = -half + (row as f64 + 0.5) * side;
                    for col in 0..n {
                        let x = -half + (col as f64 + 0.5) * side;
                        if f.contains_local(x, y) {
                            out.push(f.pose * Point3::new(x, y, 0.0));
                        }
                    }
                }
                out
            }
            Primitive::Quad(q) => {
                let nu = ((q.lu / resolution).round() as usize).max(1);
                let nv = ((q.lv / resolution).round() as usize).max(1);
                let (su, sv) = (q.lu / nu as f64, q.lv / nv as f64);
                let mut out = Vec::new();
                for j in 0..nv {
                    let cv = (j as f64 + 0.5) * sv;
                    for i in 0..nu {
                        let cu = (i as f64 + 0.5) * su;
                        if q.contains_local(cu, cv) {
                            out.push(q.at(cu, cv));
                        }
                    }
                }
                out
            }
            Primitive::Sphere(s) => {
                let count = ((self.measure() / (resolution * resolution)).round() as usize).max(1);
                (0..count).map(|_| s.center + marsaglia_unit(rng) * s.radius).collect()
            }
        }
    }

    /// Distance from `p` to the primitive's supporting surface when `p`
    /// projects onto the solid region, `None` otherwise.
    pub fn surface_distance(&self, p: &Point3) -> Option<f64> {
        match self {
            Primitive::Frame(f) => {
                let local = f.pose.inverse_transform_point(p);
                f.contains_local(local.x, local.y).then_some(local.z.abs())
            }
            Primitive::Quad(q) => {
                let d = p - q.origin;
                let (cu, cv) = (d.dot(&q.u), d.dot(&q.v));
                q.contains_local(cu, cv).then(|| d.dot(&q.normal()).abs())
            }
            Primitive::Sphere(s) => Some(((p - s.center).norm() - s.radius).abs()),
        }
    }
}

/// Largest measure-equivalent gamma over a model's primitives.
pub fn model_gamma(primitives: &[Primitive]) -> f64 {
    primitives.iter().map(Primitive::gamma).fold(0.0, f64::max)
}

/// Top dividing level `ceil(log2(gamma / delta + 1))`, at least 1.
pub fn eta_top(gamma: f64, delta: f64) -> Result<u32, GeometryError> {
    if !(delta > 0.0) || delta > gamma {
        return Err(GeometryError::ResolutionCoarserThanExtent { gamma, delta });
    }
    let exact = (gamma / delta + 1.0).log2();
    let nearest = exact.round();
    // log2 of an exact power of two can land a hair above the integer.
    let level = if (exact - nearest).abs() < 1e-9 {
        nearest
    } else {
        exact.ceil()
    };
    Ok((level as u32).max(1))
}

/// Dividing level whose center points represent a sampling at `resolution`:
/// `floor(log2(gamma / resolution + 1))`. A 4-unit square sampled at 0.02
/// maps to level 7 (cell side 1/32), at 0.01 to level 8.
pub fn sampling_level(gamma: f64, resolution: f64) -> u32 {
    let exact = (gamma / resolution + 1.0).log2();
    let nearest = exact.round();
    if (exact - nearest).abs() < 1e-9 {
        nearest as u32
    } else {
        exact.floor() as u32
    }
}

fn divide_frame(f: &FrameRegion, eta: u32) -> Vec<SubModel> {
    let n = 1u32 << eta;
    let side = f.outer_len / n as f64;
    let half = 0.5 * f.outer_len;
    let measure = side * side;
    let mut out = Vec::new();
    for row in 0..n {
        let y = -half + (row as f64 + 0.5) * side;
        for col in 0..n {
            let x = -half + (col as f64 + 0.5) * side;
            if f.contains_local(x, y) {
                out.push(SubModel {
                    center: f.pose * Point3::new(x, y, 0.0),
                    measure,
                    cell: CellId::Grid { level: eta, row, col },
                });
            }
        }
    }
    out
}

fn divide_quad(q: &HoledQuad, eta: u32) -> Vec<SubModel> {
    let gamma = q.lu.max(q.lv);
    let side = gamma / (1u64 << eta) as f64;
    let count = |len: f64| ((len / side - 1e-9).ceil() as u32).max(1);
    let (nu, nv) = (count(q.lu), count(q.lv));
    // The grid is centered on the quad so any overhang is split evenly and
    // every cell center stays inside the quad.
    let cu0 = 0.5 * q.lu - 0.5 * (nu - 1) as f64 * side;
    let cv0 = 0.5 * q.lv - 0.5 * (nv - 1) as f64 * side;
    let measure = side * side;
    let mut out = Vec::new();
    for row in 0..nv {
        let cv = cv0 + row as f64 * side;
        for col in 0..nu {
            let cu = cu0 + col as f64 * side;
            if q.contains_local(cu, cv) {
                out.push(SubModel {
                    center: q.at(cu, cv),
                    measure,
                    cell: CellId::Grid { level: eta, row, col },
                });
            }
        }
    }
    out
}

fn divide_sphere(s: &Sphere, eta: u32) -> Vec<SubModel> {
    let n = 1u64 << (2 * eta);
    let measure = 4.0 * PI * s.radius * s.radius / n as f64;
    let cached;
    let built;
    let dirs: &[Vector3<f64>] = match LATTICES.get(eta as usize) {
        Some(cell) => {
            cached = cell.get_or_init(|| morton_sorted(fibonacci_sphere(n as usize)));
            cached
        }
        None => {
            built = morton_sorted(fibonacci_sphere(n as usize));
            &built
        }
    };
    dirs.iter()
        .copied()
        .enumerate()
        .map(|(i, dir)| SubModel {
            center: s.center + dir * s.radius,
            measure,
            cell: CellId::Lattice {
                level: eta,
                index: i as u32,
            },
        })
        .collect()
}

/// Unit lattices for the levels used in practice, built once.
static LATTICES: [OnceLock<Vec<Vector3<f64>>>; 12] = [const { OnceLock::new() }; 12];

/// Reorders unit directions along a Z-order curve so neighbours in the list
/// are neighbours on the sphere.
fn morton_sorted(dirs: Vec<Vector3<f64>>) -> Vec<Vector3<f64>> {
    fn spread(v: u64) -> u64 {
        let mut x = v & 0x1f_ffff;
        x = (x | x << 32) & 0x1f_0000_0000_ffff;
        x = (x | x << 16) & 0x1f_0000_ff00_00ff;
        x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
        x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
        (x | x << 2) & 0x1249_2492_4924_9249
    }
    let quant = |c: f64| (((c + 1.0) * 0.5).clamp(0.0, 1.0) * 1_048_575.0) as u64;
    let mut keyed: Vec<(u64, usize)> = dirs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            (
                spread(quant(d.x)) | spread(quant(d.y)) << 1 | spread(quant(d.z)) << 2,
                i,
            )
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| dirs[i]).collect()
}

/// `n` near-uniform unit directions on the spherical Fibonacci lattice.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Uniform direction on the unit sphere (Marsaglia 1972).
pub fn marsaglia_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let x1: f64 = rng.gen_range(-1.0..1.0);
        let x2: f64 = rng.gen_range(-1.0..1.0);
        let s = x1 * x1 + x2 * x2;
        if s < 1.0 {
            let f = 2.0 * (1.0 - s).sqrt();
            return Vector3::new(x1 * f, x2 * f, 1.0 - 2.0 * s);
        }
    }
}
