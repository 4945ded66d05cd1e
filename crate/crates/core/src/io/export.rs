//! ASCII OBJ snapshots of a model divided at a viewing level.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::Vector3;

use super::{write_atomic, IoError};
use crate::geometry::Primitive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportStats {
    pub vertices: usize,
    pub faces: usize,
}

/// OBJ text for `primitives` divided at `eta_view`. Each planar cell becomes
/// a square of 4 vertices and 2 triangles; sphere lattice points are written
/// as bare vertices.
pub fn model_obj(primitives: &[Primitive], eta_view: u32) -> Result<(String, ExportStats), IoError> {
    if eta_view < 1 {
        return Err(IoError::Config("eta_view must be at least 1".into()));
    }
    let mut body = String::new();
    let mut stats = ExportStats { vertices: 0, faces: 0 };
    for prim in primitives {
        let axes: Option<(Vector3<f64>, Vector3<f64>)> = match prim {
            Primitive::Frame(f) => Some((f.pose.rotation * Vector3::x(), f.pose.rotation * Vector3::y())),
            Primitive::Quad(q) => Some((q.u, q.v)),
            Primitive::Sphere(_) => None,
        };
        for cell in prim.divide(eta_view) {
            let c = cell.center;
            match axes {
                Some((u, v)) => {
                    let half = 0.5 * cell.measure.sqrt();
                    for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                        let p = c + u * (su * half) + v * (sv * half);
                        let _ = writeln!(body, "v {:.6} {:.6} {:.6}", p.x, p.y, p.z);
                    }
                    let b = stats.vertices + 1;
                    let _ = writeln!(body, "f {} {} {}", b, b + 1, b + 2);
                    let _ = writeln!(body, "f {} {} {}", b, b + 2, b + 3);
                    stats.vertices += 4;
                    stats.faces += 2;
                }
                None => {
                    let _ = writeln!(body, "v {:.6} {:.6} {:.6}", c.x, c.y, c.z);
                    stats.vertices += 1;
                }
            }
        }
    }
    let header = format!(
        "# level {eta_view}: 4 vertices and 2 triangles per planar cell, 1 vertex per sphere lattice point\n# vertices {} faces {}\n",
        stats.vertices, stats.faces
    );
    Ok((header + &body, stats))
}

pub fn export_model(primitives: &[Primitive], eta_view: u32, path: &Path) -> Result<ExportStats, IoError> {
    let (text, stats) = model_obj(primitives, eta_view)?;
    if stats.vertices == 0 {
        warn!("exporting an empty model to {}", path.display());
    }
    write_atomic(path, text.as_bytes())?;
    Ok(stats)
}
