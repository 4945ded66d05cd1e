//! ASCII point-cloud formats: whitespace-separated `x y z` lines and a
//! minimal ASCII PLY.
//!
//! Both formats carry an optional resolution in a comment
//! (`# resolution 0.02` or `comment resolution 0.02`). Without it the
//! resolution is estimated as the median nearest-neighbor spacing.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic, IoError};
use crate::geometry::{Point3, PointCloud};
use crate::metrics::median_spacing;
use crate::spatial_index::NnIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::Xyz => "xyz",
            CloudFormat::PlyAscii => "ply",
        }
    }

    pub fn from_path(path: &Path) -> Option<CloudFormat> {
        match path.extension()?.to_str()? {
            "ply" => Some(CloudFormat::PlyAscii),
            "xyz" | "txt" => Some(CloudFormat::Xyz),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xyz" => Ok(CloudFormat::Xyz),
            "ply" | "ply_ascii" => Ok(CloudFormat::PlyAscii),
            _ => Err(format!("unknown cloud format {s:?} (expected xyz or ply)")),
        }
    }
}

fn parse_resolution(rest: &str) -> Option<f64> {
    let mut it = rest.split_whitespace();
    (it.next()? == "resolution").then_some(())?;
    it.next()?.parse().ok().filter(|r: &f64| *r > 0.0 && r.is_finite())
}

fn parse_row(line: &str, lineno: usize, columns: &[usize; 3], width: Option<usize>) -> Result<Point3, IoError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let expected = width.unwrap_or(3);
    if fields.len() != expected {
        return Err(IoError::Parse {
            line: lineno,
            msg: format!("expected {expected} values, found {}", fields.len()),
        });
    }
    let mut xyz = [0.0; 3];
    for (slot, &col) in xyz.iter_mut().zip(columns) {
        *slot = fields[col].parse::<f64>().map_err(|_| IoError::Parse {
            line: lineno,
            msg: format!("not a number: {:?}", fields[col]),
        })?;
        if !slot.is_finite() {
            return Err(IoError::Parse {
                line: lineno,
                msg: "non-finite coordinate".into(),
            });
        }
    }
    Ok(Point3::new(xyz[0], xyz[1], xyz[2]))
}

pub fn parse_xyz(text: &str) -> Result<PointCloud, IoError> {
    let mut points = Vec::new();
    let mut resolution = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            resolution = resolution.or_else(|| parse_resolution(rest));
            continue;
        }
        points.push(parse_row(line, i + 1, &[0, 1, 2], None)?);
    }
    Ok(finish(points, resolution))
}

pub fn parse_ply(text: &str) -> Result<PointCloud, IoError> {
    let mut lines = text.lines().enumerate();
    let header_err = |line: usize, msg: &str| IoError::Parse {
        line,
        msg: msg.to_string(),
    };
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(header_err(1, "missing ply magic")),
    }
    let mut declared = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut resolution = None;
    let mut format_ok = false;
    let mut ended = false;
    for (i, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => format_ok = true,
            ["format", ..] => return Err(header_err(i + 1, "only ascii ply is supported")),
            ["comment", rest @ ..] => resolution = resolution.or_else(|| parse_resolution(&rest.join(" "))),
            ["element", "vertex", n] => {
                declared = Some(n.parse::<usize>().map_err(|_| header_err(i + 1, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", .., name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => {
                ended = true;
                break;
            }
            [] => {}
            _ => return Err(header_err(i + 1, "unrecognized header line")),
        }
    }
    if !ended {
        return Err(header_err(text.lines().count(), "missing end_header"));
    }
    if !format_ok {
        return Err(header_err(2, "missing format line"));
    }
    let declared = declared.ok_or_else(|| header_err(1, "missing element vertex"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| header_err(1, &format!("vertex has no {name} property")))
    };
    let columns = [col("x")?, col("y")?, col("z")?];
    let mut points = Vec::with_capacity(declared);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if points.len() == declared {
            return Err(IoError::CountMismatch {
                declared,
                found: declared + 1,
            });
        }
        points.push(parse_row(line, i + 1, &columns, Some(props.len()))?);
    }
    if points.len() != declared {
        return Err(IoError::CountMismatch {
            declared,
            found: points.len(),
        });
    }
    Ok(finish(points, resolution))
}

fn finish(points: Vec<Point3>, resolution: Option<f64>) -> PointCloud {
    let mut cloud = PointCloud::new(points);
    cloud.resolution_hint = resolution.or_else(|| {
        if cloud.len() < 2 {
            return None;
        }
        let idx = NnIndex::build(&cloud).ok()?;
        Some(median_spacing(&idx)).filter(|s| *s > 0.0)
    });
    cloud
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud, IoError> {
    let text = read_text(path)?;
    match format {
        CloudFormat::Xyz => parse_xyz(&text),
        CloudFormat::PlyAscii => parse_ply(&text),
    }
}

pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> String {
    let mut out = String::new();
    match format {
        CloudFormat::Xyz => {
            if let Some(r) = cloud.resolution_hint {
                let _ = writeln!(out, "# resolution {r}");
            }
        }
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            if let Some(r) = cloud.resolution_hint {
                let _ = writeln!(out, "comment resolution {r}");
            }
            let _ = writeln!(out, "element vertex {}", cloud.len());
            out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
        }
    }
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<(), IoError> {
    write_atomic(path, format_cloud(cloud, format).as_bytes())
}
