//! File formats: ASCII XYZ clouds and the OBJ subset (v / triangular f).

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{GeometryError, Point3, PointCloud, TriangleMesh};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse { line, message: message.into() }
}

/// Reads an ASCII cloud: one "x y z" triple per line, "#" comments and blank
/// lines allowed. Lines with anything other than three numeric fields are
/// rejected with their line number.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud, FormatError> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let mut coords = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            coords[k] = f
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("non-numeric field '{f}'")))?;
            if !coords[k].is_finite() {
                return Err(parse_err(line_no, format!("non-finite coordinate '{f}'")));
            }
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points, "file"))
}

/// Writes a cloud in the ASCII XYZ format. Coordinates use the shortest
/// exact decimal representation so rereads round-trip bit-identically.
pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(cloud.len() * 24);
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).expect("write to vec");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the OBJ subset: "v x y z" vertices and triangular "f i j k" faces
/// with 1-based indices. Faces of any other arity are a parse error naming
/// the line number, as are slash-style index tuples.
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh, FormatError> {
    let text = fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let keyword = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        match keyword {
            "v" => {
                if rest.len() != 3 {
                    return Err(parse_err(
                        line_no,
                        format!("vertex needs 3 coordinates, found {}", rest.len()),
                    ));
                }
                let mut c = [0.0f64; 3];
                for (k, f) in rest.iter().enumerate() {
                    c[k] = f
                        .parse::<f64>()
                        .map_err(|_| parse_err(line_no, format!("non-numeric coordinate '{f}'")))?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(parse_err(
                        line_no,
                        format!("only triangular faces supported, found {} indices", rest.len()),
                    ));
                }
                let mut idx = [0usize; 3];
                for (k, f) in rest.iter().enumerate() {
                    let v: usize = f
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("invalid face index '{f}'")))?;
                    if v == 0 {
                        return Err(parse_err(line_no, "face indices are 1-based"));
                    }
                    idx[k] = v - 1;
                }
                faces.push(idx);
            }
            _ => {
                return Err(parse_err(line_no, format!("unsupported keyword '{keyword}'")));
            }
        }
    }
    TriangleMesh::new(vertices, faces).map_err(FormatError::from)
}
