//! Wavefront OBJ import/export. Part labels ride on the face groups
//! `g top` / `g bottom`; files without groups load as single-part (bottom).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::real::Real;

use super::{Mesh, PartId};

pub fn read_obj<S: Real>(path: &Path) -> Result<Mesh<S>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_obj(&text, &path.display().to_string())
}

fn parse_obj<S: Real>(text: &str, path: &str) -> Result<Mesh<S>> {
    let mut vertices: Vec<Vector3<S>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_parts: Vec<PartId> = Vec::new();
    let mut group = PartId::Bottom;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        let bad = |reason: &str| Error::format(path, format!("line {}: {reason}", lineno + 1));
        match tokens.next() {
            Some("v") => {
                let mut coords = [S::ZERO; 3];
                for c in &mut coords {
                    let tok = tokens.next().ok_or_else(|| bad("vertex needs 3 coords"))?;
                    let val: f64 = tok
                        .parse()
                        .map_err(|_| bad(&format!("bad coordinate {tok:?}")))?;
                    *c = S::c(val);
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("g") | Some("o") => {
                group = match tokens.next() {
                    Some("top") => PartId::Top,
                    Some("bottom") => PartId::Bottom,
                    Some(other) => {
                        return Err(bad(&format!(
                            "unknown group {other:?}: expected top or bottom"
                        )))
                    }
                    None => PartId::Bottom,
                };
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(4);
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| bad(&format!("bad face index {tok:?}")))?;
                    if i < 1 || i as usize > vertices.len() {
                        return Err(bad(&format!("face index {i} out of range")));
                    }
                    idx.push(i as usize - 1);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 indices"));
                }
                // fan-triangulate polygons
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    face_parts.push(group);
                }
            }
            _ => {} // comments, normals, texture coords
        }
    }

    // vertices inherit their faces' part; unreferenced ones default to bottom
    let mut part_ids = vec![None; vertices.len()];
    for (f, part) in faces.iter().zip(&face_parts) {
        for &i in f {
            match part_ids[i] {
                None => part_ids[i] = Some(*part),
                Some(p) if p == *part => {}
                Some(_) => {
                    return Err(Error::format(
                        path,
                        format!("vertex {} is used by faces of both parts", i + 1),
                    ))
                }
            }
        }
    }
    let part_ids = part_ids
        .into_iter()
        .map(|p| p.unwrap_or(PartId::Bottom))
        .collect();

    Mesh::new(vertices, faces, part_ids)
}

pub fn write_obj<S: Real>(mesh: &Mesh<S>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        // shortest round-trip float formatting keeps re-imports bit-identical
        writeln!(out, "v {:?} {:?} {:?}", v.x.to64(), v.y.to64(), v.z.to64()).unwrap();
    }
    for part in [PartId::Top, PartId::Bottom] {
        let faces: Vec<_> = mesh
            .faces
            .iter()
            .filter(|f| mesh.part_ids[f[0]] == part)
            .collect();
        if faces.is_empty() {
            continue;
        }
        writeln!(
            out,
            "g {}",
            match part {
                PartId::Top => "top",
                PartId::Bottom => "bottom",
            }
        )
        .unwrap();
        for f in faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
    }
    crate::pipeline::atomic_write(path, out.as_bytes())
}
