use std::io::Write;
use std::path::Path;

use super::{Mesh, MeshError, Vec3};

/// Reads the triangle subset of Wavefront OBJ: `v x y z` and `f i j k`
/// (1-based). Comment, `vt` and `vn` lines are skipped; anything else is an
/// error so that unsupported content is never silently dropped.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let rest: Vec<&str> = tokens.collect();
        let err = |message: String| MeshError::Parse { line, message };
        match keyword {
            "vt" | "vn" => {}
            "v" => {
                if rest.len() != 3 {
                    return Err(err(format!("expected 3 coordinates, found {}", rest.len())));
                }
                let mut p = [0.0; 3];
                for (k, tok) in rest.iter().enumerate() {
                    p[k] = tok.parse().map_err(|_| err(format!("bad coordinate '{tok}'")))?;
                }
                vertices.push(p);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(format!("only triangles are supported, face has {} corners", rest.len())));
                }
                let mut f = [0usize; 3];
                for (k, tok) in rest.iter().enumerate() {
                    // `f 1/1/1 ...` style references: the position index comes first
                    let head = tok.split('/').next().unwrap_or_default();
                    let i: usize = head.parse().map_err(|_| err(format!("bad vertex index '{tok}'")))?;
                    if i == 0 {
                        return Err(err("vertex indices are 1-based".into()));
                    }
                    f[k] = i - 1;
                }
                faces.push(f);
            }
            other => return Err(err(format!("unsupported statement '{other}'"))),
        }
    }
    Mesh::new(vertices, faces)
}

pub fn write_obj(mesh: &Mesh, mut out: impl Write) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
