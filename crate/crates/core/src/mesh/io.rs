use std::fmt::Write as _;
use std::path::Path;

use super::TexturedMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(Error::param(format!("unknown mesh extension for {}", path.display()))),
        }
    }
}

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `mesh` as ASCII OBJ (with `v x y z r g b` colors) or PLY.
pub fn export_mesh(mesh: &TexturedMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let mut s = String::new();
    match format {
        MeshFormat::Obj => {
            for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
                let _ = writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
            }
            for f in &mesh.faces {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
        MeshFormat::Ply => {
            let _ = write!(
                s,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
                 property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
                 property list uchar int vertex_indices\nend_header\n",
                mesh.vertices.len(),
                mesh.faces.len()
            );
            for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
                let _ = writeln!(s, "{} {} {} {} {} {}", v[0], v[1], v[2], to_byte(c[0]), to_byte(c[1]), to_byte(c[2]));
            }
            for f in &mesh.faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, what: &str) -> Error {
    Error::param(format!("{}: {what}", path.display()))
}

fn nums<T: std::str::FromStr>(path: &Path, parts: &[&str]) -> Result<Vec<T>> {
    parts.iter().map(|p| p.parse::<T>().map_err(|_| bad(path, "malformed number"))).collect()
}

pub fn import_mesh(path: &Path) -> Result<TexturedMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = TexturedMesh::default();
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => {
            for line in text.lines() {
                let parts: Vec<&str> = line.split_whitespace().collect();
                match parts.first() {
                    Some(&"v") => {
                        let v: Vec<f64> = nums(path, &parts[1..])?;
                        if v.len() < 3 {
                            return Err(bad(path, "vertex needs three coordinates"));
                        }
                        mesh.vertices.push([v[0], v[1], v[2]]);
                        mesh.colors.push(if v.len() >= 6 { [v[3], v[4], v[5]] } else { [0.5; 3] });
                    }
                    Some(&"f") => {
                        let idx: Vec<u32> = parts[1..]
                            .iter()
                            .map(|p| p.split('/').next().unwrap_or("").parse::<u32>().map_err(|_| bad(path, "malformed face")))
                            .collect::<Result<_>>()?;
                        if idx.len() != 3 || idx.contains(&0) {
                            return Err(bad(path, "only 1-based triangles are supported"));
                        }
                        mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                    }
                    _ => {}
                }
            }
        }
        MeshFormat::Ply => {
            let mut lines = text.lines();
            let (mut nv, mut nf) = (0usize, 0usize);
            for line in lines.by_ref() {
                let parts: Vec<&str> = line.split_whitespace().collect();
                match parts.as_slice() {
                    ["element", "vertex", n] => nv = n.parse().map_err(|_| bad(path, "vertex count"))?,
                    ["element", "face", n] => nf = n.parse().map_err(|_| bad(path, "face count"))?,
                    ["end_header"] => break,
                    _ => {}
                }
            }
            for _ in 0..nv {
                let parts: Vec<&str> = lines.next().ok_or_else(|| bad(path, "truncated vertices"))?.split_whitespace().collect();
                if parts.len() != 6 {
                    return Err(bad(path, "vertex line needs 6 fields"));
                }
                let p: Vec<f64> = nums(path, &parts[..3])?;
                let c: Vec<u8> = nums(path, &parts[3..])?;
                mesh.vertices.push([p[0], p[1], p[2]]);
                mesh.colors.push(c.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>().try_into().expect("three channels"));
            }
            for _ in 0..nf {
                let parts: Vec<&str> = lines.next().ok_or_else(|| bad(path, "truncated faces"))?.split_whitespace().collect();
                let v: Vec<u32> = nums(path, &parts)?;
                if v.len() != 4 || v[0] != 3 {
                    return Err(bad(path, "only triangles are supported"));
                }
                mesh.faces.push([v[1], v[2], v[3]]);
            }
        }
    }
    if mesh.faces.iter().flatten().any(|&v| v as usize >= mesh.vertices.len()) {
        return Err(bad(path, "face index out of range"));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TexturedMesh {
        TexturedMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.25], [0.0, 1.0, -0.5]],
            faces: vec![[0, 1, 2]],
            colors: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    #[test]
    fn round_trips_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["m.obj", "m.ply"] {
            let path = dir.path().join(name);
            export_mesh(&tri(), &path, MeshFormat::from_path(&path).unwrap()).unwrap();
            let back = import_mesh(&path).unwrap();
            assert_eq!(back.faces, tri().faces);
            for (a, b) in back.vertices.iter().zip(&tri().vertices) {
                assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-9));
            }
            for (a, b) in back.colors.iter().zip(&tri().colors) {
                assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1.0 / 255.0));
            }
        }
    }

    #[test]
    fn unknown_extension_is_rejected() {
        assert!(MeshFormat::from_path(Path::new("x.stl")).is_err());
    }
}
