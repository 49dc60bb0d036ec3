//! Wavefront OBJ reader and writer (positions, normals, texture coordinates,
//! polygon faces).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_obj(&text)
}

#[derive(Clone, Copy)]
struct Corner {
    v: usize,
    vt: Option<usize>,
    vn: Option<usize>,
}

fn parse_floats<const N: usize>(fields: &[&str], line: usize) -> Result<[f64; N]> {
    if fields.len() < N {
        return Err(Error::Parse(format!("line {line}: expected {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f
            .parse()
            .map_err(|_| Error::Parse(format!("line {line}: bad number {f:?}")))?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index against `count`.
fn resolve(field: &str, count: usize, what: &str, line: usize) -> Result<usize> {
    let i: i64 = field
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad index {field:?}")))?;
    let idx = if i < 0 { count as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= count {
        return Err(Error::Parse(format!(
            "line {line}: face references {what} {i} of {count}"
        )));
    }
    Ok(idx as usize)
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut positions = Vec::new();
    let mut texcoords = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Vec<Vec<Corner>> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut fields = content.split_whitespace();
        let Some(tag) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        match tag {
            "v" => positions.push(Vec3::from_array(parse_floats::<3>(&rest, line)?)),
            "vt" => {
                let [u, v] = parse_floats::<2>(&rest, line)?;
                texcoords.push(Vec2::new(u, v));
            }
            "vn" => normals.push(Vec3::from_array(parse_floats::<3>(&rest, line)?)),
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::Parse(format!("line {line}: face with fewer than 3 vertices")));
                }
                let mut face = Vec::with_capacity(rest.len());
                for spec in rest {
                    let mut parts = spec.split('/');
                    let v = resolve(parts.next().unwrap_or(""), positions.len(), "vertex", line)?;
                    let vt = match parts.next() {
                        Some("") | None => None,
                        Some(s) => Some(resolve(s, texcoords.len(), "texcoord", line)?),
                    };
                    let vn = match parts.next() {
                        Some("") | None => None,
                        Some(s) => Some(resolve(s, normals.len(), "normal", line)?),
                    };
                    face.push(Corner { v, vt, vn });
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    if faces.is_empty() || positions.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let corners = faces.iter().flatten();
    let all_uv = corners.clone().all(|c| c.vt.is_some());
    let all_normals = corners.clone().all(|c| c.vn.is_some());

    // Vertices are split by (position, normal) pair; UVs live per corner.
    let mut remap: HashMap<(usize, Option<usize>), u32> = HashMap::new();
    let mut out_pos = Vec::new();
    let mut out_nrm = Vec::new();
    let mut triangles = Vec::new();
    let mut uvs = Vec::new();
    for face in &faces {
        let ids: Vec<u32> = face
            .iter()
            .map(|c| {
                let key = (c.v, if all_normals { c.vn } else { None });
                *remap.entry(key).or_insert_with(|| {
                    out_pos.push(positions[c.v]);
                    if let Some(vn) = key.1 {
                        out_nrm.push(normals[vn]);
                    }
                    (out_pos.len() - 1) as u32
                })
            })
            .collect();
        for k in 1..face.len() - 1 {
            triangles.push([ids[0], ids[k], ids[k + 1]]);
            if all_uv {
                for c in [face[0], face[k], face[k + 1]] {
                    uvs.push(texcoords[c.vt.unwrap()]);
                }
            }
        }
    }
    Mesh::new(out_pos, triangles, all_normals.then_some(out_nrm), uvs, None)
}

/// Serializes positions, normals and per-corner UVs. Every corner gets its
/// own `vt` record.
pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, format_obj(mesh)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn format_obj(mesh: &Mesh) -> String {
    let mut s = String::new();
    for p in mesh.positions() {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for n in mesh.vertex_normals() {
        let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
    }
    for uv in mesh.uvs() {
        let _ = writeln!(s, "vt {} {}", uv.x, uv.y);
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        s.push('f');
        for (c, &v) in tri.iter().enumerate() {
            if mesh.has_uvs() {
                let _ = write!(s, " {}/{}/{}", v + 1, 3 * t + c + 1, v + 1);
            } else {
                let _ = write!(s, " {}//{}", v + 1, v + 1);
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    const CUBE_8: &str = "\
v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1
vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1
f 1/1 4/2 3/3 2/4\nf 5/1 6/2 7/3 8/4\nf 1/1 2/2 6/3 5/4
f 2/1 3/2 7/3 6/4\nf 3/1 4/2 8/3 7/4\nf 4/1 1/2 5/3 8/4
";

    #[test]
    fn quad_faces_fan_into_twelve_triangles() {
        let m = parse_obj(CUBE_8).unwrap();
        assert_eq!(m.triangle_count(), 12);
        assert_eq!(m.positions().len(), 8);
        assert!(m.has_uvs());
    }

    #[test]
    fn out_of_range_vertex_is_parse_error() {
        let text = CUBE_8.replace("f 1/1 4/2 3/3 2/4", "f 1/1 4/2 9/3 2/4");
        let err = parse_obj(&text).unwrap_err();
        assert!(matches!(&err, Error::Parse(m) if m.contains("vertex 9 of 8")), "{err}");
    }

    #[test]
    fn missing_texcoords_yield_no_uvs() {
        let text: String = CUBE_8
            .lines()
            .filter(|l| !l.starts_with("vt"))
            .map(|l| {
                l.split_whitespace()
                    .map(|f| f.split('/').next().unwrap().to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
                    + "\n"
            })
            .collect();
        assert!(!parse_obj(&text).unwrap().has_uvs());
    }

    #[test]
    fn roundtrip_preserves_primitive() {
        let cube = primitives::cube();
        let back = parse_obj(&format_obj(&cube)).unwrap();
        assert_eq!(back.triangles(), cube.triangles());
        for (a, b) in back.uvs().iter().zip(cube.uvs()) {
            assert!((*a - *b).x.abs() < 1e-12 && (*a - *b).y.abs() < 1e-12);
        }
        assert_eq!(back.chart_ids().iter().max(), Some(&5));
    }

    #[test]
    fn negative_indices_are_relative() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }
}
