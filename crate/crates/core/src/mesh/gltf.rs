//! glTF 2.0 subset: triangle-list primitives with POSITION, NORMAL and
//! TEXCOORD_0, read from `.gltf` (embedded or external buffers) or `.glb`,
//! and written as `.gltf` + `.bin` with a metallic-roughness material.
//!
//! glTF places the texture origin at the top-left, so V is flipped on the way
//! in and out.

use std::collections::HashMap;
use std::path::Path;

use base64::Engine;
use serde_json::{json, Value};

use super::Mesh;
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

const FLOAT: u64 = 5126;
const UNSIGNED_BYTE: u64 = 5121;
const UNSIGNED_SHORT: u64 = 5123;
const UNSIGNED_INT: u64 = 5125;
const ARRAY_BUFFER: u64 = 34962;
const ELEMENT_ARRAY_BUFFER: u64 = 34963;
const GLB_MAGIC: u32 = 0x4654_6C67;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Splits a GLB container into its JSON document and optional BIN chunk.
fn split_glb(bytes: &[u8]) -> Result<(Value, Option<Vec<u8>>)> {
    let u32_at = |o: usize| -> Result<u32> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| parse_err("truncated GLB"))
    };
    if u32_at(0)? != GLB_MAGIC || u32_at(4)? != 2 {
        return Err(parse_err("not a glTF 2.0 binary"));
    }
    let total = (u32_at(8)? as usize).min(bytes.len());
    let mut offset = 12;
    let mut doc = None;
    let mut bin = None;
    while offset + 8 <= total {
        let len = u32_at(offset)? as usize;
        let kind = u32_at(offset + 4)?;
        let body = bytes
            .get(offset + 8..offset + 8 + len)
            .ok_or_else(|| parse_err("truncated GLB chunk"))?;
        match kind {
            CHUNK_JSON => doc = Some(serde_json::from_slice(body).map_err(|e| parse_err(format!("GLB JSON: {e}")))?),
            CHUNK_BIN => bin = Some(body.to_vec()),
            _ => {}
        }
        offset += 8 + len;
    }
    Ok((doc.ok_or_else(|| parse_err("GLB has no JSON chunk"))?, bin))
}

fn load_buffers(doc: &Value, base: &Path, glb_bin: Option<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
    let mut glb_bin = glb_bin;
    let buffers = doc["buffers"].as_array().cloned().unwrap_or_default();
    buffers
        .iter()
        .map(|b| {
            let data = match b["uri"].as_str() {
                Some(uri) if uri.starts_with("data:") => {
                    let payload = uri
                        .split_once(";base64,")
                        .ok_or_else(|| parse_err("data URI is not base64"))?
                        .1;
                    base64::engine::general_purpose::STANDARD
                        .decode(payload)
                        .map_err(|e| parse_err(format!("base64: {e}")))?
                }
                Some(uri) => {
                    let p = base.join(uri);
                    std::fs::read(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?
                }
                None => glb_bin
                    .take()
                    .ok_or_else(|| parse_err("buffer without uri outside GLB"))?,
            };
            let declared = b["byteLength"].as_u64().unwrap_or(0) as usize;
            if data.len() < declared {
                return Err(parse_err("buffer shorter than byteLength"));
            }
            Ok(data)
        })
        .collect()
}

fn components(kind: &str) -> Result<usize> {
    Ok(match kind {
        "SCALAR" => 1,
        "VEC2" => 2,
        "VEC3" => 3,
        "VEC4" => 4,
        other => return Err(parse_err(format!("unsupported accessor type {other}"))),
    })
}

/// Reads accessor `index` as f64 rows of its component count.
fn read_accessor(doc: &Value, buffers: &[Vec<u8>], index: u64) -> Result<Vec<Vec<f64>>> {
    let acc = &doc["accessors"][index as usize];
    if acc.is_null() {
        return Err(parse_err(format!("accessor {index} missing")));
    }
    let count = acc["count"].as_u64().ok_or_else(|| parse_err("accessor.count"))? as usize;
    let ncomp = components(acc["type"].as_str().unwrap_or(""))?;
    let ctype = acc["componentType"].as_u64().unwrap_or(0);
    let csize = match ctype {
        FLOAT | UNSIGNED_INT => 4,
        UNSIGNED_SHORT => 2,
        UNSIGNED_BYTE => 1,
        other => return Err(parse_err(format!("unsupported componentType {other}"))),
    };
    let Some(view_index) = acc["bufferView"].as_u64() else {
        return Ok(vec![vec![0.0; ncomp]; count]);
    };
    let view = &doc["bufferViews"][view_index as usize];
    let buffer = buffers
        .get(view["buffer"].as_u64().unwrap_or(u64::MAX) as usize)
        .ok_or_else(|| parse_err("bufferView.buffer out of range"))?;
    let start = view["byteOffset"].as_u64().unwrap_or(0) as usize + acc["byteOffset"].as_u64().unwrap_or(0) as usize;
    let stride = view["byteStride"].as_u64().map(|s| s as usize).unwrap_or(ncomp * csize);
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let base = start + i * stride;
        let mut row = Vec::with_capacity(ncomp);
        for c in 0..ncomp {
            let o = base + c * csize;
            let b = buffer
                .get(o..o + csize)
                .ok_or_else(|| parse_err("accessor reads past end of buffer"))?;
            row.push(match ctype {
                FLOAT => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                UNSIGNED_INT => u32::from_le_bytes(b.try_into().unwrap()) as f64,
                UNSIGNED_SHORT => u16::from_le_bytes(b.try_into().unwrap()) as f64,
                _ => b[0] as f64,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_gltf(path: &Path) -> Result<Mesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (doc, bin) = if bytes.starts_with(b"glTF") {
        split_glb(&bytes)?
    } else {
        let doc: Value = serde_json::from_slice(&bytes).map_err(|e| parse_err(format!("glTF JSON: {e}")))?;
        (doc, None)
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let buffers = load_buffers(&doc, base, bin)?;
    mesh_from_document(&doc, &buffers)
}

/// Concatenates every triangle primitive of every mesh. Node transforms are
/// not applied.
pub fn mesh_from_document(doc: &Value, buffers: &[Vec<u8>]) -> Result<Mesh> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    let mut uvs = Vec::new();
    let mut all_normals = true;
    let mut all_uvs = true;
    for mesh in doc["meshes"].as_array().into_iter().flatten() {
        for prim in mesh["primitives"].as_array().into_iter().flatten() {
            if prim["mode"].as_u64().unwrap_or(4) != 4 {
                return Err(parse_err("only triangle-list primitives are supported"));
            }
            let attrs = &prim["attributes"];
            let pos_index = attrs["POSITION"]
                .as_u64()
                .ok_or_else(|| parse_err("primitive without POSITION"))?;
            let pos = read_accessor(doc, buffers, pos_index)?;
            let base = positions.len() as u32;
            let n = pos.len();
            positions.extend(pos.iter().map(|r| Vec3::new(r[0], r[1], r[2])));
            match attrs["NORMAL"].as_u64() {
                Some(i) => normals.extend(
                    read_accessor(doc, buffers, i)?
                        .iter()
                        .map(|r| Vec3::new(r[0], r[1], r[2])),
                ),
                None => all_normals = false,
            }
            let texcoords: Option<Vec<Vec2>> = match attrs["TEXCOORD_0"].as_u64() {
                Some(i) => Some(
                    read_accessor(doc, buffers, i)?
                        .iter()
                        .map(|r| Vec2::new(r[0], 1.0 - r[1]))
                        .collect(),
                ),
                None => {
                    all_uvs = false;
                    None
                }
            };
            let indices: Vec<u32> = match prim["indices"].as_u64() {
                Some(i) => read_accessor(doc, buffers, i)?.iter().map(|r| r[0] as u32).collect(),
                None => (0..n as u32).collect(),
            };
            if indices.len() % 3 != 0 {
                return Err(parse_err("index count is not a multiple of 3"));
            }
            for tri in indices.chunks(3) {
                if let Some(&bad) = tri.iter().find(|&&i| i as usize >= n) {
                    return Err(parse_err(format!("index {bad} out of range for {n} vertices")));
                }
                triangles.push([tri[0] + base, tri[1] + base, tri[2] + base]);
                if let Some(tc) = &texcoords {
                    uvs.extend(tri.iter().map(|&i| tc[i as usize]));
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !all_uvs {
        uvs.clear();
    }
    Mesh::new(positions, triangles, all_normals.then_some(normals), uvs, None)
}

/// Texture image references for the exported material.
#[derive(Debug, Clone)]
pub struct MaterialImages {
    pub base_color_uri: String,
    pub metallic_roughness_uri: String,
}

/// Welds corners sharing a vertex and UV into glTF vertices.
fn weld(mesh: &Mesh) -> (Vec<Vec3>, Vec<Vec3>, Vec<Vec2>, Vec<u32>) {
    let mut map: HashMap<(u32, u64, u64), u32> = HashMap::new();
    let (mut p, mut n, mut t, mut idx) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (tri_index, tri) in mesh.triangles().iter().enumerate() {
        for (c, &v) in tri.iter().enumerate() {
            let uv = if mesh.has_uvs() {
                mesh.uvs()[3 * tri_index + c]
            } else {
                Vec2::new(0.0, 0.0)
            };
            let key = (v, uv.x.to_bits(), uv.y.to_bits());
            let id = *map.entry(key).or_insert_with(|| {
                p.push(mesh.positions()[v as usize]);
                n.push(mesh.vertex_normals()[v as usize]);
                t.push(uv);
                (p.len() - 1) as u32
            });
            idx.push(id);
        }
    }
    (p, n, t, idx)
}

/// Builds the glTF JSON document and its binary buffer. `bin_uri` is the
/// buffer's URI as written into the document.
pub fn build_document(mesh: &Mesh, images: &MaterialImages, bin_uri: &str) -> (Value, Vec<u8>) {
    let (pos, nrm, tex, idx) = weld(mesh);
    let mut bin = Vec::new();
    let push_f32 = |bin: &mut Vec<u8>, v: f64| bin.extend_from_slice(&(v as f32).to_le_bytes());
    for p in &pos {
        for c in p.to_array() {
            push_f32(&mut bin, c);
        }
    }
    let nrm_offset = bin.len();
    for v in &nrm {
        for c in v.to_array() {
            push_f32(&mut bin, c);
        }
    }
    let tex_offset = bin.len();
    for uv in &tex {
        push_f32(&mut bin, uv.x);
        push_f32(&mut bin, 1.0 - uv.y);
    }
    let idx_offset = bin.len();
    for i in &idx {
        bin.extend_from_slice(&i.to_le_bytes());
    }
    let (mut lo, mut hi) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
    for p in &pos {
        for (c, v) in p.to_array().iter().enumerate() {
            lo[c] = lo[c].min(*v as f32);
            hi[c] = hi[c].max(*v as f32);
        }
    }
    let nv = pos.len();
    let doc = json!({
        "asset": {"version": "2.0", "generator": "matforge"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [{
            "attributes": {"POSITION": 0, "NORMAL": 1, "TEXCOORD_0": 2},
            "indices": 3,
            "material": 0,
            "mode": 4
        }]}],
        "materials": [{
            "name": "baked",
            "pbrMetallicRoughness": {
                "baseColorTexture": {"index": 0},
                "metallicRoughnessTexture": {"index": 1},
                "metallicFactor": 1.0,
                "roughnessFactor": 1.0
            }
        }],
        "samplers": [{"magFilter": 9729, "minFilter": 9729, "wrapS": 33071, "wrapT": 33071}],
        "images": [{"uri": images.base_color_uri}, {"uri": images.metallic_roughness_uri}],
        "textures": [{"sampler": 0, "source": 0}, {"sampler": 0, "source": 1}],
        "buffers": [{"uri": bin_uri, "byteLength": bin.len()}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": nrm_offset, "target": ARRAY_BUFFER},
            {"buffer": 0, "byteOffset": nrm_offset, "byteLength": tex_offset - nrm_offset, "target": ARRAY_BUFFER},
            {"buffer": 0, "byteOffset": tex_offset, "byteLength": idx_offset - tex_offset, "target": ARRAY_BUFFER},
            {"buffer": 0, "byteOffset": idx_offset, "byteLength": bin.len() - idx_offset, "target": ELEMENT_ARRAY_BUFFER}
        ],
        "accessors": [
            {"bufferView": 0, "componentType": FLOAT, "count": nv, "type": "VEC3", "min": lo, "max": hi},
            {"bufferView": 1, "componentType": FLOAT, "count": nv, "type": "VEC3"},
            {"bufferView": 2, "componentType": FLOAT, "count": nv, "type": "VEC2"},
            {"bufferView": 3, "componentType": UNSIGNED_INT, "count": idx.len(), "type": "SCALAR"}
        ]
    });
    (doc, bin)
}

/// Writes `path` (a `.gltf`) and its sibling `.bin`.
pub fn write_gltf(mesh: &Mesh, images: &MaterialImages, path: &Path) -> Result<()> {
    let bin_name = path
        .with_extension("bin")
        .file_name()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Io(format!("{}: invalid file name", path.display())))?;
    let (doc, bin) = build_document(mesh, images, &bin_name);
    let text = serde_json::to_string_pretty(&doc).expect("document serializes");
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    std::fs::write(path.with_extension("bin"), bin).map_err(io)?;
    std::fs::write(path, text).map_err(io)
}

/// Structural checks mirroring the required properties, enumerations and
/// index references of the glTF 2.0 JSON schema for the subset used here.
/// Returns every violation found.
pub fn validate_document(doc: &Value, buffers: &[Vec<u8>]) -> std::result::Result<(), Vec<String>> {
    let mut errs = Vec::new();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            errs.push(msg);
        }
    };
    let len = |key: &str| doc[key].as_array().map_or(0, |a| a.len());
    let valid_ref = |v: &Value, key: &str| v.as_u64().is_some_and(|i| (i as usize) < len(key));

    check(
        doc["asset"]["version"].as_str() == Some("2.0"),
        "asset.version must be \"2.0\"".into(),
    );
    if !doc["scene"].is_null() {
        check(valid_ref(&doc["scene"], "scenes"), "scene index out of range".into());
    }
    for (i, s) in doc["scenes"].as_array().into_iter().flatten().enumerate() {
        for n in s["nodes"].as_array().into_iter().flatten() {
            check(valid_ref(n, "nodes"), format!("scenes[{i}] node out of range"));
        }
    }
    for (i, n) in doc["nodes"].as_array().into_iter().flatten().enumerate() {
        if !n["mesh"].is_null() {
            check(valid_ref(&n["mesh"], "meshes"), format!("nodes[{i}].mesh out of range"));
        }
    }
    for (i, b) in doc["buffers"].as_array().into_iter().flatten().enumerate() {
        let bl = b["byteLength"].as_u64();
        check(
            bl.is_some_and(|l| l >= 1),
            format!("buffers[{i}].byteLength must be >= 1"),
        );
        if let (Some(l), Some(data)) = (bl, buffers.get(i)) {
            check(data.len() as u64 >= l, format!("buffers[{i}] shorter than byteLength"));
        }
    }
    for (i, v) in doc["bufferViews"].as_array().into_iter().flatten().enumerate() {
        check(
            valid_ref(&v["buffer"], "buffers"),
            format!("bufferViews[{i}].buffer out of range"),
        );
        let off = v["byteOffset"].as_u64().unwrap_or(0);
        let bl = v["byteLength"].as_u64();
        check(
            bl.is_some_and(|l| l >= 1),
            format!("bufferViews[{i}].byteLength must be >= 1"),
        );
        if let (Some(l), Some(b)) = (bl, v["buffer"].as_u64()) {
            let cap = doc["buffers"][b as usize]["byteLength"].as_u64().unwrap_or(0);
            check(off + l <= cap, format!("bufferViews[{i}] exceeds its buffer"));
        }
        if let Some(t) = v["target"].as_u64() {
            check(
                t == ARRAY_BUFFER || t == ELEMENT_ARRAY_BUFFER,
                format!("bufferViews[{i}].target invalid"),
            );
        }
        if let Some(s) = v["byteStride"].as_u64() {
            check(
                (4..=252).contains(&s) && s % 4 == 0,
                format!("bufferViews[{i}].byteStride invalid"),
            );
        }
    }
    for (i, a) in doc["accessors"].as_array().into_iter().flatten().enumerate() {
        let ct = a["componentType"].as_u64();
        check(
            ct.is_some_and(|c| [5120, 5121, 5122, 5123, 5125, 5126].contains(&c)),
            format!("accessors[{i}].componentType invalid"),
        );
        check(
            a["count"].as_u64().is_some_and(|c| c >= 1),
            format!("accessors[{i}].count must be >= 1"),
        );
        let ty = a["type"].as_str().unwrap_or("");
        check(
            ["SCALAR", "VEC2", "VEC3", "VEC4", "MAT2", "MAT3", "MAT4"].contains(&ty),
            format!("accessors[{i}].type invalid"),
        );
        if !a["bufferView"].is_null() {
            check(
                valid_ref(&a["bufferView"], "bufferViews"),
                format!("accessors[{i}].bufferView out of range"),
            );
            if let (Some(v), Ok(n), Some(c)) = (a["bufferView"].as_u64(), components(ty), ct) {
                let csize = if c == 5126 || c == 5125 {
                    4
                } else if c == 5122 || c == 5123 {
                    2
                } else {
                    1
                };
                let view = &doc["bufferViews"][v as usize];
                let stride = view["byteStride"].as_u64().unwrap_or(n as u64 * csize);
                let count = a["count"].as_u64().unwrap_or(0);
                let need = a["byteOffset"].as_u64().unwrap_or(0) + stride * count.saturating_sub(1) + n as u64 * csize;
                check(
                    need <= view["byteLength"].as_u64().unwrap_or(0),
                    format!("accessors[{i}] reads past its bufferView"),
                );
            }
        }
    }
    for (m, mesh) in doc["meshes"].as_array().into_iter().flatten().enumerate() {
        let prims = mesh["primitives"].as_array();
        check(
            prims.is_some_and(|p| !p.is_empty()),
            format!("meshes[{m}].primitives must be non-empty"),
        );
        for (p, prim) in prims.into_iter().flatten().enumerate() {
            let attrs = prim["attributes"].as_object();
            check(
                attrs.is_some_and(|a| !a.is_empty()),
                format!("meshes[{m}].primitives[{p}].attributes empty"),
            );
            for (name, idx) in attrs.into_iter().flatten() {
                check(
                    valid_ref(idx, "accessors"),
                    format!("attribute {name} accessor out of range"),
                );
            }
            if let Some(pi) = prim["attributes"]["POSITION"].as_u64() {
                let acc = &doc["accessors"][pi as usize];
                check(
                    acc["min"].is_array() && acc["max"].is_array(),
                    "POSITION accessor requires min and max".into(),
                );
                check(
                    acc["type"] == "VEC3" && acc["componentType"] == FLOAT,
                    "POSITION must be float VEC3".into(),
                );
            }
            if let Some(ti) = prim["attributes"]["TEXCOORD_0"].as_u64() {
                check(
                    doc["accessors"][ti as usize]["type"] == "VEC2",
                    "TEXCOORD_0 must be VEC2".into(),
                );
            }
            if !prim["indices"].is_null() {
                check(
                    valid_ref(&prim["indices"], "accessors"),
                    "indices accessor out of range".into(),
                );
            }
            if !prim["material"].is_null() {
                check(
                    valid_ref(&prim["material"], "materials"),
                    "material out of range".into(),
                );
            }
            if let Some(mode) = prim["mode"].as_u64() {
                check(mode <= 6, "primitive mode invalid".into());
            }
        }
    }
    for (i, mat) in doc["materials"].as_array().into_iter().flatten().enumerate() {
        let pbr = &mat["pbrMetallicRoughness"];
        for key in ["baseColorTexture", "metallicRoughnessTexture"] {
            if !pbr[key].is_null() {
                check(
                    valid_ref(&pbr[key]["index"], "textures"),
                    format!("materials[{i}].{key}.index out of range"),
                );
            }
        }
        for key in ["metallicFactor", "roughnessFactor"] {
            if let Some(f) = pbr[key].as_f64() {
                check((0.0..=1.0).contains(&f), format!("materials[{i}].{key} outside [0,1]"));
            }
        }
    }
    for (i, t) in doc["textures"].as_array().into_iter().flatten().enumerate() {
        if !t["source"].is_null() {
            check(
                valid_ref(&t["source"], "images"),
                format!("textures[{i}].source out of range"),
            );
        }
        if !t["sampler"].is_null() {
            check(
                valid_ref(&t["sampler"], "samplers"),
                format!("textures[{i}].sampler out of range"),
            );
        }
    }
    for (i, img) in doc["images"].as_array().into_iter().flatten().enumerate() {
        check(
            img["uri"].is_string() != img["bufferView"].is_u64(),
            format!("images[{i}] needs exactly one of uri or bufferView"),
        );
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Loads a written `.gltf` with its buffers and validates it.
pub fn validate_file(path: &Path) -> std::result::Result<(), Vec<String>> {
    let text = std::fs::read(path).map_err(|e| vec![e.to_string()])?;
    let doc: Value = serde_json::from_slice(&text).map_err(|e| vec![e.to_string()])?;
    let base = path.parent().unwrap_or(Path::new("."));
    let buffers = load_buffers(&doc, base, None).map_err(|e| vec![e.to_string()])?;
    validate_document(&doc, &buffers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn images() -> MaterialImages {
        MaterialImages {
            base_color_uri: "albedo.png".into(),
            metallic_roughness_uri: "mr.png".into(),
        }
    }

    #[test]
    fn written_document_validates_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("asset.gltf");
        let cube = primitives::cube();
        write_gltf(&cube, &images(), &path).unwrap();
        validate_file(&path).unwrap();
        let back = read_gltf(&path).unwrap();
        assert_eq!(back.triangle_count(), cube.triangle_count());
        for (a, b) in back.uvs().iter().zip(cube.uvs()) {
            assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
        }
    }

    #[test]
    fn embedded_and_binary_containers_load() {
        let sphere = primitives::icosphere(2);
        let (mut doc, bin) = build_document(&sphere, &images(), "unused");
        let b64 = base64::engine::general_purpose::STANDARD.encode(&bin);
        doc["buffers"][0]["uri"] = Value::String(format!("data:application/octet-stream;base64,{b64}"));
        let embedded = mesh_from_document(&doc, &[bin.clone()]).unwrap();
        assert_eq!(embedded.triangle_count(), sphere.triangle_count());

        doc["buffers"][0].as_object_mut().unwrap().remove("uri");
        let json = serde_json::to_vec(&doc).unwrap();
        let pad = |mut v: Vec<u8>, fill: u8| {
            while v.len() % 4 != 0 {
                v.push(fill);
            }
            v
        };
        let (json, bin) = (pad(json, b' '), pad(bin, 0));
        let mut glb = Vec::new();
        glb.extend_from_slice(&GLB_MAGIC.to_le_bytes());
        glb.extend_from_slice(&2u32.to_le_bytes());
        glb.extend_from_slice(&((12 + 16 + json.len() + bin.len()) as u32).to_le_bytes());
        glb.extend_from_slice(&(json.len() as u32).to_le_bytes());
        glb.extend_from_slice(&CHUNK_JSON.to_le_bytes());
        glb.extend_from_slice(&json);
        glb.extend_from_slice(&(bin.len() as u32).to_le_bytes());
        glb.extend_from_slice(&CHUNK_BIN.to_le_bytes());
        glb.extend_from_slice(&bin);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.glb");
        std::fs::write(&path, glb).unwrap();
        let m = read_gltf(&path).unwrap();
        assert_eq!(m.triangle_count(), sphere.triangle_count());
        for t in 0..m.triangle_count() {
            for (a, b) in m.triangle_positions(t).iter().zip(sphere.triangle_positions(t)) {
                assert!((*a - b).length() < 1e-6);
            }
        }
    }

    #[test]
    fn validator_rejects_broken_references() {
        let (mut doc, bin) = build_document(&primitives::quad(), &images(), "x.bin");
        doc["accessors"][0].as_object_mut().unwrap().remove("min");
        doc["materials"][0]["pbrMetallicRoughness"]["baseColorTexture"]["index"] = json!(7);
        doc["asset"]["version"] = json!("1.0");
        let errs = validate_document(&doc, &[bin]).unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
    }
}
