use std::path::Path;

use crate::error::{Error, Result};
use crate::material::MaterialSet;
use crate::mesh::gltf::{write_gltf, MaterialImages};
use crate::mesh::Mesh;

pub const ALBEDO_FILE: &str = "albedo.png";
pub const MR_FILE: &str = "mr.png";

/// Writes `path` (`.gltf`), its `.bin` buffer and the two textures it
/// references (`albedo.png`, `mr.png`) into the same directory.
pub fn export_gltf(mesh: &Mesh, materials: &MaterialSet, path: &Path) -> Result<()> {
    if !mesh.has_uvs() {
        return Err(Error::MissingUvs);
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    materials.albedo.clamp01().save_png(dir.join(ALBEDO_FILE))?;
    materials.mr.clamp01().save_png(dir.join(MR_FILE))?;
    let images = MaterialImages {
        base_color_uri: ALBEDO_FILE.into(),
        metallic_roughness_uri: MR_FILE.into(),
    };
    write_gltf(mesh, &images, path)
}
