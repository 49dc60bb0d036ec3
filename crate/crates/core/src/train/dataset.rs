//! Procedural training corpus: primitive meshes with procedural materials,
//! rendered from the view rig (intrinsic targets plus g-buffers) and from a
//! reference camera under several lights.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::material::MaterialSet;
use crate::math::Vec3;
use crate::mesh::{primitives, Mesh};
use crate::par;
use crate::procedural::{self, AlbedoPattern, MrRegions};
use crate::render::{make_view_set, rasterize_gbuffer, render_views, sample_material_views, Camera, GBuffer, Light};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Icosphere { subdivisions: usize },
    Cylinder { segments: usize },
    Torus { major: usize, minor: usize },
}

impl Shape {
    pub fn mesh(self) -> Mesh {
        match self {
            Shape::Cube => primitives::cube(),
            Shape::Icosphere { subdivisions } => primitives::icosphere(subdivisions),
            Shape::Cylinder { segments } => primitives::cylinder(segments),
            Shape::Torus { major, minor } => primitives::torus(major, minor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecipe {
    pub name: String,
    pub shape: Shape,
    pub albedo: AlbedoPattern,
    pub mr: MrRegions,
    pub lights: Vec<Light>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub views: usize,
    /// Render resolution of targets, g-buffers and references; training crops
    /// and resamples from these.
    pub source_size: usize,
    pub texture_resolution: usize,
    pub lights_per_asset: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            views: 6,
            source_size: 128,
            texture_resolution: 256,
            lights_per_asset: 2,
        }
    }
}

/// A fully rendered asset. All images are at `DatasetSpec::source_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub recipe: AssetRecipe,
    pub mesh: Mesh,
    pub material: MaterialSet,
    pub cameras: Vec<Camera>,
    pub gbuffers: Vec<GBuffer>,
    pub albedo: Vec<Image>,
    pub mr: Vec<Image>,
    pub reference_camera: Camera,
    /// One shaded reference render per light.
    pub references: Vec<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub assets: Vec<Asset>,
}

/// Three-quarter view (30° azimuth, 25° elevation) used for reference renders.
pub fn reference_camera(image_size: usize) -> Camera {
    let (a, e) = (30f64.to_radians(), 25f64.to_radians());
    let pos = Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
    let look = -pos;
    let right = look.cross(Vec3::Z).normalize();
    Camera::orthographic(look, right.cross(look).normalize(), image_size)
}

/// Directional light roughly facing the reference camera with a random
/// offset, tint and ambient level.
pub fn random_light(rng: &mut impl Rng) -> Light {
    let toward = -reference_camera(1).view_direction;
    let jitter = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let direction = (toward + jitter * 0.9).normalize();
    let power = rng.gen_range(1.2..3.0);
    let tint = [0; 3].map(|_| rng.gen_range(0.8..1.0));
    let ambient = rng.gen_range(0.05..0.3);
    Light {
        direction,
        radiance: tint.map(|c| c * power),
        ambient: [ambient; 3],
    }
}

fn random_shape(rng: &mut impl Rng) -> Shape {
    match rng.gen_range(0..4) {
        0 => Shape::Cube,
        1 => Shape::Icosphere { subdivisions: 4 },
        2 => Shape::Cylinder { segments: 24 },
        _ => Shape::Torus { major: 24, minor: 12 },
    }
}

pub fn random_recipe(rng: &mut impl Rng, index: usize, lights: usize) -> AssetRecipe {
    AssetRecipe {
        name: format!("asset{index:03}"),
        shape: random_shape(rng),
        albedo: procedural::random_pattern(rng),
        mr: {
            let cells = rng.gen_range(1..=3);
            MrRegions::random(rng, cells)
        },
        lights: (0..lights).map(|_| random_light(rng)).collect(),
    }
}

pub fn build_asset(recipe: &AssetRecipe, spec: &DatasetSpec) -> Result<Asset> {
    let mesh = recipe.shape.mesh();
    let material = procedural::material_from(&recipe.albedo, &recipe.mr, spec.texture_resolution);
    let cameras = make_view_set(spec.views, spec.source_size)?;
    let views = sample_material_views(&mesh, &material, &cameras)?;
    let reference_camera = reference_camera(spec.source_size);
    let references = recipe
        .lights
        .iter()
        .map(|l| {
            Ok(render_views(&mesh, &material, &[reference_camera], l)?
                .remove(0)
                .clamp01())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Asset {
        recipe: recipe.clone(),
        mesh,
        material,
        cameras,
        gbuffers: views.gbuffers,
        albedo: views.albedo,
        mr: views.mr,
        reference_camera,
        references,
    })
}

impl Dataset {
    pub fn from_recipes(spec: DatasetSpec, seed: u64, recipes: &[AssetRecipe]) -> Result<Dataset> {
        let assets = par::map_indices(recipes.len(), |i| build_asset(&recipes[i], &spec))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { spec, seed, assets })
    }

    pub fn recipes(&self) -> Vec<AssetRecipe> {
        self.assets.iter().map(|a| a.recipe.clone()).collect()
    }

    /// Writes `manifest.json` (spec, seed and recipes, from which the dataset
    /// is rebuilt bit-exactly) plus PNGs of every rendered image.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            spec: self.spec,
            seed: self.seed,
            assets: self.recipes(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), json + "\n")?;
        for a in &self.assets {
            let d = dir.join(&a.recipe.name);
            std::fs::create_dir_all(&d)?;
            for (v, g) in a.gbuffers.iter().enumerate() {
                a.albedo[v].save_png(d.join(format!("view{v}_albedo.png")))?;
                a.mr[v].save_png(d.join(format!("view{v}_mr.png")))?;
                g.normal.save_png(d.join(format!("view{v}_normal.png")))?;
                g.ccm.save_png(d.join(format!("view{v}_ccm.png")))?;
            }
            for (l, r) in a.references.iter().enumerate() {
                r.save_png(d.join(format!("reference_light{l}.png")))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("dataset manifest: {e}")))?;
        Dataset::from_recipes(m.spec, m.seed, &m.assets)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: DatasetSpec,
    seed: u64,
    assets: Vec<AssetRecipe>,
}

pub fn make_dataset(spec: DatasetSpec, n_assets: usize, seed: u64) -> Result<Dataset> {
    if n_assets == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one asset".into()));
    }
    if spec.lights_per_asset < 2 {
        return Err(Error::InvalidConfig("each asset needs at least two lights".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recipes: Vec<AssetRecipe> = (0..n_assets)
        .map(|i| random_recipe(&mut rng, i, spec.lights_per_asset))
        .collect();
    Dataset::from_recipes(spec, seed, &recipes)
}

pub fn make_synthetic_dataset(n_assets: usize, seed: u64) -> Result<Dataset> {
    make_dataset(DatasetSpec::default(), n_assets, seed)
}

/// Held-out asset whose albedo is a fine checkerboard (16 cells per side).
pub fn detail_checker_asset(spec: &DatasetSpec, seed: u64) -> Result<Asset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recipe = AssetRecipe {
        name: "detail_checker".into(),
        shape: Shape::Cube,
        albedo: AlbedoPattern::Checker {
            cells: 16,
            a: [0.85, 0.8, 0.7],
            b: [0.15, 0.2, 0.35],
        },
        mr: MrRegions::random(&mut rng, 2),
        lights: (0..spec.lights_per_asset.max(2))
            .map(|_| random_light(&mut rng))
            .collect(),
    };
    build_asset(&recipe, spec)
}

/// G-buffers of the asset rendered directly at `size` (used for baking and
/// metrics at model resolution).
pub fn gbuffers_at(asset: &Asset, size: usize) -> Result<(Vec<Camera>, Vec<GBuffer>)> {
    let cams = make_view_set(asset.cameras.len(), size)?;
    let g = cams
        .iter()
        .map(|c| rasterize_gbuffer(&asset.mesh, c))
        .collect::<Result<Vec<_>>>()?;
    Ok((cams, g))
}
