use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use matforge::bake::{bake as bake_views, dilate_material, export_gltf, BakeSettings, ALBEDO_FILE, MR_FILE};
use matforge::denoiser::{Denoiser, SampleSettings, Solver};
use matforge::image::{Image, Mask};
use matforge::material::{MaterialSet, MaterialViews};
use matforge::mesh::{load_mesh, normalize_to_unit_cube, Mesh};
use matforge::metrics::{
    cross_view_consistency, heldout_cameras, heldout_rerender, psnr, AssetMetrics, ConsistencyParams, MetricReport,
};
use matforge::pipeline::{self, render_rig, ViewRig};
use matforge::render::{sample_material_views, Camera, Light};
use matforge::train::{
    make_dataset, train_phase1, train_phase2_zoomin, write_loss_csv, Dataset, DatasetSpec, LossRecord, TrainConfig,
    Trainer,
};
use matforge::Error;

use crate::args::{
    BakeArgs, BakeFlags, DatasetArgs, EvalArgs, GbuffersArgs, GenerateArgs, PipelineArgs, SampleArgs, SolverArg,
    TrainArgs,
};
use crate::preview::contact_sheet;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;
pub const EXIT_INTERNAL: u8 = 5;

/// Held-out re-render resolution used by `eval`.
const HELDOUT_SIZE: usize = 256;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        let code = match &e {
            Error::DivergedLoss { .. } => EXIT_DIVERGED,
            Error::Checkpoint(_) | Error::Parse(_) => EXIT_FORMAT,
            Error::NonFiniteInput | Error::NonFiniteActivation(_) => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::input(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Runs `f` with `dir/.partial` present; the marker is removed only when `f`
/// succeeds, so an interrupted or failed stage stays flagged.
fn staged<T>(dir: &Path, f: impl FnOnce() -> Result<T>) -> Result<T> {
    std::fs::create_dir_all(dir)?;
    let marker = dir.join(".partial");
    std::fs::write(&marker, b"")?;
    let out = f()?;
    std::fs::remove_file(&marker)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        code: EXIT_INTERNAL,
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError {
        code: EXIT_FORMAT,
        message: format!("{}: {e}", path.display()),
    })
}

fn read_mesh(path: &Path) -> Result<Mesh> {
    if !path.is_file() {
        return Err(CliError::input(format!("mesh not found: {}", path.display())));
    }
    Ok(normalize_to_unit_cube(&load_mesh(path)?)?)
}

fn read_checkpoint(path: &Path) -> Result<Denoiser> {
    if !path.is_file() {
        return Err(CliError::input(format!("checkpoint not found: {}", path.display())));
    }
    Ok(Denoiser::load(path)?)
}

fn read_png(path: &Path) -> Result<Image> {
    if !path.is_file() {
        return Err(CliError::input(format!("image not found: {}", path.display())));
    }
    Ok(Image::load_png_rgb(path)?)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

// gbuffers ──────────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct GbufferManifest {
    mesh: String,
    views: usize,
    image_size: usize,
    cameras: Vec<Camera>,
    files: Vec<String>,
}

pub fn gbuffers(a: &GbuffersArgs) -> Result<()> {
    let mesh = read_mesh(&a.mesh)?;
    staged(&a.out, || {
        let rig = render_rig(&mesh, a.views, a.size)?;
        let mut files = Vec::new();
        for (v, g) in rig.gbuffers.iter().enumerate() {
            let images = [
                ("normal", g.normal.clone()),
                ("ccm", g.ccm.clone()),
                ("depth", g.depth_image()),
                ("mask", g.mask.to_image()),
            ];
            for (kind, img) in images {
                let name = format!("view{v}_{kind}.png");
                img.save_png(a.out.join(&name))?;
                files.push(name);
            }
        }
        write_json(
            &a.out.join("manifest.json"),
            &GbufferManifest {
                mesh: display(&a.mesh),
                views: a.views,
                image_size: a.size,
                cameras: rig.cameras,
                files,
            },
        )?;
        println!("wrote {} g-buffer images to {}", 4 * a.views, a.out.display());
        Ok(())
    })
}

// dataset ───────────────────────────────────────────────────────────────────

pub fn dataset(a: &DatasetArgs) -> Result<()> {
    let spec = DatasetSpec {
        views: a.views,
        source_size: a.source_size,
        texture_resolution: a.texture_resolution,
        lights_per_asset: a.lights,
    };
    staged(&a.out, || {
        let data = make_dataset(spec, a.assets, a.seed)?;
        data.write(&a.out)?;
        println!("wrote {} assets to {}", data.assets.len(), a.out.display());
        Ok(())
    })
}

// train ─────────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct TrainManifest {
    config: TrainConfig,
    dataset: String,
    phases: Vec<PhaseSummary>,
}

#[derive(Serialize)]
struct PhaseSummary {
    phase: u8,
    steps: usize,
    checkpoint: String,
    losses: String,
    first: Option<LossRecord>,
    last: Option<LossRecord>,
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(p) = a.phase {
        cfg.phase = p;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_phase(out: &Path, phase: u8, model: &Denoiser, log: &[LossRecord]) -> Result<PhaseSummary> {
    let checkpoint = format!("phase{phase}.ckpt");
    let losses = format!("loss_phase{phase}.csv");
    model.save(&out.join(&checkpoint))?;
    write_loss_csv(&out.join(&losses), log)?;
    Ok(PhaseSummary {
        phase,
        steps: log.len(),
        checkpoint,
        losses,
        first: log.first().copied(),
        last: log.last().copied(),
    })
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    if cfg.phase == 2 && a.init.is_none() {
        return Err(CliError::input("phase 2 needs --init <checkpoint>"));
    }
    if a.phase2_steps.is_some() && cfg.phase != 1 {
        return Err(CliError::input("--phase2-steps continues a phase-1 run"));
    }
    let init = a.init.as_deref().map(read_checkpoint).transpose()?;
    let (data, source) = match &a.data {
        Some(dir) => (Dataset::load(dir)?, display(dir)),
        None => {
            let spec = DatasetSpec {
                views: cfg.views,
                source_size: cfg.image_size * pipeline::SOURCE_SCALE,
                ..DatasetSpec::default()
            };
            let data = make_dataset(spec, a.assets, cfg.seed)?;
            (data, format!("generated: {} assets, seed {}", a.assets, cfg.seed))
        }
    };
    staged(&a.out, || {
        let mut phases = Vec::new();
        let model = match (cfg.phase, init) {
            (1, None) => {
                let out = train_phase1(&cfg, &data)?;
                phases.push(write_phase(&a.out, 1, &out.model, &out.log)?);
                out.model
            }
            (1, Some(init)) => {
                let mut t = Trainer::new(cfg.clone(), init)?;
                let log = t.run(&data, &mut |_, _| {})?;
                phases.push(write_phase(&a.out, 1, &t.model, &log)?);
                t.model
            }
            (_, init) => {
                let out = train_phase2_zoomin(&cfg, &data, init.expect("checked above"))?;
                phases.push(write_phase(&a.out, 2, &out.model, &out.log)?);
                out.model
            }
        };
        if let Some(steps) = a.phase2_steps {
            let cfg2 = TrainConfig {
                phase: 2,
                steps,
                ..cfg.clone()
            };
            let out = train_phase2_zoomin(&cfg2, &data, model)?;
            phases.push(write_phase(&a.out, 2, &out.model, &out.log)?);
        }
        for p in &phases {
            if let (Some(f), Some(l)) = (&p.first, &p.last) {
                println!(
                    "phase {}: {} steps, loss {:.4} -> {:.4}",
                    p.phase, p.steps, f.total, l.total
                );
            }
        }
        write_json(
            &a.out.join("train.json"),
            &TrainManifest {
                config: cfg.clone(),
                dataset: source,
                phases,
            },
        )
    })
}

// generate ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViewsManifest {
    mesh: String,
    checkpoint: String,
    reference: Option<String>,
    views: usize,
    image_size: usize,
    steps: usize,
    seed: u64,
    cfg_scale: f64,
    solver: Solver,
}

fn sample_settings(flags: &SampleArgs, base: SampleSettings) -> SampleSettings {
    SampleSettings {
        steps: flags.steps.unwrap_or(base.steps),
        seed: flags.seed.unwrap_or(base.seed),
        cfg_scale: flags.cfg_scale.unwrap_or(base.cfg_scale),
        solver: flags.solver.map(Solver::from).unwrap_or(base.solver),
    }
}

struct GenerateJob<'a> {
    mesh_path: &'a Path,
    checkpoint: &'a Path,
    reference: Option<&'a Path>,
    settings: SampleSettings,
    preview: bool,
    out: &'a Path,
}

fn run_generate(job: &GenerateJob) -> Result<()> {
    let mesh = read_mesh(job.mesh_path)?;
    let model = read_checkpoint(job.checkpoint)?;
    let reference = job.reference.map(read_png).transpose()?;
    staged(job.out, || {
        let g = pipeline::generate(&model, &mesh, reference.as_ref(), &job.settings)?;
        for (v, (albedo, mr)) in g.sampled.albedo.iter().zip(&g.sampled.mr).enumerate() {
            albedo.save_png(job.out.join(format!("view{v}_albedo.png")))?;
            mr.save_png(job.out.join(format!("view{v}_mr.png")))?;
        }
        if job.preview {
            contact_sheet(&[g.sampled.albedo.clone(), g.sampled.mr.clone()], 64)
                .save_png(job.out.join("preview.png"))?;
        }
        write_json(
            &job.out.join("manifest.json"),
            &ViewsManifest {
                mesh: display(job.mesh_path),
                checkpoint: display(job.checkpoint),
                reference: job.reference.map(display),
                views: model.config.views,
                image_size: model.config.image_size,
                steps: job.settings.steps,
                seed: job.settings.seed,
                cfg_scale: job.settings.cfg_scale,
                solver: job.settings.solver,
            },
        )?;
        println!("wrote {} views to {}", model.config.views, job.out.display());
        Ok(())
    })
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    run_generate(&GenerateJob {
        mesh_path: &a.mesh,
        checkpoint: &a.checkpoint,
        reference: a.reference.as_deref(),
        settings: sample_settings(&a.sample, SampleSettings::default()),
        preview: a.preview,
        out: &a.out,
    })
}

/// Reloads generated views and re-renders the matching g-buffers.
fn read_views(mesh: &Mesh, dir: &Path) -> Result<(MaterialViews, ViewRig)> {
    let m: ViewsManifest = read_json(&dir.join("manifest.json"))?;
    let rig = render_rig(mesh, m.views, m.image_size)?;
    let mut albedo = Vec::with_capacity(m.views);
    let mut mr = Vec::with_capacity(m.views);
    for v in 0..m.views {
        albedo.push(read_png(&dir.join(format!("view{v}_albedo.png")))?);
        mr.push(read_png(&dir.join(format!("view{v}_mr.png")))?);
    }
    if albedo
        .iter()
        .chain(&mr)
        .any(|i| i.width != m.image_size || i.height != m.image_size)
    {
        return Err(CliError::input("view images do not match the manifest size"));
    }
    let views = MaterialViews {
        albedo,
        mr,
        gbuffers: rig.gbuffers.clone(),
    };
    Ok((views, rig))
}

// bake ──────────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct BakeManifest {
    mesh: String,
    views: usize,
    image_size: usize,
    settings: BakeSettings,
    dilation_rings: usize,
    covered_texels: usize,
}

fn bake_settings(flags: &BakeFlags) -> Result<BakeSettings> {
    let resolution = flags.resolution.unwrap_or(256);
    if resolution == 0 {
        return Err(CliError::input("bake resolution must be positive"));
    }
    let mut s = BakeSettings::new(resolution);
    if let Some(k) = flags.cos_power {
        s.cos_power = k;
    }
    if let Some(e) = flags.depth_epsilon {
        s.depth_epsilon = e;
    }
    if !(s.cos_power >= 0.0 && s.depth_epsilon > 0.0) {
        return Err(CliError::input("cos_power must be >= 0 and depth_epsilon > 0"));
    }
    Ok(s)
}

fn run_bake(mesh_path: &Path, views_dir: &Path, settings: BakeSettings, preview: bool, out: &Path) -> Result<()> {
    let mesh = read_mesh(mesh_path)?;
    let (views, rig) = read_views(&mesh, views_dir)?;
    let baked = bake_views(&mesh, &views, &rig.cameras, &settings)?;
    let dilated = dilate_material(&baked, pipeline::DILATION_RINGS);
    export_gltf(&mesh, &dilated, &out.join("asset.gltf"))?;
    if preview {
        contact_sheet(&[vec![dilated.albedo.clone(), dilated.mr.clone()]], 128)
            .save_png(out.join("bake_preview.png"))?;
    }
    write_json(
        &out.join("bake.json"),
        &BakeManifest {
            mesh: display(mesh_path),
            views: views.albedo.len(),
            image_size: rig.cameras[0].image_size,
            settings,
            dilation_rings: pipeline::DILATION_RINGS,
            covered_texels: baked.texel_mask.count(),
        },
    )?;
    println!(
        "baked {} covered texels into {}",
        baked.texel_mask.count(),
        out.join("asset.gltf").display()
    );
    Ok(())
}

pub fn bake(a: &BakeArgs) -> Result<()> {
    let settings = bake_settings(&a.bake)?;
    staged(&a.out, || run_bake(&a.mesh, &a.views, settings, a.preview, &a.out))
}

// eval ──────────────────────────────────────────────────────────────────────

fn read_textures(dir: &Path) -> Result<MaterialSet> {
    let albedo = read_png(&dir.join(ALBEDO_FILE))?;
    let mr = read_png(&dir.join(MR_FILE))?;
    if !albedo.same_shape(&mr) || albedo.width != albedo.height {
        return Err(CliError::input(format!(
            "{}: textures must be square and equal in size",
            dir.display()
        )));
    }
    let n = albedo.width;
    Ok(MaterialSet {
        albedo,
        mr,
        texel_mask: Mask {
            width: n,
            height: n,
            data: vec![true; n * n],
        },
    })
}

fn run_eval(mesh_path: &Path, views_dir: &Path, textures: Option<&Path>, gt: Option<&Path>, out: &Path) -> Result<()> {
    let mesh = read_mesh(mesh_path)?;
    let (views, rig) = read_views(&mesh, views_dir)?;
    let baked = textures.map(read_textures).transpose()?;
    let gt = gt.map(read_textures).transpose()?;
    let consistency = match cross_view_consistency(&views, &rig.cameras, &ConsistencyParams::default()) {
        Ok(v) => Some(v),
        Err(Error::NoCorrespondences) => None,
        Err(e) => return Err(e.into()),
    };
    let mut view_psnr = None;
    let mut heldout = None;
    if let Some(gt) = &gt {
        let gt_views = sample_material_views(&mesh, gt, &rig.cameras)?;
        let mut total = 0.0;
        for ((a, b), g) in views.albedo.iter().zip(&gt_views.albedo).zip(&gt_views.gbuffers) {
            total += psnr(a, b, Some(&g.mask))?;
        }
        view_psnr = Some(total / views.albedo.len() as f64);
        if let Some(baked) = &baked {
            heldout = Some(heldout_rerender(
                &mesh,
                baked,
                gt,
                &heldout_cameras(HELDOUT_SIZE),
                &Light::default(),
            )?);
        }
    }
    let name = mesh_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = MetricReport::from_assets(vec![AssetMetrics {
        asset: name,
        psnr_db: view_psnr,
        cross_view_consistency_rmse: consistency,
        heldout_rerender_psnr_db: heldout,
    }]);
    std::fs::write(out.join("report.json"), report.to_json() + "\n")?;
    std::fs::write(out.join("report.md"), report.to_markdown())?;
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    staged(&a.out, || {
        run_eval(
            &a.mesh,
            &a.views,
            a.textures.as_deref(),
            a.gt_textures.as_deref(),
            &a.out,
        )
    })
}

// pipeline ──────────────────────────────────────────────────────────────────

/// Settings for a full generate → bake → eval run. `views` and `image_size`
/// are optional checks against the checkpoint's architecture.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub gt_textures: Option<PathBuf>,
    pub views: Option<usize>,
    pub image_size: Option<usize>,
    pub solver: Option<SolverName>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub cfg_scale: Option<f64>,
    pub bake_resolution: Option<usize>,
    pub cos_power: Option<f64>,
    pub depth_epsilon: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverName {
    Euler,
    Heun,
}

impl From<SolverName> for SolverArg {
    fn from(s: SolverName) -> SolverArg {
        match s {
            SolverName::Euler => SolverArg::Euler,
            SolverName::Heun => SolverArg::Heun,
        }
    }
}

fn merged_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    macro_rules! flag {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value.clone() {
                c.$field = Some(v);
            }
        };
    }
    flag!(mesh, a.mesh);
    flag!(checkpoint, a.checkpoint);
    flag!(reference, a.reference);
    flag!(gt_textures, a.gt_textures);
    flag!(steps, a.sample.steps);
    flag!(seed, a.sample.seed);
    flag!(cfg_scale, a.sample.cfg_scale);
    flag!(bake_resolution, a.bake.resolution);
    flag!(cos_power, a.bake.cos_power);
    flag!(depth_epsilon, a.bake.depth_epsilon);
    flag!(out, a.out);
    if let Some(s) = a.sample.solver {
        c.solver = Some(match s {
            SolverArg::Euler => SolverName::Euler,
            SolverArg::Heun => SolverName::Heun,
        });
    }
    Ok(c)
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let c = merged_config(a)?;
    let need = |p: &Option<PathBuf>, name: &str| {
        p.clone()
            .ok_or_else(|| CliError::input(format!("pipeline needs {name}")))
    };
    let mesh = need(&c.mesh, "mesh")?;
    let checkpoint = need(&c.checkpoint, "checkpoint")?;
    let out = need(&c.out, "out")?;
    let model_cfg = read_checkpoint(&checkpoint)?.config;
    if c.views.is_some_and(|v| v != model_cfg.views) || c.image_size.is_some_and(|s| s != model_cfg.image_size) {
        return Err(CliError::input(format!(
            "checkpoint was trained for {} views at {} px",
            model_cfg.views, model_cfg.image_size
        )));
    }
    let sample = SampleArgs {
        steps: c.steps,
        seed: c.seed,
        cfg_scale: c.cfg_scale,
        solver: c.solver.map(SolverArg::from),
    };
    let bake_flags = BakeFlags {
        resolution: c.bake_resolution,
        cos_power: c.cos_power,
        depth_epsilon: c.depth_epsilon,
    };
    let settings = bake_settings(&bake_flags)?;
    let views_dir = out.join("views");
    staged(&out, || {
        run_generate(&GenerateJob {
            mesh_path: &mesh,
            checkpoint: &checkpoint,
            reference: c.reference.as_deref(),
            settings: sample_settings(&sample, SampleSettings::default()),
            preview: false,
            out: &views_dir,
        })?;
        run_bake(&mesh, &views_dir, settings, false, &out)?;
        run_eval(&mesh, &views_dir, Some(&out), c.gt_textures.as_deref(), &out)?;
        if a.preview {
            let m = read_mesh(&mesh)?;
            let (views, _) = read_views(&m, &views_dir)?;
            let baked = read_textures(&out)?;
            contact_sheet(&[views.albedo, views.mr, vec![baked.albedo, baked.mr]], 64)
                .save_png(out.join("preview.png"))?;
        }
        write_json(&out.join("pipeline.json"), &c)
    })
}
