//! Single-target and batch inversion with on-disk artifacts.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use meshfit_core::camera::{axis_angle, quat_mul};
use meshfit_core::inversion::{invert, Coverage, Problem, Sampling, TraceRow};
use meshfit_core::tensorcore::Rng;
use meshfit_core::{CameraPose, InversionResult, Target};
use serde::Serialize;

use crate::config::{require_exists, ConfigError, PoseSpec, RunConfig};
use crate::io::{self, PoseJson};
use crate::model::{foreground_mae, mask_iou, render_mesh, Model, Shape};
use crate::pool::parallel_map;
use crate::synthetic::read_truth;

pub const NOVEL_VIEWS: usize = 12;
const STREAM_SUMMARY: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermsJson {
    pub l_pct: f64,
    pub l_fct: f64,
    pub l_cm: f64,
    pub l_smooth: f64,
    pub l_z: f64,
}

/// Errors against a known ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthMetrics {
    pub chamfer3d: f64,
    /// Recovered shape rendered at the true camera vs the input image, over the input mask.
    pub texture_mae: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub iterations: usize,
    pub best_total: f64,
    pub final_total: f64,
    pub final_terms: TermsJson,
    pub iou: f64,
    pub init_pose: PoseJson,
    pub pose: PoseJson,
    pub truth: Option<TruthMetrics>,
}

pub struct Outcome {
    pub result: InversionResult,
    pub summary: Summary,
}

/// Inverts `target` and scores the result; `truth` is `(z, pose)` when known.
pub fn run(model: &Model, target: &Target, cfg: &RunConfig, truth: Option<(&Shape, &CameraPose)>) -> Result<Outcome> {
    let inv = cfg.inversion();
    let result = invert(&model.decoder, target, &inv)?;
    let problem = Problem::new(&model.decoder, target, &inv)?;
    let mut rng = Rng::with_stream(inv.seed, STREAM_SUMMARY);
    let e = problem.evaluate(&result.z, &result.pose, Sampling::Random(&mut rng), Coverage::Live, false)?;
    let t = e.terms;
    let iou = mask_iou(&e.render.mask, &target.mask)?;
    let truth = match truth {
        Some((shape, pose)) => Some(truth_metrics(model, &result, target, shape, pose, cfg)?),
        None => None,
    };
    let summary = Summary {
        iterations: result.trace.len(),
        best_total: result.best_total,
        final_total: e.total,
        final_terms: TermsJson {
            l_pct: t.l_pct,
            l_fct: t.l_fct,
            l_cm: t.l_cm,
            l_smooth: t.l_smooth,
            l_z: t.l_z,
        },
        iou,
        init_pose: target.init_pose.into(),
        pose: result.pose.into(),
        truth,
    };
    Ok(Outcome { result, summary })
}

pub fn truth_metrics(
    model: &Model,
    result: &InversionResult,
    target: &Target,
    truth: &Shape,
    true_pose: &CameraPose,
    cfg: &RunConfig,
) -> Result<TruthMetrics> {
    let samples = model.surface_samples(&truth.vertices, cfg.surface_samples, cfg.seed)?;
    let chamfer3d = model.chamfer3d(&samples, &truth.vertices, &result.vertices)?;
    let recon = Shape {
        vertices: result.vertices.clone(),
        texture: result.decoded.texture.clone(),
    };
    let r = model.render(&recon, true_pose, cfg)?;
    Ok(TruthMetrics {
        chamfer3d,
        texture_mae: foreground_mae(&r.image, &target.image, &target.mask),
    })
}

pub fn write_trace(path: &Path, trace: &[TraceRow<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    w.write_record(["stage", "iter", "total", "l_pct", "l_fct", "l_cm", "l_smooth", "l_z"])?;
    for r in trace {
        let t = &r.terms;
        w.write_record(&[
            r.stage.to_string(),
            r.iter.to_string(),
            r.total.to_string(),
            t.l_pct.to_string(),
            t.l_fct.to_string(),
            t.l_cm.to_string(),
            t.l_smooth.to_string(),
            t.l_z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rotation of the object by `deg` about the model's up axis, seen through `pose`.
pub fn azimuth_pose(pose: &CameraPose, deg: f64) -> CameraPose {
    CameraPose {
        quat: quat_mul(pose.quat, axis_angle([0.0, 1.0, 0.0], deg.to_radians())),
        ..*pose
    }
}

/// Mesh, texture, material, renders, trace and summary.
///
/// Renders are made from the files as written, so re-rendering `mesh.obj`
/// with `texture.png` at `pose.json` reproduces `recon.png` exactly.
pub fn write_outputs(dir: &Path, model: &Model, out: &Outcome, cfg: &RunConfig) -> Result<()> {
    io::create_dir(dir)?;
    let mesh_path = dir.join("mesh.obj");
    let tex_path = dir.join("texture.png");
    io::write_obj(&mesh_path, &model.obj_mesh(&out.result.vertices), Some("material.mtl"))?;
    std::fs::write(dir.join("material.mtl"), io::mtl_text("texture.png"))?;
    io::write_texture(&tex_path, &out.result.decoded.texture)?;
    io::write_pose(&dir.join("pose.json"), &out.result.pose)?;

    let mesh = io::read_obj(&mesh_path)?;
    let texture = io::read_texture(&tex_path)?;
    let pose = io::read_pose(&dir.join("pose.json"))?;
    let recon = render_mesh(&mesh, &texture, &pose, cfg)?;
    io::write_image(&dir.join("recon.png"), &recon.image)?;
    for k in 0..NOVEL_VIEWS {
        let deg = 30.0 * k as f64;
        let r = render_mesh(&mesh, &texture, &azimuth_pose(&pose, deg), cfg)?;
        io::write_image(&dir.join(format!("novel_{k:02}.png")), &r.image)?;
    }
    write_trace(&dir.join("trace.csv"), &out.result.trace)?;
    io::write_json(&dir.join("summary.json"), &out.summary)
}

/// Target from explicit `input.image`/`input.mask`/`input.pose` keys.
fn explicit_target(cfg: &RunConfig) -> Result<Target> {
    let (Some(image), Some(mask)) = (&cfg.input.image, &cfg.input.mask) else {
        return Err(ConfigError::Invalid("invert needs input.dir or both input.image and input.mask".into()).into());
    };
    require_exists("input.image", image)?;
    require_exists("input.mask", mask)?;
    let pose = match &cfg.input.pose {
        None | Some(PoseSpec::Identity) => CameraPose::identity(),
        Some(PoseSpec::Params(p)) => CameraPose::from_params(p),
        Some(PoseSpec::File(p)) => {
            require_exists("input.pose", p)?;
            io::read_pose(p)?
        }
    };
    let target = Target {
        image: io::read_image(image)?,
        mask: io::read_mask(mask)?,
        init_pose: pose,
    };
    target.validate()?;
    Ok(target)
}

fn truth_for(dir: &Path, model: &Model) -> Result<Option<(Shape, CameraPose)>> {
    let p = dir.join(io::TRUTH_FILE);
    if !p.is_file() {
        return Ok(None);
    }
    let (z, pose) = read_truth(&p)?;
    if z.len() != model.dims().z_dim {
        return Ok(None);
    }
    Ok(Some((model.shape(&z)?, pose)))
}

fn invert_bundle(model: &Model, dir: &Path, out: &Path, cfg: &RunConfig) -> Result<Summary> {
    let target = io::load_bundle(dir)?;
    check_resolution(&target, cfg)?;
    let truth = truth_for(dir, model)?;
    let o = run(model, &target, cfg, truth.as_ref().map(|(s, p)| (s, p)))
        .with_context(|| format!("inverting {}", dir.display()))?;
    write_outputs(out, model, &o, cfg)?;
    Ok(o.summary)
}

fn check_resolution(target: &Target, cfg: &RunConfig) -> Result<()> {
    if target.image.width != cfg.render.resolution {
        return Err(ConfigError::Invalid(format!(
            "target is {}x{} but render.resolution is {}",
            target.image.width, target.image.height, cfg.render.resolution
        ))
        .into());
    }
    Ok(())
}

/// `invert` command: one bundle, explicit files, or a directory of bundles.
pub fn command(cfg: &RunConfig) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let Some(dir) = &cfg.input.dir else {
        let target = explicit_target(cfg)?;
        check_resolution(&target, cfg)?;
        let o = run(&model, &target, cfg, None)?;
        return write_outputs(&cfg.out, &model, &o, cfg);
    };
    require_exists("input.dir", dir)?;
    if io::is_bundle(dir) {
        invert_bundle(&model, dir, &cfg.out, cfg)?;
        return Ok(());
    }
    let bundles = io::list_bundles(dir)?;
    if bundles.is_empty() {
        bail!(ConfigError::Invalid(format!("{} holds no target bundles", dir.display())));
    }
    let summaries = parallel_map(bundles.len(), cfg.workers, |i| {
        let name = bundles[i].file_name().expect("bundle dir has a name");
        invert_bundle(&model, &bundles[i], &cfg.out.join(name), cfg)
    })?;
    io::create_dir(&cfg.out)?;
    let path = cfg.out.join("batch_summary.csv");
    let mut w = csv::Writer::from_writer(File::create(&path)?);
    w.write_record(["target", "best_total", "iou", "chamfer3d", "texture_mae"])?;
    for (b, s) in bundles.iter().zip(&summaries) {
        let (cd, mae) = s
            .truth
            .map(|t| (t.chamfer3d.to_string(), t.texture_mae.to_string()))
            .unwrap_or_default();
        w.write_record(&[
            b.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            s.best_total.to_string(),
            s.iou.to_string(),
            cd,
            mae,
        ])?;
    }
    w.flush()?;
    Ok(())
}
