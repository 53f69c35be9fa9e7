//! Inversion over a suite of synthetic targets, and the commands built on it.

use std::fs::File;

use anyhow::{Context, Result};
use meshfit_core::CameraPose;

use crate::config::{ConfigError, PoseSpec, RunConfig};
use crate::invert;
use crate::io;
use crate::model::{render_mesh, Model};
use crate::pool::parallel_map;
use crate::synthetic::{generate, write_bundle, SyntheticTarget};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteRun {
    pub index: usize,
    pub best_total: f64,
    pub iou: f64,
    pub chamfer3d: f64,
    pub texture_mae: f64,
}

pub fn make_targets(model: &Model, cfg: &RunConfig, n: usize) -> Result<Vec<SyntheticTarget>> {
    parallel_map(n, cfg.workers, |i| generate(model, cfg, i))
}

/// Inverts every target; target `i` uses run seed `cfg.seed + i`.
pub fn run_suite(model: &Model, cfg: &RunConfig, targets: &[SyntheticTarget]) -> Result<Vec<SuiteRun>> {
    parallel_map(targets.len(), cfg.workers, |i| run_one(model, cfg, &targets[i]))
}

pub fn run_one(model: &Model, cfg: &RunConfig, t: &SyntheticTarget) -> Result<SuiteRun> {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(t.info.index as u64);
    let o = invert::run(model, &t.target, &c, Some((&t.truth, &t.pose)))
        .with_context(|| format!("synthetic target {}", t.info.index))?;
    let truth = o.summary.truth.expect("truth was supplied");
    Ok(SuiteRun {
        index: t.info.index,
        best_total: o.summary.best_total,
        iou: o.summary.iou,
        chamfer3d: truth.chamfer3d,
        texture_mae: truth.texture_mae,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub eps_s: f64,
    pub n_targets: usize,
    pub mean_iou: f64,
    pub mean_texture_mae: f64,
    pub mean_chamfer3d: f64,
}

/// Same targets and seeds for every row; only `eps_s` changes.
pub fn eps_sweep(model: &Model, cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let n = cfg.eps_sweep.targets;
    let values = &cfg.eps_sweep.values;
    let targets = make_targets(model, cfg, n)?;
    let runs = parallel_map(values.len() * n, cfg.workers, |k| {
        let mut c = cfg.clone();
        c.inversion.tex_params.eps_s = values[k / n];
        c.inversion
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("eps_sweep.values: {e}")))?;
        run_one(model, &c, &targets[k % n])
    })?;
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &eps_s)| {
            let rs = &runs[i * n..(i + 1) * n];
            SweepRow {
                eps_s,
                n_targets: n,
                mean_iou: mean(rs.iter().map(|r| r.iou)),
                mean_texture_mae: mean(rs.iter().map(|r| r.texture_mae)),
                mean_chamfer3d: mean(rs.iter().map(|r| r.chamfer3d)),
            }
        })
        .collect())
}

pub fn eps_sweep_command(cfg: &RunConfig) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let rows = eps_sweep(&model, cfg)?;
    io::create_dir(&cfg.out)?;
    let path = cfg.out.join("eps_sweep.csv");
    let mut w = csv::Writer::from_writer(File::create(&path).with_context(|| format!("writing {}", path.display()))?);
    w.write_record(["eps_s", "n_targets", "mean_iou", "mean_texture_mae", "mean_chamfer3d"])?;
    for r in rows {
        w.write_record(&[
            r.eps_s.to_string(),
            r.n_targets.to_string(),
            r.mean_iou.to_string(),
            r.mean_texture_mae.to_string(),
            r.mean_chamfer3d.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `synthetic.count` bundles; a single bundle goes straight into `out`.
pub fn make_synthetic_command(cfg: &RunConfig) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let n = cfg.synthetic.count;
    if n == 0 {
        return Err(ConfigError::Invalid("synthetic.count must be positive".into()).into());
    }
    let targets = make_targets(&model, cfg, n)?;
    for t in &targets {
        let dir = if n == 1 {
            cfg.out.clone()
        } else {
            cfg.out.join(format!("target_{:03}", t.info.index))
        };
        write_bundle(&dir, t)?;
    }
    Ok(())
}

fn resolve_pose(spec: &PoseSpec) -> Result<CameraPose> {
    Ok(match spec {
        PoseSpec::Identity => CameraPose::identity(),
        PoseSpec::Params(p) => CameraPose::from_params(p),
        PoseSpec::File(p) => {
            crate::config::require_exists("render.pose", p)?;
            io::read_pose(p)?
        }
    })
}

/// Renders `render.mesh` with `render.texture` to `render.png` and `render_mask.png`.
pub fn render_command(cfg: &RunConfig) -> Result<()> {
    let (Some(mesh), Some(tex)) = (&cfg.render.mesh, &cfg.render.texture) else {
        return Err(ConfigError::Invalid("render needs render.mesh and render.texture".into()).into());
    };
    crate::config::require_exists("render.mesh", mesh)?;
    crate::config::require_exists("render.texture", tex)?;
    let pose = resolve_pose(&cfg.render.pose)?;
    let mesh = io::read_obj(mesh)?;
    let texture = io::read_texture(tex)?;
    let r = render_mesh(&mesh, &texture, &pose, cfg)?;
    io::create_dir(&cfg.out)?;
    io::write_image(&cfg.out.join("render.png"), &r.image)?;
    io::write_mask(&cfg.out.join("render_mask.png"), &r.mask)
}

/// Writes `grad_check.csv` and returns the number of failed checks.
pub fn grad_check_command(cfg: &RunConfig) -> Result<usize> {
    let model = Model::from_config(cfg)?;
    let rows = crate::gradsuite::run_suite(&model, cfg)?;
    io::create_dir(&cfg.out)?;
    let path = cfg.out.join("grad_check.csv");
    let mut w = csv::Writer::from_writer(File::create(&path).with_context(|| format!("writing {}", path.display()))?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows.iter().filter(|r| !r.pass).count())
}

