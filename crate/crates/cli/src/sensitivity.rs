//! Response of 2D mask losses to small 3D shape changes.
//!
//! Each shape `z_i` is moved along one random unit direction by `eta`. The 3D
//! change is measured with surface samples shared between the two meshes; the
//! 2D losses compare the moved shape with the original under one fixed camera.

use std::fs::File;

use anyhow::{Context, Result};
use meshfit_core::camera::project_weak_perspective;
use meshfit_core::losses::{chamfer_mask_loss, iou_mask_loss, l1_mask_loss};
use meshfit_core::tensorcore::Rng;

use crate::config::RunConfig;
use crate::io;
use crate::model::Model;
use crate::pool::parallel_map;
use crate::synthetic::random_pose;

const STREAM_SHAPES: u64 = 30;
pub const LOSSES: [&str; 3] = ["l_cm", "l_iou", "l_l1"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensRow {
    pub shape_id: usize,
    pub eta: f64,
    pub cd3d: f64,
    /// `l_cm`, `l_iou`, `l_l1`; NaN when the moved shape left no silhouette.
    pub losses: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecadeSlope {
    pub loss: &'static str,
    pub eta_lo: f64,
    pub eta_hi: f64,
    /// Range of the per-eta mean `cd3d` inside the decade.
    pub cd3d_lo: f64,
    pub cd3d_hi: f64,
    /// Mean over shapes of the log-log least-squares slope; NaN without fits.
    pub mean_slope: f64,
    pub n_fits: usize,
    pub zero_fraction: f64,
}

/// `0` followed by `10^(k / per_decade)` for `k` spanning the exponent range.
pub fn eta_grid(cfg: &RunConfig) -> Vec<f64> {
    let s = &cfg.sensitivity;
    let steps = (s.eta_max_exp - s.eta_min_exp).max(0) as usize * s.per_decade;
    let mut g = vec![0.0];
    for k in 0..=steps {
        g.push(10f64.powf(s.eta_min_exp as f64 + k as f64 / s.per_decade as f64));
    }
    g
}

pub fn shape_rows(model: &Model, cfg: &RunConfig, shape_id: usize) -> Result<Vec<SensRow>> {
    let mut rng = Rng::with_stream(cfg.seed.wrapping_add(shape_id as u64), STREAM_SHAPES);
    let zd = model.dims().z_dim;
    let z0: Vec<f64> = rng.normals(zd);
    let dir = rng.unit_vector(zd);
    let base = model.shape(&z0)?;
    let (pose, base_render) = random_pose(model, &base, cfg, &mut rng)?;
    let base_proj = project_weak_perspective(&pose, &base.vertices)?.points;
    let samples = model.surface_samples(&base.vertices, cfg.surface_samples, cfg.seed.wrapping_add(shape_id as u64))?;
    let mut rows = Vec::new();
    for eta in eta_grid(cfg) {
        let z: Vec<f64> = z0.iter().zip(&dir).map(|(a, d)| a + eta * d).collect();
        let moved = model.shape(&z)?;
        let cd3d = model.chamfer3d(&samples, &base.vertices, &moved.vertices)?;
        let proj = project_weak_perspective(&pose, &moved.vertices)?.points;
        let l_cm = chamfer_mask_loss(&proj, &base_proj)?;
        let r = model.render(&moved, &pose, cfg)?;
        let (l_iou, l_l1) = if r.mask.count() == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                iou_mask_loss(&r.mask, &base_render.mask)?,
                l1_mask_loss(&r.mask, &base_render.mask)?,
            )
        };
        rows.push(SensRow {
            shape_id,
            eta,
            cd3d,
            losses: [l_cm, l_iou, l_l1],
        });
    }
    Ok(rows)
}

pub fn run(model: &Model, cfg: &RunConfig) -> Result<Vec<SensRow>> {
    let per_shape = parallel_map(cfg.sensitivity.shapes, cfg.workers, |i| shape_rows(model, cfg, i))?;
    Ok(per_shape.into_iter().flatten().collect())
}

/// Least-squares slope of `y` on `x`; `None` with fewer than two distinct x.
fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Per-decade log-log slopes of each 2D loss against `cd3d`. Rows whose loss
/// is exactly zero are left out of the fits and counted in `zero_fraction`.
pub fn summarize(rows: &[SensRow], cfg: &RunConfig) -> Vec<DecadeSlope> {
    let s = &cfg.sensitivity;
    let mut shapes: Vec<usize> = rows.iter().map(|r| r.shape_id).collect();
    shapes.dedup();
    let mut out = Vec::new();
    for (li, &loss) in LOSSES.iter().enumerate() {
        for e in s.eta_min_exp..s.eta_max_exp {
            let lo = 10f64.powi(e);
            let hi = 10f64.powi(e + 1);
            // Tolerate rounding in the grid's powf.
            let inside = |eta: f64| eta >= lo * (1.0 - 1e-9) && eta <= hi * (1.0 + 1e-9);
            let in_decade: Vec<&SensRow> = rows
                .iter()
                .filter(|r| inside(r.eta) && !r.losses[li].is_nan())
                .collect();
            let mut etas: Vec<f64> = in_decade.iter().map(|r| r.eta).collect();
            etas.sort_by(f64::total_cmp);
            etas.dedup();
            let means: Vec<f64> = etas
                .iter()
                .map(|&eta| {
                    let v: Vec<f64> = in_decade.iter().filter(|r| r.eta == eta).map(|r| r.cd3d).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect();
            let zeros = in_decade.iter().filter(|r| r.losses[li] == 0.0).count();
            let mut slopes = Vec::new();
            for &sid in &shapes {
                let pts: Vec<(f64, f64)> = in_decade
                    .iter()
                    .filter(|r| r.shape_id == sid && r.losses[li] > 0.0 && r.cd3d > 0.0)
                    .map(|r| (r.cd3d.log10(), r.losses[li].log10()))
                    .collect();
                if let Some(k) = slope(&pts) {
                    slopes.push(k);
                }
            }
            out.push(DecadeSlope {
                loss,
                eta_lo: lo,
                eta_hi: hi,
                cd3d_lo: means.iter().copied().fold(f64::INFINITY, f64::min),
                cd3d_hi: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_slope: if slopes.is_empty() {
                    f64::NAN
                } else {
                    slopes.iter().sum::<f64>() / slopes.len() as f64
                },
                n_fits: slopes.len(),
                zero_fraction: zeros as f64 / in_decade.len().max(1) as f64,
            });
        }
    }
    out
}

/// Orders of magnitude spanned by the non-zero `cd3d` values.
pub fn cd3d_span_decades(rows: &[SensRow]) -> f64 {
    let pos: Vec<f64> = rows.iter().map(|r| r.cd3d).filter(|c| *c > 0.0).collect();
    if pos.is_empty() {
        return 0.0;
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pos.iter().copied().fold(0.0, f64::max);
    (hi / lo).log10()
}

pub fn command(cfg: &RunConfig) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let rows = run(&model, cfg)?;
    io::create_dir(&cfg.out)?;
    let path = cfg.out.join("sensitivity.csv");
    let mut w = csv::Writer::from_writer(File::create(&path).with_context(|| format!("writing {}", path.display()))?);
    w.write_record(["shape_id", "eta", "cd3d", "l_cm", "l_iou", "l_l1"])?;
    for r in &rows {
        w.write_record(&[
            r.shape_id.to_string(),
            r.eta.to_string(),
            r.cd3d.to_string(),
            r.losses[0].to_string(),
            r.losses[1].to_string(),
            r.losses[2].to_string(),
        ])?;
    }
    w.flush()?;

    let path = cfg.out.join("sensitivity_summary.csv");
    let mut w = csv::Writer::from_writer(File::create(&path)?);
    w.write_record(["loss", "eta_lo", "eta_hi", "cd3d_lo", "cd3d_hi", "mean_slope", "n_fits", "zero_fraction"])?;
    for d in summarize(&rows, cfg) {
        w.write_record(&[
            d.loss.to_string(),
            d.eta_lo.to_string(),
            d.eta_hi.to_string(),
            d.cd3d_lo.to_string(),
            d.cd3d_hi.to_string(),
            d.mean_slope.to_string(),
            d.n_fits.to_string(),
            d.zero_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    let span = cd3d_span_decades(&rows);
    if span < 3.0 {
        eprintln!("warning: cd3d spans only {span:.2} decades");
    }
    Ok(())
}
