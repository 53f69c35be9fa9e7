//! Analytic gradients of every loss term against central differences.
//!
//! Nearest-neighbour losses are only piecewise smooth. Where the forward and
//! backward differences disagree, the step is refined or a one-sided
//! difference is used (see [`grad_check_piecewise`]); such coordinates are
//! counted in the `refined` column.

use anyhow::{anyhow, Result};
use meshfit_core::camera::{project_backward, project_weak_perspective};
use meshfit_core::decoder::{decode, decode_backward};
use meshfit_core::geometry::{DeformationMap, Smoothness, Vec3};
use meshfit_core::inversion::{Coverage, Problem, Sampling};
use meshfit_core::losses::{
    extract_features, feature_chamfer_texture_loss_with, latent_reg, pixel_chamfer_texture_loss,
    pixel_chamfer_texture_loss_grad, MaskTarget,
};
use meshfit_core::render::{mask_to_points, TextureMap};
use meshfit_core::tensorcore::{grad_check_piecewise, GradReport, Rng};
use meshfit_core::{CameraPose, Target};
use serde::Serialize;

use crate::config::RunConfig;
use crate::model::Model;
use crate::synthetic::random_pose;

pub const TOL: f64 = 1e-4;
pub const TOL_COMPOSED: f64 = 1e-3;

const STREAM_SUITE: u64 = 40;
/// Coordinates checked per large parameter block.
const MAX_COORDS: usize = 96;

#[derive(Debug, Clone, Serialize)]
pub struct GradRow {
    pub check: &'static str,
    pub config: usize,
    pub n_checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat parameter index with the largest relative error.
    pub worst_index: usize,
    /// Coordinates checked with a refined step or a one-sided difference.
    pub refined: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Up to `MAX_COORDS` of the `allowed` indices: the largest analytic entries
/// first, then a random fill, returned sorted.
fn pick_coords(analytic: &[f64], allowed: &[usize], rng: &mut Rng) -> Vec<usize> {
    if allowed.len() <= MAX_COORDS {
        return allowed.to_vec();
    }
    let mut by_size: Vec<usize> = allowed.iter().copied().filter(|&i| analytic[i] != 0.0).collect();
    by_size.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()).then(a.cmp(&b)));
    by_size.truncate(MAX_COORDS / 2);
    let mut chosen = std::collections::BTreeSet::from_iter(by_size);
    while chosen.len() < MAX_COORDS {
        chosen.insert(allowed[rng.below(allowed.len())]);
    }
    chosen.into_iter().collect()
}

/// Coordinates of vertices whose position no other vertex shares. Pole and
/// seam copies always move together in decoded meshes; nudging one copy
/// alone breaks nearest-neighbour ties and revives zero-area faces.
fn free_vertex_coords(v: &[Vec3<f64>]) -> Vec<usize> {
    let key = |p: &Vec3<f64>| p.map(f64::to_bits);
    let mut count = std::collections::HashMap::new();
    for p in v {
        *count.entry(key(p)).or_insert(0usize) += 1;
    }
    (0..v.len())
        .filter(|&i| count[&key(&v[i])] == 1)
        .flat_map(|i| 3 * i..3 * i + 3)
        .collect()
}

fn flatten3(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflatten3(x: &[f64]) -> Vec<[f64; 3]> {
    x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn row(check: &'static str, config: usize, r: GradReport, tolerance: f64) -> GradRow {
    GradRow {
        check,
        config,
        n_checked: r.n_checked,
        max_abs_err: r.max_abs_err,
        max_rel_err: r.max_rel_err,
        worst_index: r.worst_index,
        refined: r.refined,
        tolerance,
        pass: r.max_rel_err < tolerance,
    }
}

/// Runs every check at `cfg.grad_check.configs` seeded states.
pub fn run_suite(model: &Model, cfg: &RunConfig) -> Result<Vec<GradRow>> {
    let mut rows = Vec::new();
    for c in 0..cfg.grad_check.configs {
        rows.extend(run_config(model, cfg, c)?);
    }
    Ok(rows)
}

pub fn run_config(model: &Model, cfg: &RunConfig, index: usize) -> Result<Vec<GradRow>> {
    let mut rng = Rng::with_stream(cfg.seed.wrapping_add(index as u64), STREAM_SUITE);
    let h = cfg.grad_check.step;
    let res = cfg.grad_check.resolution;
    let zd = model.dims().z_dim;
    let mut run_cfg = cfg.clone();
    run_cfg.render.resolution = res;
    let inv = run_cfg.inversion();
    let p = inv.tex_params;

    let z_true: Vec<f64> = rng.normals(zd);
    let truth = model.shape(&z_true)?;
    let (pose_true, target_render) = random_pose(model, &truth, &run_cfg, &mut rng)?;
    let z: Vec<f64> = z_true.iter().map(|x| x + 0.5 * rng.normal()).collect();
    let shape = model.shape(&z)?;
    let pose = CameraPose {
        scale: pose_true.scale * 1.05,
        ..pose_true
    };
    let rendered = model.render(&shape, &pose, &run_cfg)?;
    if rendered.mask.count() == 0 {
        return Err(anyhow!("grad-check configuration {index} renders an empty mask"));
    }
    let target = Target {
        image: target_render.image.clone(),
        mask: target_render.mask.clone(),
        init_pose: pose,
    };
    let mut out = Vec::new();
    let tex = &shape.texture;
    let tex_of = |x: &[f64]| TextureMap {
        h: tex.h,
        w: tex.w,
        data: unflatten3(x),
    };
    let t0 = flatten3(&tex.data);
    let all_texels: Vec<usize> = (0..t0.len()).collect();
    let free = free_vertex_coords(&shape.vertices);

    // Pixel-level texture loss with a frozen sampling stream.
    let sample_seed = rng.below(1 << 30) as u64;
    let g = pixel_chamfer_texture_loss_grad(
        (&rendered.image, &rendered.mask),
        (&target.image, &target.mask),
        inv.n_sample,
        &p,
        &mut Rng::new(sample_seed),
    )?;
    let analytic = flatten3(&rendered.texture_grad(&g.grad));
    let coords = pick_coords(&analytic, &all_texels, &mut rng);
    let f = |x: &[f64]| {
        let img = rendered.shade(&tex_of(x)).expect("same texture size");
        pixel_chamfer_texture_loss(
            (&img, &rendered.mask),
            (&target.image, &target.mask),
            inv.n_sample,
            &p,
            &mut Rng::new(sample_seed),
        )
        .expect("non-empty sets")
    };
    out.push(row("l_pct/T", index, grad_check_piecewise(f, &t0, &analytic, h, &coords)?, TOL));

    // Feature-level texture loss.
    let feats = extract_features(&target.image, &target.mask)?;
    let g = feature_chamfer_texture_loss_with((&rendered.image, &rendered.mask), &feats, &p, true)?;
    let analytic = flatten3(&rendered.texture_grad(&g.grad));
    let coords = pick_coords(&analytic, &all_texels, &mut rng);
    let f = |x: &[f64]| {
        let img = rendered.shade(&tex_of(x)).expect("same texture size");
        feature_chamfer_texture_loss_with((&img, &rendered.mask), &feats, &p, false)
            .expect("non-empty sets")
            .value
    };
    out.push(row("l_fct/T", index, grad_check_piecewise(f, &t0, &analytic, h, &coords)?, TOL));

    // Mask loss w.r.t. vertices and the seven pose parameters.
    let mask_target = MaskTarget::new(&mask_to_points::<f64>(&target.mask)?)?;
    let nv = shape.vertices.len() * 3;
    let split = |x: &[f64]| -> (Vec<Vec3<f64>>, CameraPose) {
        (unflatten3(&x[..nv]), CameraPose::from_params(&x[nv..]))
    };
    let proj = project_weak_perspective(&pose, &shape.vertices)?;
    let (_, gp) = mask_target.loss_grad(&proj.points)?;
    let (gpose, gv) = project_backward(&pose, &shape.vertices, &gp)?;
    let mut x0 = flatten3(&shape.vertices);
    x0.extend_from_slice(&pose.to_params());
    let mut analytic = flatten3(&gv);
    analytic.extend_from_slice(&gpose.to_params());
    let mut coords = pick_coords(&analytic[..nv], &free, &mut rng);
    coords.extend(nv..nv + 7);
    let f = |x: &[f64]| {
        let (v, ps) = split(x);
        let pr = project_weak_perspective(&ps, &v).expect("valid pose");
        mask_target.loss(&pr.points).expect("non-empty sets")
    };
    out.push(row("l_cm/V,pose", index, grad_check_piecewise(f, &x0, &analytic, h, &coords)?, TOL));

    // Smoothness w.r.t. vertices.
    let smooth = Smoothness::new(&model.topo.faces)?;
    let (_, gv) = smooth.value_and_grad(&shape.vertices)?;
    let x0 = flatten3(&shape.vertices);
    let analytic = flatten3(&gv);
    let coords = pick_coords(&analytic, &free, &mut rng);
    let f = |x: &[f64]| smooth.value(&unflatten3(x)).expect("valid mesh");
    out.push(row("l_smooth/V", index, grad_check_piecewise(f, &x0, &analytic, h, &coords)?, TOL));

    // Latent prior.
    let (_, gz) = latent_reg(&z);
    let all: Vec<usize> = (0..zd).collect();
    let f = |x: &[f64]| latent_reg(x).0;
    out.push(row("l_z/z", index, grad_check_piecewise(f, &z, &gz, h, &all)?, TOL));

    // Decoder through a random linear read-out of both outputs.
    let d = model.dims();
    let n_off = d.grid_h * d.grid_w;
    let a: Vec<[f64; 3]> = (0..n_off).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
    let b: Vec<[f64; 3]> = (0..d.tex_h * d.tex_w)
        .map(|_| [rng.normal(), rng.normal(), rng.normal()])
        .collect();
    let readout = |z: &[f64]| {
        let o = decode(z, &model.decoder).expect("valid latent");
        let s1: f64 = o.deformation.offsets.iter().zip(&a).map(|(u, v)| u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).sum();
        let s2: f64 = o.texture.data.iter().zip(&b).map(|(u, v)| u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).sum();
        s1 + s2
    };
    let o = decode(&z, &model.decoder)?;
    let ga = DeformationMap {
        h: d.grid_h,
        w: d.grid_w,
        offsets: a.clone(),
    };
    let gz = decode_backward(&model.decoder, &o.cache, &o.texture, Some(&ga), Some(&b))?;
    out.push(row("decode/z", index, grad_check_piecewise(readout, &z, &gz, h, &all)?, TOL));

    // Composed objective with exhaustive sampling and frozen coverage.
    let problem = Problem::new(&model.decoder, &target, &inv)?;
    let e = problem.evaluate(&z, &pose, Sampling::Exhaustive, Coverage::Live, true)?;
    let frozen = e.render.clone();
    let f = |x: &[f64]| {
        problem
            .evaluate(
                &x[..zd],
                &CameraPose::from_params(&x[zd..]),
                Sampling::Exhaustive,
                Coverage::Frozen(&frozen),
                false,
            )
            .expect("objective evaluates")
            .total
    };
    let mut x0 = z.clone();
    x0.extend_from_slice(&pose.to_params());
    let mut analytic = e.grad_z.clone();
    analytic.extend_from_slice(&e.grad_pose.to_params());
    let all: Vec<usize> = (0..zd + 7).collect();
    out.push(row(
        "objective/z,pose",
        index,
        grad_check_piecewise(f, &x0, &analytic, h, &all)?,
        TOL_COMPOSED,
    ));
    Ok(out)
}
