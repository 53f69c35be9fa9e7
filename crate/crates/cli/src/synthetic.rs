//! Ground-truth targets rendered from known latent codes and cameras.

use std::path::Path;

use anyhow::{bail, Result};
use meshfit_core::camera::{axis_angle, quat_mul};
use meshfit_core::tensorcore::{load_tensors, save_tensors, Rng, Tensor};
use meshfit_core::{CameraPose, Image, RenderOutput, Target};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{self, PoseJson};
use crate::model::{Model, Shape};

const STREAM_TRUTH: u64 = 20;
const MAX_POSE_TRIES: usize = 100;

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

fn round_pose(p: CameraPose) -> CameraPose {
    CameraPose {
        scale: f32_round(p.scale),
        translation: p.translation.map(f32_round),
        quat: p.quat.map(f32_round),
    }
}

/// Random rotation and translation at `synthetic.scale`, redrawn until the
/// silhouette covers at least `synthetic.min_coverage` of the image.
pub fn random_pose(
    model: &Model,
    shape: &Shape,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(CameraPose, RenderOutput)> {
    let s = &cfg.synthetic;
    let pixels = (cfg.render.resolution * cfg.render.resolution) as f64;
    for _ in 0..MAX_POSE_TRIES {
        let quat = rng.unit_quaternion();
        let t = [
            s.translation_range * (2.0 * rng.uniform() - 1.0),
            s.translation_range * (2.0 * rng.uniform() - 1.0),
        ];
        let pose = round_pose(CameraPose {
            scale: s.scale,
            translation: t,
            quat,
        });
        let r = model.render(shape, &pose, cfg)?;
        if r.mask.count() as f64 >= s.min_coverage * pixels {
            return Ok((pose, r));
        }
    }
    bail!("no camera within {MAX_POSE_TRIES} draws covers {} of the image", s.min_coverage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub rotation_deg: f64,
    /// Relative scale change.
    pub scale: f64,
    /// Length of the translation offset.
    pub translation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthInfo {
    pub index: usize,
    pub seed: u64,
    pub decoder_seed: u64,
    pub resolution: usize,
    pub coverage: f64,
    pub true_pose: PoseJson,
    pub init_pose: PoseJson,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone)]
pub struct SyntheticTarget {
    pub z: Vec<f64>,
    pub pose: CameraPose,
    pub truth: Shape,
    /// Image as stored on disk (8-bit), mask, and the perturbed camera.
    pub target: Target,
    pub info: TruthInfo,
}

/// The `index`-th target of the suite seeded by `cfg.seed`.
pub fn generate(model: &Model, cfg: &RunConfig, index: usize) -> Result<SyntheticTarget> {
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut rng = Rng::with_stream(seed, STREAM_TRUTH);
    let z: Vec<f64> = rng.normals(model.dims().z_dim).into_iter().map(f32_round).collect();
    let truth = model.shape(&z)?;
    let (pose, r) = random_pose(model, &truth, cfg, &mut rng)?;

    let s = &cfg.synthetic;
    let axis = rng.unit_vector(3);
    let dq = axis_angle([axis[0], axis[1], axis[2]], s.perturb_deg.to_radians());
    let dir = 2.0 * std::f64::consts::PI * rng.uniform();
    let init_pose = CameraPose {
        scale: pose.scale * (1.0 + s.perturb_scale),
        translation: [
            pose.translation[0] + s.perturb_translation * dir.cos(),
            pose.translation[1] + s.perturb_translation * dir.sin(),
        ],
        quat: quat_mul(dq, pose.quat),
    };
    let pixels = (cfg.render.resolution * cfg.render.resolution) as f64;
    let info = TruthInfo {
        index,
        seed,
        decoder_seed: cfg.decoder.seed,
        resolution: cfg.render.resolution,
        coverage: r.mask.count() as f64 / pixels,
        true_pose: pose.into(),
        init_pose: init_pose.into(),
        perturbation: Perturbation {
            rotation_deg: s.perturb_deg,
            scale: s.perturb_scale,
            translation: s.perturb_translation,
        },
    };
    let image = Image::new(r.image.width, r.image.height, io::quantize(&r.image.data))?;
    Ok(SyntheticTarget {
        z,
        pose,
        truth,
        target: Target {
            image,
            mask: r.mask,
            init_pose,
        },
        info,
    })
}

/// Writes `image.png`, `mask.png`, `init_pose.json`, `truth.miv1` and `truth.json`.
pub fn write_bundle(dir: &Path, t: &SyntheticTarget) -> Result<()> {
    io::create_dir(dir)?;
    io::write_image(&dir.join(io::IMAGE_FILE), &t.target.image)?;
    io::write_mask(&dir.join(io::MASK_FILE), &t.target.mask)?;
    io::write_pose(&dir.join(io::INIT_POSE_FILE), &t.target.init_pose)?;
    let z = Tensor::new(vec![t.z.len()], t.z.clone())?;
    let pose = Tensor::new(vec![7], t.pose.to_params().to_vec())?;
    save_tensors(dir.join(io::TRUTH_FILE), &[("z", &z), ("pose", &pose)])?;
    io::write_json(&dir.join(io::TRUTH_JSON), &t.info)
}

/// `(z, pose)` from a `truth.miv1` file.
pub fn read_truth(path: &Path) -> Result<(Vec<f64>, CameraPose)> {
    let tensors = load_tensors::<f64>(path)?;
    let get = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| anyhow::anyhow!("{} has no `{name}` tensor", path.display()))
    };
    let z = get("z")?;
    let p = get("pose")?;
    if p.len() != 7 {
        bail!("{}: pose tensor must have 7 entries", path.display());
    }
    Ok((z, CameraPose::from_params(&p)))
}
