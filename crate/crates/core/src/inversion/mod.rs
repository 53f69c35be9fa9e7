//! Multi-stage Adam optimization of the latent code and camera against one image.

mod adam;
mod objective;

pub use adam::{adam_step, AdamParams, AdamState};
pub use objective::{objective, Coverage, Evaluation, Problem, Sampling, Terms};

use crate::camera::{CameraPose, POSE_PARAMS};
use crate::decoder::{decode, DecoderWeights, Decoded};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::losses::{ChamferTexParams, LossWeights};
use crate::render::{Image, Mask, DEFAULT_N_SAMPLE};
use crate::tensorcore::{Real, Rng};

/// Smallest camera scale the optimizer may reach.
pub const MIN_SCALE: f64 = 1e-3;

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig<F> {
    pub stage_lr_z: Vec<F>,
    pub stage_lr_cam: Vec<F>,
    pub stage_iters: Vec<usize>,
    pub weights: LossWeights<F>,
    pub tex_params: ChamferTexParams<F>,
    pub adam: AdamParams<F>,
    pub n_sample: usize,
    pub seed: u64,
    pub resolution: usize,
    pub background: [F; 3],
    /// Clear Adam moments when a new stage starts.
    pub reset_moments: bool,
    /// Draw fresh texture point sets every iteration; otherwise one draw is reused.
    pub resample: bool,
}

impl<F: Real> Default for InversionConfig<F> {
    fn default() -> Self {
        Self {
            stage_lr_z: [0.1, 0.05, 0.01, 0.005].map(F::lit).to_vec(),
            stage_lr_cam: [0.01, 0.005, 0.001, 0.0005].map(F::lit).to_vec(),
            stage_iters: vec![50; 4],
            weights: LossWeights::default(),
            tex_params: ChamferTexParams::default(),
            adam: AdamParams::default(),
            n_sample: DEFAULT_N_SAMPLE,
            seed: 0,
            resolution: 128,
            background: [F::lit(0.5); 3],
            reset_moments: true,
            resample: true,
        }
    }
}

impl<F: Real> InversionConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let n = self.stage_iters.len();
        if n == 0 || self.stage_lr_z.len() != n || self.stage_lr_cam.len() != n {
            return Err(Error::invalid(format!(
                "stage lists must share a non-zero length, got {} / {} / {}",
                self.stage_lr_z.len(),
                self.stage_lr_cam.len(),
                n
            )));
        }
        for lr in self.stage_lr_z.iter().chain(&self.stage_lr_cam) {
            if !(*lr >= F::zero()) || !lr.is_finite() {
                return Err(Error::invalid(format!("learning rates must be finite and >= 0, got {lr}")));
            }
        }
        let a = &self.adam;
        if !(a.beta1 >= F::zero() && a.beta1 < F::one() && a.beta2 >= F::zero() && a.beta2 < F::one()) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(a.eps > F::zero()) {
            return Err(Error::invalid("Adam eps must be positive"));
        }
        if self.n_sample == 0 {
            return Err(Error::invalid("n_sample must be positive"));
        }
        if self.resolution < crate::render::MIN_RESOLUTION {
            return Err(Error::invalid(format!("resolution {} is too small", self.resolution)));
        }
        self.weights.validate()?;
        self.tex_params.validate()
    }

    pub fn total_iters(&self) -> usize {
        self.stage_iters.iter().sum()
    }
}

/// Input image, its silhouette and the initial camera.
#[derive(Debug, Clone)]
pub struct Target<F> {
    pub image: Image<F>,
    pub mask: Mask,
    pub init_pose: CameraPose<F>,
}

impl<F: Real> Target<F> {
    pub fn validate(&self) -> Result<()> {
        if (self.image.width, self.image.height) != (self.mask.width, self.mask.height) {
            return Err(Error::shape("target image and mask sizes differ"));
        }
        if self.image.width != self.image.height {
            return Err(Error::shape("target image must be square"));
        }
        if self.mask.count() == 0 {
            return Err(Error::empty("target mask has no foreground pixel"));
        }
        self.init_pose.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<F> {
    pub stage: usize,
    pub iter: usize,
    /// Weighted total on this iteration's training samples.
    pub total: F,
    pub terms: Terms<F>,
    /// Weighted total on the fixed evaluation samples.
    pub eval_total: F,
    /// Lowest `eval_total` seen so far.
    pub best_total: F,
}

#[derive(Debug, Clone)]
pub struct InversionResult<F> {
    /// Best iterate by evaluation loss.
    pub z: Vec<F>,
    pub pose: CameraPose<F>,
    pub best_total: F,
    pub decoded: Decoded<F>,
    pub vertices: Vec<Vec3<F>>,
    /// Parameters after the last step.
    pub last_z: Vec<F>,
    pub last_pose: CameraPose<F>,
    pub trace: Vec<TraceRow<F>>,
}

/// Latent initialization from `N(0, I)` on the run seed.
pub fn initial_latent<F: Real>(seed: u64, dim: usize) -> Vec<F> {
    Rng::with_stream(seed, STREAM_INIT).normals(dim).into_iter().map(F::lit).collect()
}

pub fn invert<F: Real>(
    decoder: &DecoderWeights<F>,
    target: &Target<F>,
    cfg: &InversionConfig<F>,
) -> Result<InversionResult<F>> {
    let z0 = initial_latent(cfg.seed, decoder.dims().z_dim);
    invert_from(decoder, target, cfg, z0)
}

pub fn invert_from<F: Real>(
    decoder: &DecoderWeights<F>,
    target: &Target<F>,
    cfg: &InversionConfig<F>,
    z0: Vec<F>,
) -> Result<InversionResult<F>> {
    let problem = Problem::new(decoder, target, cfg)?;
    let mut z = z0;
    let mut pose = target.init_pose;
    let mut adam_z = AdamState::new(z.len());
    let mut adam_cam = AdamState::new(POSE_PARAMS);
    let mut train_rng = Rng::with_stream(cfg.seed, STREAM_TRAIN);
    let mut trace = Vec::with_capacity(cfg.total_iters());
    let mut best: Option<(F, Vec<F>, CameraPose<F>)> = None;

    let eval_only = |z: &[F], pose: &CameraPose<F>| -> Result<F> {
        let mut rng = Rng::with_stream(cfg.seed, STREAM_EVAL);
        Ok(problem
            .evaluate(z, pose, Sampling::Random(&mut rng), Coverage::Live, false)?
            .total)
    };
    let mut consider = |total: F, z: &[F], pose: &CameraPose<F>| -> F {
        match &best {
            Some((b, _, _)) if !(total < *b) => {}
            _ => best = Some((total, z.to_vec(), *pose)),
        }
        best.as_ref().map(|b| b.0).unwrap_or(total)
    };

    for (stage, &iters) in cfg.stage_iters.iter().enumerate() {
        if cfg.reset_moments {
            adam_z.reset();
            adam_cam.reset();
        }
        for iter in 0..iters {
            let abort = |e: Error| Error::Aborted {
                stage,
                iter,
                source: Box::new(e),
            };
            if !cfg.resample {
                train_rng = Rng::with_stream(cfg.seed, STREAM_TRAIN);
            }
            let e = problem
                .evaluate(&z, &pose, Sampling::Random(&mut train_rng), Coverage::Live, true)
                .map_err(abort)?;
            if !e.total.is_finite() || e.grad_z.iter().any(|g| !g.is_finite()) {
                return Err(abort(Error::NonFinite("objective or gradient".into())));
            }
            let eval_total = if e.exhaustive || !cfg.resample {
                e.total
            } else {
                eval_only(&z, &pose).map_err(abort)?
            };
            let best_total = consider(eval_total, &z, &pose);
            trace.push(TraceRow {
                stage,
                iter,
                total: e.total,
                terms: e.terms,
                eval_total,
                best_total,
            });

            adam_step(&mut adam_z, &mut z, &e.grad_z, cfg.stage_lr_z[stage], &cfg.adam);
            let lr_cam = cfg.stage_lr_cam[stage];
            if lr_cam > F::zero() {
                let mut p = pose.to_params();
                adam_step(&mut adam_cam, &mut p, &e.grad_pose.to_params(), lr_cam, &cfg.adam);
                pose = CameraPose::from_params(&p);
                pose.scale = pose.scale.max(F::lit(MIN_SCALE));
            }
        }
    }

    // The parameters after the final step have not been scored yet.
    let last_stage = cfg.stage_iters.len() - 1;
    let final_total = eval_only(&z, &pose).map_err(|e| Error::Aborted {
        stage: last_stage,
        iter: cfg.stage_iters[last_stage],
        source: Box::new(e),
    })?;
    consider(final_total, &z, &pose);
    let (best_total, best_z, best_pose) = best.expect("at least one evaluation");
    let decoded = decode(&best_z, decoder)?;
    let vertices = crate::geometry::apply_deformation(&decoded.deformation, &problem.topology)?;
    Ok(InversionResult {
        z: best_z,
        pose: best_pose,
        best_total,
        decoded,
        vertices,
        last_z: z,
        last_pose: pose,
        trace,
    })
}
