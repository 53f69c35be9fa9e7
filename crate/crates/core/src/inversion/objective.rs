//! The weighted inversion objective and its gradient with respect to `(z, pose)`.

use crate::camera::{project_backward, project_weak_perspective, CameraPose, PoseGrad};
use crate::decoder::{decode, decode_backward, DecoderWeights};
use crate::error::{Error, Result};
use crate::geometry::{apply_deformation, build_sphere_template, DeformationMap, MeshTopology, Smoothness, Vec3};
use crate::losses::{
    chamfer_set_distance, chamfer_set_distance_grad, extract_features, feature_chamfer_texture_loss_with,
    latent_reg, scatter_pixel_grad, FeaturePoints, MaskTarget,
};
use crate::render::{image_to_points, image_to_points_all, mask_to_points, rasterize, PixelPoints, RenderOutput};
use crate::tensorcore::{Real, Rng};

use super::{InversionConfig, Target};

/// Raw, unweighted values of the five terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms<F> {
    pub l_pct: F,
    pub l_fct: F,
    pub l_cm: F,
    pub l_smooth: F,
    pub l_z: F,
}

/// How the pixel-level texture loss picks its point sets.
pub enum Sampling<'r> {
    /// Every foreground pixel on both sides.
    Exhaustive,
    /// `n_sample` pixels per side drawn from the given stream, rendered side first.
    Random(&'r mut Rng),
}

/// Which coverage the texture terms are evaluated on.
#[derive(Clone, Copy)]
pub enum Coverage<'a, F> {
    /// Rasterize the current mesh.
    Live,
    /// Re-shade a previous rasterization with the current texture. Geometry
    /// then only reaches the objective through the mask and smoothness terms,
    /// exactly like the gradient does.
    Frozen(&'a RenderOutput<F>),
}

#[derive(Debug, Clone)]
pub struct Evaluation<F> {
    pub terms: Terms<F>,
    pub total: F,
    /// Empty when no gradient was requested.
    pub grad_z: Vec<F>,
    pub grad_pose: PoseGrad<F>,
    /// True when both texture point sets were complete, so the value does not
    /// depend on the sampling stream.
    pub exhaustive: bool,
    pub render: RenderOutput<F>,
    pub vertices: Vec<Vec3<F>>,
}

/// Everything about a target that does not change during optimization.
pub struct Problem<'a, F: Real> {
    pub decoder: &'a DecoderWeights<F>,
    pub target: &'a Target<F>,
    pub cfg: &'a InversionConfig<F>,
    pub topology: MeshTopology<F>,
    smoothness: Smoothness,
    mask_target: MaskTarget<F>,
    input_points: PixelPoints<F>,
    input_features: FeaturePoints<F>,
}

impl<'a, F: Real> Problem<'a, F> {
    pub fn new(decoder: &'a DecoderWeights<F>, target: &'a Target<F>, cfg: &'a InversionConfig<F>) -> Result<Self> {
        cfg.validate()?;
        target.validate()?;
        if target.image.width != cfg.resolution {
            return Err(Error::invalid(format!(
                "target is {}x{} but the render resolution is {}",
                target.image.width, target.image.height, cfg.resolution
            )));
        }
        let d = decoder.dims();
        let topology = build_sphere_template(d.grid_h, d.grid_w)?;
        let smoothness = Smoothness::new(&topology.faces)?;
        Ok(Self {
            decoder,
            target,
            cfg,
            smoothness,
            mask_target: MaskTarget::new(&mask_to_points(&target.mask)?)?,
            input_points: image_to_points_all(&target.image, &target.mask)?,
            input_features: extract_features(&target.image, &target.mask)?,
            topology,
        })
    }

    pub fn evaluate(
        &self,
        z: &[F],
        pose: &CameraPose<F>,
        sampling: Sampling<'_>,
        coverage: Coverage<'_, F>,
        want_grad: bool,
    ) -> Result<Evaluation<F>> {
        let cfg = self.cfg;
        let w = &cfg.weights;
        let decoded = decode(z, self.decoder)?;
        let vertices = apply_deformation(&decoded.deformation, &self.topology)?;

        let proj = project_weak_perspective(pose, &vertices)?;
        let (l_cm, g_points) = if want_grad {
            self.mask_target.loss_grad(&proj.points)?
        } else {
            (self.mask_target.loss(&proj.points)?, Vec::new())
        };
        let (l_smooth, g_smooth) = if want_grad {
            self.smoothness.value_and_grad(&vertices)?
        } else {
            (self.smoothness.value(&vertices)?, Vec::new())
        };
        let (l_z, g_lz) = latent_reg(z);

        let render = match coverage {
            Coverage::Live => rasterize(
                &vertices,
                &self.topology.faces,
                &self.topology.uv,
                &decoded.texture,
                pose,
                cfg.resolution,
                cfg.background,
            )?,
            Coverage::Frozen(prev) => {
                let mut r = prev.clone();
                r.image = prev.shade(&decoded.texture)?;
                r
            }
        };
        if render.mask.count() == 0 {
            return Err(Error::empty("rendered mask is empty: the camera lost the object"));
        }

        let (rendered_pts, input_pts, exhaustive) = match sampling {
            Sampling::Exhaustive => (image_to_points_all(&render.image, &render.mask)?, None, true),
            Sampling::Random(rng) => {
                let a = image_to_points(&render.image, &render.mask, cfg.n_sample, rng)?;
                let b = image_to_points(&self.target.image, &self.target.mask, cfg.n_sample, rng)?;
                let full = cfg.n_sample >= render.mask.count() && cfg.n_sample >= self.target.mask.count();
                (a, Some(b), full)
            }
        };
        let input_set = &input_pts.as_ref().unwrap_or(&self.input_points).set;
        let n_pixels = cfg.resolution * cfg.resolution;

        let rendered = (&render.image, &render.mask);
        let fct = feature_chamfer_texture_loss_with(rendered, &self.input_features, &cfg.tex_params, want_grad)?;
        let l_fct = fct.value;
        let terms_only = |l_pct| Terms {
            l_pct,
            l_fct,
            l_cm,
            l_smooth,
            l_z,
        };

        if !want_grad {
            let l_pct = chamfer_set_distance(&rendered_pts.set, input_set, &cfg.tex_params)?;
            let terms = terms_only(l_pct);
            return Ok(Evaluation {
                total: terms.weighted(w),
                terms,
                grad_z: Vec::new(),
                grad_pose: PoseGrad::default(),
                exhaustive,
                render,
                vertices,
            });
        }

        let pct = chamfer_set_distance_grad(&rendered_pts.set, input_set, &cfg.tex_params)?;
        let terms = terms_only(pct.value);

        // Texture path: pixels -> texels -> decoder.
        let mut g_pixels = scatter_pixel_grad(&rendered_pts, &pct.grad_a, n_pixels);
        for (g, f) in g_pixels.iter_mut().zip(&fct.grad) {
            for c in 0..3 {
                g[c] = w.w_pct * g[c] + w.w_fct * f[c];
            }
        }
        let g_texture = render.texture_grad(&g_pixels);

        // Geometry path: mask loss through the camera, smoothness directly.
        let scaled: Vec<[F; 2]> = g_points.iter().map(|g| [w.w_cm * g[0], w.w_cm * g[1]]).collect();
        let (grad_pose, g_cm) = project_backward(pose, &vertices, &scaled)?;
        let offsets = g_cm
            .iter()
            .zip(&g_smooth)
            .map(|(a, b)| [a[0] + w.w_smooth * b[0], a[1] + w.w_smooth * b[1], a[2] + w.w_smooth * b[2]])
            .collect();
        let g_def = DeformationMap {
            h: self.topology.grid_h,
            w: self.topology.grid_w,
            offsets,
        };

        let mut grad_z = decode_backward(
            self.decoder,
            &decoded.cache,
            &decoded.texture,
            Some(&g_def),
            Some(&g_texture),
        )?;
        for (g, r) in grad_z.iter_mut().zip(&g_lz) {
            *g += w.w_z * *r;
        }
        Ok(Evaluation {
            total: terms.weighted(w),
            terms,
            grad_z,
            grad_pose,
            exhaustive,
            render,
            vertices,
        })
    }
}

impl<F: Real> Terms<F> {
    pub fn weighted(&self, w: &crate::losses::LossWeights<F>) -> F {
        w.w_pct * self.l_pct + w.w_fct * self.l_fct + w.w_cm * self.l_cm + w.w_smooth * self.l_smooth + w.w_z * self.l_z
    }
}

/// Value and gradients of the full objective at `(z, pose)` with every
/// foreground pixel in the texture term.
pub fn objective<F: Real>(
    z: &[F],
    pose: &CameraPose<F>,
    target: &Target<F>,
    cfg: &InversionConfig<F>,
    decoder: &DecoderWeights<F>,
) -> Result<(F, Vec<F>, PoseGrad<F>)> {
    let problem = Problem::new(decoder, target, cfg)?;
    let e = problem.evaluate(z, pose, Sampling::Exhaustive, Coverage::Live, true)?;
    Ok((e.total, e.grad_z, e.grad_pose))
}
