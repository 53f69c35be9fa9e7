//! Decoder plus template, and the evaluation metrics shared by the commands.

use anyhow::{Context, Result};
use meshfit_core::decoder::{decode, init_decoder, DecoderDims};
use meshfit_core::geometry::{apply_deformation, build_sphere_template, chamfer3d, SurfaceSamples, Vec3};
use meshfit_core::losses::iou;
use meshfit_core::render::{rasterize, Mask, TextureMap};
use meshfit_core::tensorcore::{load_tensors, Rng};
use meshfit_core::{CameraPose, DecoderWeights, Image, MeshTopology, RenderOutput};

use crate::config::RunConfig;
use crate::io::ObjMesh;

/// RNG stream for surface samples used by 3D metrics.
const STREAM_SURFACE: u64 = 11;

pub struct Model {
    pub decoder: DecoderWeights,
    pub topo: MeshTopology,
}

/// Decoded mesh ready to render.
#[derive(Debug, Clone)]
pub struct Shape {
    pub vertices: Vec<Vec3<f64>>,
    pub texture: TextureMap<f64>,
}

impl Model {
    pub fn new(decoder: DecoderWeights) -> Result<Self> {
        let d = decoder.dims();
        let topo = build_sphere_template(d.grid_h, d.grid_w)?;
        Ok(Self { decoder, topo })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let decoder = match &cfg.decoder.path {
            Some(p) => {
                let tensors = load_tensors(p).with_context(|| format!("loading decoder {}", p.display()))?;
                DecoderWeights::from_tensors(tensors, &cfg.dims)?
            }
            None => init_decoder(cfg.decoder.seed, &cfg.dims)?,
        };
        Self::new(decoder)
    }

    pub fn dims(&self) -> &DecoderDims {
        self.decoder.dims()
    }

    pub fn shape(&self, z: &[f64]) -> Result<Shape> {
        let out = decode(z, &self.decoder)?;
        Ok(Shape {
            vertices: apply_deformation(&out.deformation, &self.topo)?,
            texture: out.texture,
        })
    }

    pub fn render(&self, shape: &Shape, pose: &CameraPose, cfg: &RunConfig) -> Result<RenderOutput> {
        Ok(rasterize(
            &shape.vertices,
            &self.topo.faces,
            &self.topo.uv,
            &shape.texture,
            pose,
            cfg.render.resolution,
            cfg.render.background,
        )?)
    }

    pub fn obj_mesh(&self, vertices: &[Vec3<f64>]) -> ObjMesh {
        ObjMesh {
            vertices: vertices.to_vec(),
            uv: self.topo.uv.clone(),
            faces: self.topo.faces.clone(),
        }
    }

    /// Area-weighted samples on `reference`, reused on every mesh compared to it.
    pub fn surface_samples(&self, reference: &[Vec3<f64>], n: usize, seed: u64) -> Result<SurfaceSamples<f64>> {
        let mut rng = Rng::with_stream(seed, STREAM_SURFACE);
        Ok(SurfaceSamples::draw(reference, &self.topo.faces, n, &mut rng)?)
    }

    /// Chamfer distance between surface samples placed at the same face and
    /// barycentric coordinates on both meshes, so identical meshes score 0.
    pub fn chamfer3d(&self, samples: &SurfaceSamples<f64>, a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<f64> {
        let pa = samples.points(a, &self.topo.faces);
        let pb = samples.points(b, &self.topo.faces);
        Ok(chamfer3d(&pa, &pb)?)
    }
}

pub fn render_mesh(mesh: &ObjMesh, texture: &TextureMap<f64>, pose: &CameraPose, cfg: &RunConfig) -> Result<RenderOutput> {
    Ok(rasterize(
        &mesh.vertices,
        &mesh.faces,
        &mesh.uv,
        texture,
        pose,
        cfg.render.resolution,
        cfg.render.background,
    )?)
}

/// Mean absolute RGB error over the foreground of `mask`.
pub fn foreground_mae(a: &Image, b: &Image, mask: &Mask) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, &fg) in mask.data.iter().enumerate() {
        if fg {
            for c in 0..3 {
                acc += (a.data[p][c] - b.data[p][c]).abs();
            }
            n += 3;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(iou(a, b)?)
}
