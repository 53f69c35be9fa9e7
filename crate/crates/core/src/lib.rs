//! Single-image textured mesh reconstruction by optimizing the latent code of
//! a fixed generator and a weak-perspective camera.
//!
//! The numeric code is generic over [`tensorcore::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`, which is what the command line
//! tool uses.

pub mod camera;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod inversion;
pub mod losses;
pub mod render;
pub mod tensorcore;

pub use error::{Error, Result};

pub type Tensor = tensorcore::Tensor<f64>;
pub type CameraPose = camera::CameraPose<f64>;
pub type PoseGrad = camera::PoseGrad<f64>;
pub type MeshTopology = geometry::MeshTopology<f64>;
pub type DeformationMap = geometry::DeformationMap<f64>;
pub type TextureMap = render::TextureMap<f64>;
pub type Image = render::Image<f64>;
pub type RenderOutput = render::RenderOutput<f64>;
pub type ColoredPointSet = render::ColoredPointSet<f64>;
pub type ChamferTexParams = losses::ChamferTexParams<f64>;
pub type LossWeights = losses::LossWeights<f64>;
pub type DecoderWeights = decoder::DecoderWeights<f64>;
pub type InversionConfig = inversion::InversionConfig<f64>;
pub type Target = inversion::Target<f64>;
pub type InversionResult = inversion::InversionResult<f64>;
