//! PNG, OBJ/MTL, pose JSON and target bundle I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use image::{GrayImage, Luma, Rgb, RgbImage};
use meshfit_core::geometry::Vec3;
use meshfit_core::render::{Mask, TextureMap};
use meshfit_core::{CameraPose, Image, Target};
use serde::{Deserialize, Serialize};

pub const IMAGE_FILE: &str = "image.png";
pub const MASK_FILE: &str = "mask.png";
pub const INIT_POSE_FILE: &str = "init_pose.json";
pub const TRUTH_FILE: &str = "truth.miv1";
pub const TRUTH_JSON: &str = "truth.json";

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgb_image(width: usize, height: usize, data: &[[f64; 3]]) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let p = data[y as usize * width + x as usize];
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    })
}

/// 8-bit quantization as it would come back from a PNG.
pub fn quantize(data: &[[f64; 3]]) -> Vec<[f64; 3]> {
    data.iter()
        .map(|p| p.map(|c| to_u8(c) as f64 / 255.0))
        .collect()
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    rgb_image(img.width, img.height, &img.data)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    let data = img
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    Ok((img.width() as usize, img.height() as usize, data))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let (w, h, data) = read_rgb(path)?;
    Ok(Image::new(w, h, data)?)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
    .save(path)
    .with_context(|| format!("writing {}", path.display()))
}

/// Pixels brighter than mid-gray are foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_luma8();
    let data = img.pixels().map(|p| p.0[0] > 127).collect();
    Ok(Mask::new(img.width() as usize, img.height() as usize, data)?)
}

pub fn write_texture(path: &Path, t: &TextureMap<f64>) -> Result<()> {
    rgb_image(t.w, t.h, &t.data)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_texture(path: &Path) -> Result<TextureMap<f64>> {
    let (w, h, data) = read_rgb(path)?;
    Ok(TextureMap { h, w, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub scale: f64,
    pub translation: [f64; 2],
    /// `[w, x, y, z]`
    pub quat: [f64; 4],
}

impl From<CameraPose> for PoseJson {
    fn from(p: CameraPose) -> Self {
        Self {
            scale: p.scale,
            translation: p.translation,
            quat: p.quat,
        }
    }
}

impl From<PoseJson> for CameraPose {
    fn from(p: PoseJson) -> Self {
        CameraPose {
            scale: p.scale,
            translation: p.translation,
            quat: p.quat,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_pose(path: &Path, pose: &CameraPose) -> Result<()> {
    write_json(path, &PoseJson::from(*pose))
}

pub fn read_pose(path: &Path) -> Result<CameraPose> {
    Ok(read_json::<PoseJson>(path)?.into())
}

/// Mesh as stored in an OBJ file; `uv[i]` belongs to `vertices[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3<f64>>,
    pub uv: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
}

/// `v`, `vt` and `f v/vt` records. Values are written at `f32` precision and
/// texture rows run top to bottom, so `vt` stores `1 - v`.
pub fn obj_text(mesh: &ObjMesh, mtl_name: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(m) = mtl_name {
        let _ = writeln!(s, "mtllib {m}");
    }
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0] as f32, v[1] as f32, v[2] as f32);
    }
    for t in &mesh.uv {
        let _ = writeln!(s, "vt {} {}", t[0] as f32, (1.0 - t[1]) as f32);
    }
    if mtl_name.is_some() {
        let _ = writeln!(s, "usemtl material");
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {0}/{0} {1}/{1} {2}/{2}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn mtl_text(texture_file: &str) -> String {
    format!("newmtl material\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {texture_file}\n")
}

fn parse_index(tok: &str, n: usize, line: usize) -> Result<usize> {
    let i: i64 = tok
        .parse()
        .map_err(|_| anyhow!("line {line}: bad index `{tok}`"))?;
    let idx = if i < 0 { n as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= n {
        bail!("line {line}: index {i} out of range");
    }
    Ok(idx as usize)
}

/// Reads triangles with texture coordinates. Corners whose position and
/// texture indices differ are split into separate vertices.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut pos: Vec<Vec3<f64>> = Vec::new();
    let mut tex: Vec<[f64; 2]> = Vec::new();
    let mut corners: Vec<[(usize, usize); 3]> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let mut it = raw.split_whitespace();
        let nums = |it: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
            it.map(|t| t.parse::<f32>().map(|x| x as f64))
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow!("line {line}: bad number"))
        };
        match it.next() {
            Some("v") => {
                let v = nums(it)?;
                if v.len() < 3 {
                    bail!("line {line}: vertex needs 3 coordinates");
                }
                pos.push([v[0], v[1], v[2]]);
            }
            Some("vt") => {
                let v = nums(it)?;
                if v.len() < 2 {
                    bail!("line {line}: texture coordinate needs 2 values");
                }
                tex.push([v[0], 1.0 - v[1]]);
            }
            Some("f") => {
                let mut c = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let vi = parse_index(parts.next().unwrap_or(""), pos.len(), line)?;
                    let ti = match parts.next() {
                        Some(t) if !t.is_empty() => parse_index(t, tex.len(), line)?,
                        _ => bail!("line {line}: face corner `{tok}` has no texture index"),
                    };
                    c.push((vi, ti));
                }
                if c.len() != 3 {
                    bail!("line {line}: only triangles are supported");
                }
                corners.push([c[0], c[1], c[2]]);
            }
            _ => {}
        }
    }
    let aligned = pos.len() == tex.len() && corners.iter().flatten().all(|(v, t)| v == t);
    if aligned {
        let faces = corners
            .iter()
            .map(|c| c.map(|(v, _)| v as u32))
            .collect();
        return Ok(ObjMesh {
            vertices: pos,
            uv: tex,
            faces,
        });
    }
    let mut map = std::collections::HashMap::new();
    let mut mesh = ObjMesh {
        vertices: Vec::new(),
        uv: Vec::new(),
        faces: Vec::new(),
    };
    for c in &corners {
        let f = c.map(|key| {
            *map.entry(key).or_insert_with(|| {
                mesh.vertices.push(pos[key.0]);
                mesh.uv.push(tex[key.1]);
                (mesh.vertices.len() - 1) as u32
            })
        });
        mesh.faces.push(f);
    }
    Ok(mesh)
}

pub fn write_obj(path: &Path, mesh: &ObjMesh, mtl_name: Option<&str>) -> Result<()> {
    fs::write(path, obj_text(mesh, mtl_name)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_obj(path: &Path) -> Result<ObjMesh> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_obj(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn is_bundle(dir: &Path) -> bool {
    dir.join(IMAGE_FILE).is_file() && dir.join(MASK_FILE).is_file()
}

/// Bundle subdirectories of `dir`, sorted by name.
pub fn list_bundles(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() && is_bundle(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_bundle(dir: &Path) -> Result<Target> {
    let target = Target {
        image: read_image(&dir.join(IMAGE_FILE))?,
        mask: read_mask(&dir.join(MASK_FILE))?,
        init_pose: read_pose(&dir.join(INIT_POSE_FILE))?,
    };
    target
        .validate()
        .with_context(|| format!("target bundle {}", dir.display()))?;
    Ok(target)
}
