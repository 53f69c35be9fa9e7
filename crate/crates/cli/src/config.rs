//! Flat `key = value` run configuration with dotted keys.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma separated.
//! Every key has a default, unknown keys are rejected, and `--set key=value`
//! overrides are applied after the file in command-line order.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use meshfit_core::decoder::DecoderDims;
use meshfit_core::losses::EPS_S_SWEEP;
use meshfit_core::InversionConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("`--set` expects key=value, got `{0}`")]
    Override(String),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Camera given on the command line or in a config value.
#[derive(Debug, Clone, PartialEq)]
pub enum PoseSpec {
    Identity,
    /// `s, tx, ty, qw, qx, qy, qz`
    Params([f64; 7]),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSource {
    /// MIV1 weight file; when unset the weights come from `seed`.
    pub path: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputConfig {
    /// Target bundle (`image.png`, `mask.png`, `init_pose.json`) or a directory of bundles.
    pub dir: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub pose: Option<PoseSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub scale: f64,
    /// Half-width of the uniform range of the true translation.
    pub translation_range: f64,
    pub perturb_deg: f64,
    pub perturb_scale: f64,
    pub perturb_translation: f64,
    pub min_coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    pub shapes: usize,
    pub eta_min_exp: i32,
    pub eta_max_exp: i32,
    pub per_decade: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsSweepConfig {
    pub values: Vec<f64>,
    pub targets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub resolution: usize,
    pub background: [f64; 3],
    pub mesh: Option<PathBuf>,
    pub texture: Option<PathBuf>,
    pub pose: PoseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub configs: usize,
    pub step: f64,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub surface_samples: usize,
    pub inversion: InversionConfig,
    pub decoder: DecoderSource,
    pub dims: DecoderDims,
    pub input: InputConfig,
    pub synthetic: SyntheticConfig,
    pub sensitivity: SensitivityConfig,
    pub eps_sweep: EpsSweepConfig,
    pub render: RenderConfig,
    pub grad_check: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let inversion = InversionConfig::default();
        Self {
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
            surface_samples: 4096,
            decoder: DecoderSource { path: None, seed: 0 },
            dims: DecoderDims::default(),
            input: InputConfig {
                dir: None,
                image: None,
                mask: None,
                pose: None,
            },
            synthetic: SyntheticConfig {
                count: 1,
                scale: 0.6,
                translation_range: 0.05,
                perturb_deg: 5.0,
                perturb_scale: 0.05,
                perturb_translation: 0.02,
                min_coverage: 0.05,
            },
            sensitivity: SensitivityConfig {
                shapes: 100,
                eta_min_exp: -6,
                eta_max_exp: -1,
                per_decade: 3,
            },
            eps_sweep: EpsSweepConfig {
                values: EPS_S_SWEEP.to_vec(),
                targets: 10,
            },
            render: RenderConfig {
                resolution: inversion.resolution,
                background: inversion.background,
                mesh: None,
                texture: None,
                pose: PoseSpec::Identity,
            },
            grad_check: GradCheckConfig {
                configs: 10,
                step: 1e-6,
                resolution: 32,
            },
            inversion,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    v.trim().parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        msg: format!("`{v}`: {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x)).collect()
}

fn parse_array<const N: usize>(key: &str, v: &str) -> Result<[f64; N], ConfigError> {
    let xs: Vec<f64> = parse_list(key, v)?;
    xs.try_into().map_err(|xs: Vec<f64>| ConfigError::Value {
        key: key.into(),
        msg: format!("expected {N} numbers, got {}", xs.len()),
    })
}

fn parse_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn parse_pose(key: &str, v: &str) -> Result<PoseSpec, ConfigError> {
    let v = v.trim();
    if v == "identity" {
        return Ok(PoseSpec::Identity);
    }
    if v.contains(',') {
        return Ok(PoseSpec::Params(parse_array::<7>(key, v)?));
    }
    if v.is_empty() {
        return Err(ConfigError::Value {
            key: key.into(),
            msg: "empty pose".into(),
        });
    }
    Ok(PoseSpec::File(PathBuf::from(v)))
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Display for PoseSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoseSpec::Identity => write!(f, "identity"),
            PoseSpec::Params(p) => write!(f, "{}", join(p)),
            PoseSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) over the defaults, then applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.display().to_string(),
                source,
            })?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.into(),
                line: i + 1,
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let inv = &mut self.inversion;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "eval.surface_samples" => self.surface_samples = parse(key, v)?,

            "inversion.stage_lr_z" => inv.stage_lr_z = parse_list(key, v)?,
            "inversion.stage_lr_cam" => inv.stage_lr_cam = parse_list(key, v)?,
            "inversion.stage_iters" => inv.stage_iters = parse_list(key, v)?,
            "inversion.n_sample" => inv.n_sample = parse(key, v)?,
            "inversion.reset_moments" => inv.reset_moments = parse(key, v)?,
            "inversion.resample" => inv.resample = parse(key, v)?,
            "adam.beta1" => inv.adam.beta1 = parse(key, v)?,
            "adam.beta2" => inv.adam.beta2 = parse(key, v)?,
            "adam.eps" => inv.adam.eps = parse(key, v)?,
            "weights.pct" => inv.weights.w_pct = parse(key, v)?,
            "weights.fct" => inv.weights.w_fct = parse(key, v)?,
            "weights.cm" => inv.weights.w_cm = parse(key, v)?,
            "weights.smooth" => inv.weights.w_smooth = parse(key, v)?,
            "weights.z" => inv.weights.w_z = parse(key, v)?,
            "tex.eps_s" => inv.tex_params.eps_s = parse(key, v)?,
            "tex.eps_a" => inv.tex_params.eps_a = parse(key, v)?,
            "tex.alpha" => inv.tex_params.alpha = parse(key, v)?,

            "decoder.path" => self.decoder.path = parse_path(v),
            "decoder.seed" => self.decoder.seed = parse(key, v)?,
            "decoder.z_dim" => self.dims.z_dim = parse(key, v)?,
            "decoder.hidden" => self.dims.hidden = parse(key, v)?,
            "decoder.grid_h" => self.dims.grid_h = parse(key, v)?,
            "decoder.grid_w" => self.dims.grid_w = parse(key, v)?,
            "decoder.tex_h" => self.dims.tex_h = parse(key, v)?,
            "decoder.tex_w" => self.dims.tex_w = parse(key, v)?,
            "decoder.n_basis" => self.dims.n_basis = parse(key, v)?,

            "input.dir" => self.input.dir = parse_path(v),
            "input.image" => self.input.image = parse_path(v),
            "input.mask" => self.input.mask = parse_path(v),
            "input.pose" => self.input.pose = if v.is_empty() { None } else { Some(parse_pose(key, v)?) },

            "synthetic.count" => self.synthetic.count = parse(key, v)?,
            "synthetic.scale" => self.synthetic.scale = parse(key, v)?,
            "synthetic.translation_range" => self.synthetic.translation_range = parse(key, v)?,
            "synthetic.perturb_deg" => self.synthetic.perturb_deg = parse(key, v)?,
            "synthetic.perturb_scale" => self.synthetic.perturb_scale = parse(key, v)?,
            "synthetic.perturb_translation" => self.synthetic.perturb_translation = parse(key, v)?,
            "synthetic.min_coverage" => self.synthetic.min_coverage = parse(key, v)?,

            "sensitivity.shapes" => self.sensitivity.shapes = parse(key, v)?,
            "sensitivity.eta_min_exp" => self.sensitivity.eta_min_exp = parse(key, v)?,
            "sensitivity.eta_max_exp" => self.sensitivity.eta_max_exp = parse(key, v)?,
            "sensitivity.per_decade" => self.sensitivity.per_decade = parse(key, v)?,

            "eps_sweep.values" => self.eps_sweep.values = parse_list(key, v)?,
            "eps_sweep.targets" => self.eps_sweep.targets = parse(key, v)?,

            "render.resolution" => self.render.resolution = parse(key, v)?,
            "render.background" => self.render.background = parse_array::<3>(key, v)?,
            "render.mesh" => self.render.mesh = parse_path(v),
            "render.texture" => self.render.texture = parse_path(v),
            "render.pose" => self.render.pose = parse_pose(key, v)?,

            "grad_check.configs" => self.grad_check.configs = parse(key, v)?,
            "grad_check.step" => self.grad_check.step = parse(key, v)?,
            "grad_check.resolution" => self.grad_check.resolution = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Every key with its current value, in documentation order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let inv = &self.inversion;
        vec![
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("out", self.out.display().to_string()),
            ("eval.surface_samples", self.surface_samples.to_string()),
            ("inversion.stage_lr_z", join(&inv.stage_lr_z)),
            ("inversion.stage_lr_cam", join(&inv.stage_lr_cam)),
            ("inversion.stage_iters", join(&inv.stage_iters)),
            ("inversion.n_sample", inv.n_sample.to_string()),
            ("inversion.reset_moments", inv.reset_moments.to_string()),
            ("inversion.resample", inv.resample.to_string()),
            ("adam.beta1", inv.adam.beta1.to_string()),
            ("adam.beta2", inv.adam.beta2.to_string()),
            ("adam.eps", inv.adam.eps.to_string()),
            ("weights.pct", inv.weights.w_pct.to_string()),
            ("weights.fct", inv.weights.w_fct.to_string()),
            ("weights.cm", inv.weights.w_cm.to_string()),
            ("weights.smooth", inv.weights.w_smooth.to_string()),
            ("weights.z", inv.weights.w_z.to_string()),
            ("tex.eps_s", inv.tex_params.eps_s.to_string()),
            ("tex.eps_a", inv.tex_params.eps_a.to_string()),
            ("tex.alpha", inv.tex_params.alpha.to_string()),
            ("decoder.path", path_str(&self.decoder.path)),
            ("decoder.seed", self.decoder.seed.to_string()),
            ("decoder.z_dim", self.dims.z_dim.to_string()),
            ("decoder.hidden", self.dims.hidden.to_string()),
            ("decoder.grid_h", self.dims.grid_h.to_string()),
            ("decoder.grid_w", self.dims.grid_w.to_string()),
            ("decoder.tex_h", self.dims.tex_h.to_string()),
            ("decoder.tex_w", self.dims.tex_w.to_string()),
            ("decoder.n_basis", self.dims.n_basis.to_string()),
            ("input.dir", path_str(&self.input.dir)),
            ("input.image", path_str(&self.input.image)),
            ("input.mask", path_str(&self.input.mask)),
            (
                "input.pose",
                self.input.pose.as_ref().map(|p| p.to_string()).unwrap_or_default(),
            ),
            ("synthetic.count", self.synthetic.count.to_string()),
            ("synthetic.scale", self.synthetic.scale.to_string()),
            ("synthetic.translation_range", self.synthetic.translation_range.to_string()),
            ("synthetic.perturb_deg", self.synthetic.perturb_deg.to_string()),
            ("synthetic.perturb_scale", self.synthetic.perturb_scale.to_string()),
            ("synthetic.perturb_translation", self.synthetic.perturb_translation.to_string()),
            ("synthetic.min_coverage", self.synthetic.min_coverage.to_string()),
            ("sensitivity.shapes", self.sensitivity.shapes.to_string()),
            ("sensitivity.eta_min_exp", self.sensitivity.eta_min_exp.to_string()),
            ("sensitivity.eta_max_exp", self.sensitivity.eta_max_exp.to_string()),
            ("sensitivity.per_decade", self.sensitivity.per_decade.to_string()),
            ("eps_sweep.values", join(&self.eps_sweep.values)),
            ("eps_sweep.targets", self.eps_sweep.targets.to_string()),
            ("render.resolution", self.render.resolution.to_string()),
            ("render.background", join(&self.render.background)),
            ("render.mesh", path_str(&self.render.mesh)),
            ("render.texture", path_str(&self.render.texture)),
            ("render.pose", self.render.pose.to_string()),
            ("grad_check.configs", self.grad_check.configs.to_string()),
            ("grad_check.step", self.grad_check.step.to_string()),
            ("grad_check.resolution", self.grad_check.resolution.to_string()),
        ]
    }

    /// The configuration in the same format `load` reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Inversion settings with the run seed, render resolution and background folded in.
    pub fn inversion(&self) -> InversionConfig {
        InversionConfig {
            seed: self.seed,
            resolution: self.render.resolution,
            background: self.render.background,
            ..self.inversion.clone()
        }
    }

    /// Checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1".into()));
        }
        self.inversion().validate().map_err(|e| invalid(e.to_string()))?;
        self.dims.validate().map_err(|e| invalid(e.to_string()))?;
        if self.surface_samples == 0 {
            return Err(invalid("eval.surface_samples must be positive".into()));
        }
        if !self.render.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(invalid("render.background must lie in [0, 1]".into()));
        }
        if let Some(p) = &self.decoder.path {
            require_exists("decoder.path", p)?;
        }
        Ok(())
    }
}

pub fn require_exists(key: &str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(ConfigError::Value {
            key: key.into(),
            msg: format!("{} does not exist", p.display()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("weights.cm", "3.5").unwrap();
        cfg.set("render.pose", "1,0,0,1,0,0,0").unwrap();
        cfg.set("input.dir", "targets").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("weights.nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("seed", "abc"), Err(ConfigError::Value { .. })));
        assert!(matches!(
            cfg.apply_text("seed 3", "mem"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::load(None, &["seed".into()]),
            Err(ConfigError::Override(_))
        ));
        assert!(matches!(
            cfg.set("render.background", "0.1,0.2"),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\nseed = 4\ntex.eps_s = 0.95  # inline\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["seed=9".into()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.inversion.tex_params.eps_s, 0.95);
        assert_eq!(cfg.inversion().seed, 9);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.set("inversion.stage_iters", "50,50").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = RunConfig::default();
        cfg.set("decoder.path", "/definitely/not/here.miv1").unwrap();
        assert!(cfg.validate().is_err());
    }
}
