#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_latent-meshfit");

/// Small model and budgets so every command finishes in seconds.
pub const SMALL: &str = "\
decoder.z_dim = 8
decoder.hidden = 32
decoder.grid_h = 12
decoder.grid_w = 12
decoder.tex_h = 16
decoder.tex_w = 16
decoder.n_basis = 8
render.resolution = 32
inversion.stage_iters = 3,3,3,3
inversion.n_sample = 256
eval.surface_samples = 256
sensitivity.shapes = 2
sensitivity.eta_min_exp = -4
sensitivity.eta_max_exp = -1
sensitivity.per_decade = 1
eps_sweep.values = 0.99,0.9
eps_sweep.targets = 2
grad_check.configs = 1
grad_check.resolution = 16
";

pub fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.cfg");
    std::fs::write(&p, SMALL).unwrap();
    p
}

pub fn run(cmd: &str, config: Option<&Path>, out: &Path, extra: &[&str]) -> Output {
    let mut c = Command::new(BIN);
    c.arg(cmd).arg("--out").arg(out);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    for e in extra {
        c.arg(e);
    }
    c.output().expect("binary runs")
}

pub fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Every file under `dir`, relative path to contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let mut bytes = std::fs::read(&p).unwrap();
                if rel == "config.txt" {
                    // The output directory is the one line allowed to differ.
                    let text = String::from_utf8(bytes).unwrap();
                    bytes = text.lines().filter(|l| !l.starts_with("out = ")).collect::<Vec<_>>().join("\n").into_bytes();
                }
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    out
}
