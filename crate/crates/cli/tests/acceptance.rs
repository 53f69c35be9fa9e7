//! One line per acceptance criterion, printed straight to stderr so it shows
//! up without `--nocapture`.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{ok, run, snapshot, write_config};
use latent_meshfit::model::Model;
use latent_meshfit::{gradsuite, sensitivity, suite, RunConfig};
use meshfit_core::geometry::{Smoothness, Vec3};
use meshfit_core::inversion::initial_latent;
use meshfit_core::losses::{chamfer_mask_loss, chamfer_set_distance, l1_image_loss, pixel_chamfer_texture_loss};
use meshfit_core::render::{ColoredPointSet, Image, Mask};
use meshfit_core::tensorcore::Rng;
use meshfit_core::ChamferTexParams;

struct Verdict {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, elapsed: Duration, v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} [{tag}] {name} ({:.1}s): {}", elapsed.as_secs_f64(), v.detail);
    writeln!(std::io::stderr().lock(), "{line}").unwrap();
}

fn gradient_suite() -> Verdict {
    let cfg = RunConfig::default();
    let model = Model::from_config(&cfg).unwrap();
    let t = Instant::now();
    let rows = gradsuite::run_suite(&model, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let configs: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.config).collect();
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}#{}={:.2e}", r.check, r.config, r.max_rel_err))
        .collect();
    let worst = |tol: f64| rows.iter().filter(|r| r.tolerance == tol).map(|r| r.max_rel_err).fold(0.0, f64::max);
    Verdict {
        pass: failed.is_empty() && configs.len() == 10 && rows.len() == 70 && secs < 120.0,
        detail: format!(
            "{} checks over {} configs, worst rel err {:.2e} (tol 1e-4), composed {:.2e} (tol 1e-3), {secs:.1}s, failed {:?}",
            rows.len(),
            configs.len(),
            worst(gradsuite::TOL),
            worst(gradsuite::TOL_COMPOSED),
            failed
        ),
    }
}

fn closed_form() -> Verdict {
    let p = ChamferTexParams::default();
    let mut rng = Rng::new(17);
    let pos: Vec<[f64; 2]> = (0..500).map(|_| [rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0]).collect();
    let attrs: Vec<f64> = (0..1500).map(|_| rng.uniform()).collect();
    let a = ColoredPointSet::new(pos.clone(), attrs, 3).unwrap();
    let self_dist = chamfer_set_distance(&a, &a, &p).unwrap();

    let mask_self = chamfer_mask_loss(&pos, &pos).unwrap();

    // 5x5 planar grid, two triangles per cell.
    let n = 5;
    let verts: Vec<Vec3<f64>> = (0..n * n).map(|i| [(i % n) as f64 * 0.3, (i / n) as f64 * 0.2, 0.7]).collect();
    let mut faces = Vec::new();
    for r in 0..n - 1 {
        for c in 0..n - 1 {
            let i = (r * n + c) as u32;
            let w = n as u32;
            faces.push([i, i + 1, i + w + 1]);
            faces.push([i, i + w + 1, i + w]);
        }
    }
    let flat = Smoothness::new(&faces).unwrap().value(&verts).unwrap();

    let one = |xy: [f64; 2], rgb: [f64; 3]| ColoredPointSet::new(vec![xy], rgb.to_vec(), 3).unwrap();
    let red = one([0.0, 0.0], [1.0, 0.0, 0.0]);
    let near = chamfer_set_distance(&red, &one([0.05, 0.0], [0.0; 3]), &p).unwrap();
    let far = chamfer_set_distance(&red, &one([0.3, 0.0], [0.0; 3]), &p).unwrap();

    Verdict {
        pass: self_dist == p.eps_a
            && mask_self == 0.0
            && flat == 0.0
            && (near - 2.0).abs() < 1e-12
            && (far - 2.4).abs() < 1e-12,
        detail: format!("D(A,A)={self_dist}, L_CM(S,S)={mask_self}, flat smooth={flat}, pair values {near} and {far}"),
    }
}

fn sensitivity_check() -> Verdict {
    let cfg = RunConfig::default();
    assert_eq!(cfg.render.resolution, 128);
    let model = Model::from_config(&cfg).unwrap();
    let t = Instant::now();
    let rows = sensitivity::run(&model, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let summary = sensitivity::summarize(&rows, &cfg);
    let span = sensitivity::cd3d_span_decades(&rows);
    let zero_rows_exact = rows
        .iter()
        .filter(|r| r.eta == 0.0)
        .all(|r| r.cd3d == 0.0 && r.losses.iter().all(|&l| l == 0.0));

    // Decades whose cd3d range touches [1e-6, 1e-2].
    let relevant = |d: &sensitivity::DecadeSlope| d.cd3d_hi >= 1e-6 && d.cd3d_lo <= 1e-2;
    let cm: Vec<&sensitivity::DecadeSlope> = summary.iter().filter(|d| d.loss == "l_cm" && relevant(d)).collect();
    let cm_ok = !cm.is_empty() && cm.iter().all(|d| (0.9..=1.1).contains(&d.mean_slope));
    let flat_region = |loss: &str| {
        summary
            .iter()
            .filter(|d| d.loss == loss && d.cd3d_hi > 0.0)
            .any(|d| d.mean_slope < 0.5 || d.zero_fraction >= 0.2)
    };
    let slopes: Vec<String> = cm.iter().map(|d| format!("{:.4}", d.mean_slope)).collect();
    let (iou_ok, l1_ok) = (flat_region("l_iou"), flat_region("l_l1"));
    Verdict {
        pass: cm_ok && iou_ok && l1_ok && zero_rows_exact && span >= 3.0 && secs < 600.0,
        detail: format!(
            "{} rows, L_CM slopes per decade {:?}, IoU flat region {iou_ok}, L1 flat region {l1_ok}, cd3d span {span:.1} decades, eta=0 rows exact {zero_rows_exact}, {secs:.1}s",
            rows.len(),
            slopes
        ),
    }
}

fn checkerboard(size: usize, cell: usize, shift: usize, noise: f64, seed: u64) -> Image<f64> {
    let mut rng = Rng::new(seed);
    let data = (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, (i % size + size - shift) % size);
            let v = if (r / cell + c / cell) % 2 == 0 { 0.9 } else { 0.1 };
            let mut px = [v; 3];
            for ch in &mut px {
                *ch = (*ch + noise * (2.0 * rng.uniform() - 1.0)).clamp(0.0, 1.0);
            }
            px
        })
        .collect();
    Image::new(size, size, data).unwrap()
}

fn misalignment() -> Verdict {
    let size = 64;
    let mask = Mask::new(size, size, vec![true; size * size]).unwrap();
    let p = ChamferTexParams::default();
    let a = checkerboard(size, 8, 0, 0.0, 0);
    // The reference is an aligned copy with faint pixel noise, so neither loss starts at its floor.
    let aligned = checkerboard(size, 8, 0, 0.02, 1);
    let shifted = checkerboard(size, 8, 4, 0.02, 1);
    let pct = |b: &Image<f64>| {
        pixel_chamfer_texture_loss((&a, &mask), (b, &mask), 8096, &p, &mut Rng::new(5)).unwrap()
    };
    let (pct0, pct1) = (pct(&aligned), pct(&shifted));
    let l1_0: f64 = l1_image_loss(&a, &aligned).unwrap();
    let l1_1: f64 = l1_image_loss(&a, &shifted).unwrap();
    let change = (pct1 - pct0).abs() / pct0;
    let ratio = l1_1 / l1_0;
    Verdict {
        pass: change < 0.05 && ratio > 5.0,
        detail: format!(
            "L_pCT {pct0:.5} -> {pct1:.5} ({:.2}% change), L1 {l1_0:.5} -> {l1_1:.5} ({ratio:.1}x)",
            100.0 * change
        ),
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn synthetic_end_to_end() -> Verdict {
    let mut cfg = RunConfig::default();
    cfg.synthetic.count = 10;
    assert_eq!(cfg.inversion.stage_iters.iter().sum::<usize>(), 200);
    let model = Model::from_config(&cfg).unwrap();
    let t = Instant::now();
    let targets = suite::make_targets(&model, &cfg, 10).unwrap();
    let tuned = suite::run_suite(&model, &cfg, &targets).unwrap();
    let mut fixed_cfg = cfg.clone();
    fixed_cfg.inversion.stage_lr_cam = vec![0.0; fixed_cfg.inversion.stage_lr_cam.len()];
    let fixed = suite::run_suite(&model, &fixed_cfg, &targets).unwrap();
    let secs = t.elapsed().as_secs_f64();

    // The starting shape of each run, as a reference point for the counts.
    let baseline: Vec<f64> = targets
        .iter()
        .map(|t| {
            let seed = cfg.seed + t.info.index as u64;
            let start = model.shape(&initial_latent(seed, model.dims().z_dim)).unwrap();
            let samples = model.surface_samples(&t.truth.vertices, cfg.surface_samples, seed).unwrap();
            model.chamfer3d(&samples, &t.truth.vertices, &start.vertices).unwrap()
        })
        .collect();
    let recovered = tuned.iter().filter(|r| r.chamfer3d < 0.05 && r.texture_mae < 0.1).count();
    let cd = |rs: &[suite::SuiteRun]| rs.iter().map(|r| r.chamfer3d).collect::<Vec<_>>();
    let (m_tuned, m_fixed) = (median(&cd(&tuned)), median(&cd(&fixed)));
    let per_seed: Vec<String> = tuned
        .iter()
        .zip(&fixed)
        .map(|(a, b)| format!("{:.3}/{:.3}/{:.3}", a.chamfer3d, a.texture_mae, b.chamfer3d))
        .collect();
    let lucky = baseline.iter().filter(|&&c| c < 0.05).count();
    Verdict {
        pass: recovered >= 8 && m_fixed >= m_tuned && secs < 900.0,
        detail: format!(
            "recovered {recovered}/10 (initial latent alone {}/10), median cd3d fine-tuned {m_tuned:.4} vs fixed camera {m_fixed:.4}, {secs:.1}s; per seed cd3d/mae/fixed-cd3d {per_seed:?}",
            lucky
        ),
    }
}

fn determinism() -> Verdict {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path());
    let syn = t.path().join("syn");
    ok(&run("make-synthetic", Some(&cfg), &syn, &["--set", "synthetic.count=2"]));
    let one = syn.join("target_000");
    let dir = format!("input.dir={}", one.display());
    let batch = format!("input.dir={}", syn.display());

    let first = t.path().join("first");
    ok(&run("invert", Some(&cfg), &first, &["--set", &dir]));
    let render_args = [
        format!("render.mesh={}", first.join("mesh.obj").display()),
        format!("render.texture={}", first.join("texture.png").display()),
        format!("render.pose={}", first.join("pose.json").display()),
    ];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("make-synthetic", vec!["--set", "synthetic.count=2"]),
        ("invert", vec!["--set", &dir]),
        ("invert", vec!["--set", &batch]),
        ("sensitivity", vec![]),
        ("eps-sweep", vec![]),
        ("render", vec!["--set", &render_args[0], "--set", &render_args[1], "--set", &render_args[2]]),
        ("grad-check", vec![]),
    ];
    let mut differing = Vec::new();
    let mut files = 0;
    for (k, (cmd, args)) in commands.iter().enumerate() {
        let mut a = args.clone();
        a.extend(["--workers", "1", "--seed", "7"]);
        let x = t.path().join(format!("{k}_a"));
        let y = t.path().join(format!("{k}_b"));
        ok(&run(cmd, Some(&cfg), &x, &a));
        ok(&run(cmd, Some(&cfg), &y, &a));
        let (sx, sy) = (snapshot(&x), snapshot(&y));
        files += sx.len();
        if sx != sy || sx.is_empty() {
            differing.push(format!("{cmd}#{k}"));
        }
    }
    Verdict {
        pass: differing.is_empty(),
        detail: format!("{} command runs repeated, {files} files compared, differing {differing:?}", commands.len()),
    }
}

const DEFAULT_SNAPSHOT: &str = "\
inversion.stage_lr_z = 0.1,0.05,0.01,0.005
inversion.stage_lr_cam = 0.01,0.005,0.001,0.0005
inversion.stage_iters = 50,50,50,50
inversion.n_sample = 8096
adam.beta1 = 0
adam.beta2 = 0.99
weights.pct = 1
weights.fct = 0.05
weights.cm = 10
weights.smooth = 0.00005
weights.z = 0.05
tex.eps_s = 0.9
tex.eps_a = 1
tex.alpha = 1
";

fn default_config() -> Verdict {
    let cfg = RunConfig::default();
    let text = cfg.to_text();
    let missing: Vec<&str> = DEFAULT_SNAPSHOT.lines().filter(|l| !text.lines().any(|t| t == *l)).collect();
    let inv = cfg.inversion();
    let w = inv.weights;
    let p = inv.tex_params;
    let values_ok = inv.stage_lr_z == [1e-1, 5e-2, 1e-2, 5e-3]
        && inv.stage_lr_cam == [1e-2, 5e-3, 1e-3, 5e-4]
        && inv.stage_iters == [50, 50, 50, 50]
        && (w.w_pct, w.w_fct, w.w_cm, w.w_smooth, w.w_z) == (1.0, 0.05, 10.0, 0.00005, 0.05)
        && (p.eps_s, p.eps_a, p.alpha) == (0.9, 1.0, 1.0)
        && (inv.adam.beta1, inv.adam.beta2) == (0.0, 0.99)
        && inv.n_sample == 8096;
    Verdict {
        pass: missing.is_empty() && values_ok,
        detail: format!("snapshot lines missing {missing:?}, typed values match {values_ok}"),
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("gradient suite", gradient_suite),
        ("closed-form identities", closed_form),
        ("mask-loss sensitivity at 128px", sensitivity_check),
        ("checkerboard misalignment", misalignment),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("CLI determinism at one worker", determinism),
        ("default configuration", default_config),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = f();
        report(i + 1, name, t.elapsed(), &v);
        if !v.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
