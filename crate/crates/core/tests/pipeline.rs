use meshfit_core::camera::{axis_angle, quat_mul, CameraPose};
use meshfit_core::decoder::{decode, init_decoder, DecoderDims, DecoderWeights};
use meshfit_core::geometry::{apply_deformation, build_sphere_template, chamfer3d, MeshTopology, Vec3};
use meshfit_core::inversion::{invert, Coverage, InversionConfig, Problem, Sampling, Target};
use meshfit_core::render::{rasterize, RenderOutput, TextureMap};
use meshfit_core::tensorcore::{grad_check_piecewise, load_tensors, save_tensors, Tensor};

fn small_dims() -> DecoderDims {
    DecoderDims {
        z_dim: 6,
        hidden: 24,
        grid_h: 10,
        grid_w: 10,
        tex_h: 12,
        tex_w: 12,
        n_basis: 6,
    }
}

fn shape(z: &[f64], w: &DecoderWeights<f64>, topo: &MeshTopology<f64>) -> (Vec<Vec3<f64>>, TextureMap<f64>) {
    let d = decode(z, w).unwrap();
    (apply_deformation(&d.deformation, topo).unwrap(), d.texture)
}

fn render(v: &[Vec3<f64>], tex: &TextureMap<f64>, topo: &MeshTopology<f64>, pose: &CameraPose<f64>) -> RenderOutput<f64> {
    rasterize(v, &topo.faces, &topo.uv, tex, pose, 32, [0.5; 3]).unwrap()
}

fn pose() -> CameraPose<f64> {
    CameraPose {
        scale: 0.6,
        translation: [0.02, -0.01],
        quat: axis_angle([0.3, 1.0, 0.2], 0.7),
    }
}

fn small_config(seed: u64) -> InversionConfig<f64> {
    InversionConfig {
        stage_iters: vec![4, 4, 3, 3],
        resolution: 32,
        n_sample: 200,
        seed,
        ..InversionConfig::default()
    }
}

fn target(w: &DecoderWeights<f64>, topo: &MeshTopology<f64>) -> Target<f64> {
    let z: Vec<f64> = (0..6).map(|i| 0.3 * (i as f64 - 2.5)).collect();
    let (v, tex) = shape(&z, w, topo);
    let r = render(&v, &tex, topo, &pose());
    let nudge = axis_angle([1.0, 0.0, 0.0], 0.05);
    Target {
        image: r.image,
        mask: r.mask,
        init_pose: CameraPose {
            scale: 0.63,
            quat: quat_mul(nudge, pose().quat),
            ..pose()
        },
    }
}

#[test]
fn decoded_shapes_render_inside_the_frame() {
    let w = init_decoder::<f64>(3, &small_dims()).unwrap();
    let topo = build_sphere_template::<f64>(10, 10).unwrap();
    let (v, tex) = shape(&[0.0; 6], &w, &topo);
    let r = render(&v, &tex, &topo, &pose());
    let n = r.mask.count();
    assert!(n > 50 && n < 32 * 32, "foreground {n}");
    // Background pixels keep the background colour; foreground pixels are texture samples.
    for p in 0..32 * 32 {
        let c = r.image.data[p];
        if !r.mask.data[p] {
            assert_eq!(c, [0.5; 3]);
        } else {
            assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}

#[test]
fn symmetric_decoder_output_is_mirror_symmetric() {
    let w = init_decoder::<f64>(5, &small_dims()).unwrap();
    let topo = build_sphere_template::<f64>(10, 10).unwrap();
    let (v, _) = shape(&[0.4, -1.0, 0.2, 0.9, -0.3, 0.0], &w, &topo);
    for i in 0..10 {
        for j in 0..10 {
            let a = v[topo.index(i, j)];
            let b = v[topo.index(i, 9 - j)];
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12 && (a[2] - b[2]).abs() < 1e-12);
        }
    }
}

#[test]
fn decoder_weights_survive_a_file_round_trip() {
    let w = init_decoder::<f64>(9, &small_dims()).unwrap();
    let dir = std::env::temp_dir().join(format!("meshfit-core-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("decoder.miv");
    let tensors = w.to_tensors();
    let named: Vec<(&str, &Tensor<f64>)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    save_tensors(&path, &named).unwrap();
    let back = DecoderWeights::from_tensors(load_tensors::<f64>(&path).unwrap(), &small_dims()).unwrap();
    assert_eq!(w.max_abs_diff(&back), Some(0.0));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let w = init_decoder::<f64>(11, &small_dims()).unwrap();
    let topo = build_sphere_template::<f64>(10, 10).unwrap();
    let t = target(&w, &topo);
    let cfg = small_config(0);
    let problem = Problem::new(&w, &t, &cfg).unwrap();
    let z = [0.2, -0.1, 0.5, 0.0, -0.4, 0.3];
    let e = problem.evaluate(&z, &t.init_pose, Sampling::Exhaustive, Coverage::Live, true).unwrap();
    // Texture gradients treat pixel coverage as fixed.
    let frozen = e.render.clone();
    let mut x0 = z.to_vec();
    x0.extend_from_slice(&t.init_pose.to_params());
    let mut analytic = e.grad_z.clone();
    analytic.extend_from_slice(&e.grad_pose.to_params());
    let f = |x: &[f64]| {
        problem
            .evaluate(&x[..6], &CameraPose::from_params(&x[6..]), Sampling::Exhaustive, Coverage::Frozen(&frozen), false)
            .unwrap()
            .total
    };
    let all: Vec<usize> = (0..x0.len()).collect();
    let r = grad_check_piecewise(f, &x0, &analytic, 1e-6, &all).unwrap();
    assert!(r.max_rel_err < 1e-3, "{r:?}");
}

#[test]
fn inversion_is_reproducible_and_tracks_its_best_iterate() {
    let w = init_decoder::<f64>(13, &small_dims()).unwrap();
    let topo = build_sphere_template::<f64>(10, 10).unwrap();
    let t = target(&w, &topo);
    let cfg = small_config(4);
    let a = invert(&w, &t, &cfg).unwrap();
    let b = invert(&w, &t, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.z, b.z);
    assert_eq!(a.trace.len(), cfg.total_iters());
    // The parameters after the last step are scored too.
    let best = a.trace.iter().map(|r| r.eval_total).fold(f64::INFINITY, f64::min);
    assert!(a.best_total <= best);
    assert!(a.trace.windows(2).all(|p| p[1].best_total <= p[0].best_total));
    // A different seed starts elsewhere.
    let c = invert(&w, &t, &small_config(5)).unwrap();
    assert_ne!(a.trace[0].total, c.trace[0].total);
}

#[test]
fn chamfer3d_is_zero_only_for_matching_shapes() {
    let w = init_decoder::<f64>(17, &small_dims()).unwrap();
    let topo = build_sphere_template::<f64>(10, 10).unwrap();
    let (a, _) = shape(&[0.0; 6], &w, &topo);
    let (b, _) = shape(&[1.5, -1.5, 1.0, -1.0, 0.5, 2.0], &w, &topo);
    assert_eq!(chamfer3d(&a, &a).unwrap(), 0.0);
    let d = chamfer3d(&a, &b).unwrap();
    assert!(d > 0.0);
    assert_eq!(d, chamfer3d(&b, &a).unwrap());
}
