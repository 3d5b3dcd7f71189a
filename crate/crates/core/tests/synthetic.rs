use monopair::camera::FeaturePoint;
use monopair::geometry::{bev_iou, Box3};
use monopair::kitti_io::{emit_predictions, label_to_box3d, parse_predictions, FloatFormat};
use monopair::optimizer::LmConfig;
use monopair::pipeline::refine_predictions;
use monopair::synthetic::{
    corrupt, generate_scene, run_experiment, run_trial, trial_rng, NoiseModel, SceneSpec,
};
use monopair::Error;

fn quiet(spec: SceneSpec) -> SceneSpec {
    SceneSpec {
        sigma_z: 0.0,
        sigma_uv: 0.0,
        sigma_k: 0.0,
        ..spec
    }
}

#[test]
fn same_seed_same_trial() {
    let spec = SceneSpec {
        min_objects: 2,
        max_objects: 6,
        ..SceneSpec::default()
    };
    let lm = LmConfig::default();
    for trial in 0..5 {
        let a = run_trial(&spec, trial, &lm).unwrap();
        let b = run_trial(&spec, trial, &lm).unwrap();
        assert_eq!(a, b);
    }
    let a = generate_scene(&spec, &mut trial_rng(3, 0)).unwrap();
    let b = generate_scene(&spec, &mut trial_rng(4, 0)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_noise_predictions_equal_truth() {
    let spec = quiet(SceneSpec::default());
    for trial in 0..20 {
        let mut rng = trial_rng(11, trial);
        let scene = generate_scene(&spec, &mut rng).unwrap();
        let pred = corrupt(&scene, &spec, &mut rng).unwrap();
        for (truth, p) in scene.objects.iter().zip(&pred.objects) {
            let c = label_to_box3d(&p.label).unwrap().center;
            assert!((c - truth.center).norm() < 1e-9);
            assert_eq!(p.sigma_z, 1e-6);
            assert_eq!(p.sigma_uv, 1e-6);
        }
        for ((_, target), p) in scene.pairs.iter().zip(&pred.pairs) {
            assert_eq!(p.k, target.k.to_array());
            assert_eq!(p.sigma_k, 1e-6);
        }
    }
}

#[test]
fn zero_noise_experiment_reports_zero_error() {
    let spec = quiet(SceneSpec {
        trials: 50,
        ..SceneSpec::default()
    });
    let report = run_experiment(&spec, &LmConfig::default()).unwrap();
    assert!(report.totals.objects > 0);
    assert!(report.totals.mean_depth_before() < 1e-9);
    assert!(report.totals.mean_depth_after() < 1e-9);
    assert!(report.gate_passed());
}

#[test]
fn depth_noise_has_the_configured_std() {
    let spec = SceneSpec {
        sigma_z: 1.0,
        sigma_uv: 0.0,
        sigma_k: 0.0,
        depth_min: 10.0,
        ..SceneSpec::default()
    };
    let mut errors = Vec::new();
    let mut trial = 0;
    while errors.len() < 10_000 {
        let mut rng = trial_rng(21, trial);
        let scene = generate_scene(&spec, &mut rng).unwrap();
        let pred = corrupt(&scene, &spec, &mut rng).unwrap();
        for (truth, p) in scene.objects.iter().zip(&pred.objects) {
            errors.push(p.label.location.z - truth.center.z);
        }
        trial += 1;
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn laplace_noise_has_the_configured_std() {
    let spec = SceneSpec {
        noise: NoiseModel::Laplace,
        sigma_z: 1.0,
        depth_min: 10.0,
        ..SceneSpec::default()
    };
    let mut errors = Vec::new();
    for trial in 0..2500 {
        let mut rng = trial_rng(22, trial);
        let scene = generate_scene(&spec, &mut rng).unwrap();
        let pred = corrupt(&scene, &spec, &mut rng).unwrap();
        errors.extend(
            scene
                .objects
                .iter()
                .zip(&pred.objects)
                .map(|(t, p)| p.label.location.z - t.center.z),
        );
    }
    let n = errors.len() as f64;
    let std = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    assert!((std - 1.0).abs() < 0.05, "std {std}");
}

fn strictly_inside(a: FeaturePoint<f64>, b: FeaturePoint<f64>, p: FeaturePoint<f64>) -> bool {
    // angle apb obtuse <=> p strictly inside the circle with diameter ab
    (a.u - p.u) * (b.u - p.u) + (a.v - p.v) * (b.v - p.v) < 0.0
}

#[test]
fn pairs_follow_the_circle_rule() {
    let spec = SceneSpec {
        min_objects: 2,
        max_objects: 8,
        classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
        ..SceneSpec::default()
    };
    for trial in 0..200 {
        let scene = generate_scene(&spec, &mut trial_rng(5, trial)).unwrap();
        let s = spec.downsample as f64;
        let centers: Vec<_> = scene
            .objects
            .iter()
            .map(|o| {
                let (u, v) = o.bbox.center();
                FeaturePoint::new(u / s, v / s)
            })
            .collect();
        let mut expected = Vec::new();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if scene.objects[i].class != scene.objects[j].class {
                    continue;
                }
                let blocked = (0..centers.len())
                    .filter(|&k| k != i && k != j)
                    .any(|k| strictly_inside(centers[i], centers[j], centers[k]));
                if !blocked {
                    expected.push((i, j));
                }
            }
        }
        let got: Vec<_> = scene.pairs.iter().map(|(p, _)| (p.i, p.j)).collect();
        assert_eq!(got, expected, "trial {trial}");
        for (p, t) in &scene.pairs {
            let (ci, cj) = (scene.objects[p.i].center, scene.objects[p.j].center);
            let direct = monopair::pairing::pair_target(&ci, &cj).unwrap();
            assert_eq!(direct.k, t.k);
        }
    }
}

#[test]
fn footprints_never_overlap() {
    let spec = SceneSpec {
        min_objects: 8,
        max_objects: 8,
        depth_max: 25.0,
        ..SceneSpec::default()
    };
    for trial in 0..100 {
        let scene = generate_scene(&spec, &mut trial_rng(8, trial)).unwrap();
        let boxes: Vec<Box3<f64>> = scene
            .objects
            .iter()
            .map(|o| Box3::new(o.center, o.dims.w, o.dims.h, o.dims.l, o.yaw).unwrap())
            .collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                assert_eq!(bev_iou(&boxes[i], &boxes[j]).unwrap(), 0.0);
            }
        }
    }
}

#[test]
fn crowded_spec_fails_to_generate() {
    let spec = SceneSpec {
        min_objects: 30,
        max_objects: 30,
        depth_min: 10.0,
        depth_max: 12.0,
        lateral_min: -1.0,
        lateral_max: 1.0,
        max_attempts: 50,
        ..SceneSpec::default()
    };
    let err = generate_scene(&spec, &mut trial_rng(0, 0)).unwrap_err();
    assert!(matches!(err, Error::Generation(_)), "{err}");
}

#[test]
fn trial_survives_the_text_round_trip() {
    let spec = SceneSpec::default();
    let lm = LmConfig::default();
    for trial in 0..10 {
        let t = run_trial(&spec, trial, &lm).unwrap();
        let text = emit_predictions(&t.predictions, FloatFormat::Exact);
        let parsed = parse_predictions(&text).unwrap();
        assert_eq!(parsed, t.predictions);
        let replay = refine_predictions(&parsed, &t.scene.camera, &lm, 0.0).unwrap();
        assert_eq!(replay.labels, t.refined);
    }
}
