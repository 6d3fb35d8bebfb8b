//! End-to-end runs on small synthetic scenes.

use garment_refit::contact::FitLabel;
use garment_refit::hierarchy::{run_coarse_to_fine, run_multilayer};
use garment_refit::io;
use garment_refit::scene::{RefitConfig, Resolution};
use garment_refit::synth::{generate, SynthSpec};

fn quick(resolution: Resolution, iterations: usize) -> RefitConfig {
    let mut c = RefitConfig {
        resolution,
        deterministic: true,
        ..RefitConfig::default()
    };
    c.single.iterations = iterations;
    c.coarse.iterations = iterations;
    c.fine.iterations = iterations / 2;
    c
}

#[test]
fn single_resolution_run_descends_and_logs() {
    let scene = generate(&SynthSpec::small(1)).unwrap();
    let config = quick(Resolution::Single, 2000);
    let r = run_coarse_to_fine(&scene, &config).unwrap();
    assert_eq!(r.trace.len(), 2000 / config.single.log_every + 1);
    let first = r.trace.first().unwrap().report.total;
    let last = r.trace.last().unwrap().report.total;
    assert!(last < first, "{last} !< {first}");
    assert_eq!(r.trace.last().unwrap().report, r.final_report);
    assert!(r.trace.iter().all(|t| t.wall_time == 0.0));
    assert!(r.max_weight_residual < 0.1);
    assert!(r.max_weight_sum_error <= 1e-9);
}

#[test]
fn refit_keeps_connectivity_and_uvs() {
    let scene = generate(&SynthSpec::small(2)).unwrap();
    let r = run_coarse_to_fine(&scene, &quick(Resolution::CoarseToFine, 200)).unwrap();
    let src = &scene.garments[0].mesh;
    assert_eq!(r.mesh.faces, src.faces);
    assert_eq!(r.mesh.uvs, src.uvs);
    assert_eq!(r.initial_positions.len(), src.vertex_count());
    for w in &r.weights {
        let s: f64 = w.iter().map(|e| e.1).sum();
        assert!((s - 1.0).abs() <= 1e-9);
    }
    assert_eq!(r.trace.iter().filter(|t| t.stage == "coarse").count(), 200 / 100 + 1);
    assert_eq!(r.trace.iter().filter(|t| t.stage == "fine").count(), 100 / 100 + 1);
}

#[test]
fn saved_results_match_the_run() {
    let scene = generate(&SynthSpec::small(3)).unwrap();
    let r = run_coarse_to_fine(&scene, &quick(Resolution::Single, 300)).unwrap();
    let dir = std::env::temp_dir().join(format!("garment-refit-pipeline-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let report = io::save_results(&dir, std::slice::from_ref(&r), &scene.target_skeleton).unwrap();
    let g = &report.garments[0];
    let mesh = io::read_obj(&dir.join(&g.mesh)).unwrap();
    assert_eq!(mesh.face_count(), scene.garments[0].mesh.face_count());
    for (a, b) in mesh.vertices.iter().zip(&r.mesh.vertices) {
        assert!((a - b).norm() < 1e-6);
    }
    let trace = io::read_trace(&dir.join(&g.trace)).unwrap();
    assert_eq!(trace.len(), r.trace.len());
    assert_eq!(trace.last().unwrap().report.total, g.final_report.total);
    let weights = io::read_weights(&dir.join(&g.weights), &scene.target_skeleton).unwrap();
    assert_eq!(weights.len(), mesh.vertex_count());
    let loaded: io::RunReport = io::read_json(&dir.join(io::REPORT_FILE)).unwrap();
    assert_eq!(loaded, report);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn layers_collide_with_everything_inside_them() {
    let mut spec = SynthSpec::small(4);
    spec.two_layers = true;
    let scene = generate(&spec).unwrap();
    assert_eq!(scene.garments.len(), 2);
    assert!(scene.garments[1].connected);
    let results = run_multilayer(&scene, &quick(Resolution::Single, 100)).unwrap();
    assert_eq!(results[0].collision_faces, scene.target_avatar.face_count());
    assert_eq!(
        results[1].collision_faces,
        scene.target_avatar.face_count() + scene.garments[0].mesh.face_count()
    );
    assert!(results[0].connections.is_empty());
    assert!(!results[1].connections.is_empty());
    let (outer, inner) = (&scene.garments[1].mesh.vertices, &scene.garments[0].mesh.vertices);
    for p in &results[1].connections {
        assert_eq!(p.rest_length, (outer[p.outer] - inner[p.inner]).norm());
    }
}

#[test]
fn per_layer_fit_region_overrides_config() {
    let mut scene = generate(&SynthSpec::small(5)).unwrap();
    scene.garments[0].fit_region = Some(FitLabel::All);
    let r = run_coarse_to_fine(&scene, &quick(Resolution::Single, 10)).unwrap();
    assert_eq!(r.fit_region, FitLabel::All);
    assert_eq!(r.region.len(), scene.garments[0].mesh.vertex_count());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let scene = generate(&SynthSpec::small(6)).unwrap();
    let mut c = quick(Resolution::Single, 10);
    c.single.log_every = 0;
    assert!(run_coarse_to_fine(&scene, &c).is_err());
    let mut c = quick(Resolution::Single, 10);
    c.connect_factor = -1.0;
    assert!(run_coarse_to_fine(&scene, &c).is_err());
}
