//! Acceptance criteria, one pass/fail line each. Runs as a plain binary so
//! the expensive pipeline runs can be shared between criteria.

mod common;

use std::time::{Duration, Instant};

use common::*;
use garment_refit::bone_local::encode_garment;
use garment_refit::contact::{bone_guided_distances, penetration_stats, CollisionBody, PenetrationStats, DEFAULT_KNN};
use garment_refit::geometry::differential::DifferentialCache;
use garment_refit::geometry::{Mesh, Vec3};
use garment_refit::hierarchy::{bench_conditioning, run_coarse_to_fine, run_multilayer, GarmentResult};
use garment_refit::init::{inherit_weights, transfer};
use garment_refit::io::write_obj;
use garment_refit::losses::l_lap;
use garment_refit::scene::{GarmentLayer, RefitConfig, Resolution, Scene};
use garment_refit::skeleton::Skeleton;
use garment_refit::synth::{generate, SynthSpec, TargetVariation};
use rand::RngExt;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn run(&mut self, id: &str, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut o = f();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                o.passed = false;
                o.detail.push_str(&format!("; exceeded {:.0}s budget", limit.as_secs_f64()));
            }
        }
        if !o.passed {
            self.failures += 1;
        }
        println!(
            "{} {id:<4} {title}: {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
}

fn config() -> RefitConfig {
    RefitConfig {
        deterministic: true,
        ..RefitConfig::default()
    }
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

fn transformed(skeleton: &Skeleton, f: impl Fn(Vec3) -> Vec3, linear: impl Fn(Vec3) -> Vec3) -> Skeleton {
    let mut s = skeleton.map_points(f);
    s.crotch_reference = linear(skeleton.crotch_reference);
    s
}

fn height(mesh: &Mesh) -> f64 {
    let (lo, hi) = mesh
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
    hi - lo
}

fn penetration(positions: &[Vec3], body: &CollisionBody, eps: f64) -> (PenetrationStats, bool, String) {
    let s = penetration_stats(positions, body, eps, DEFAULT_KNN);
    let (a, b) = (s.fraction_below_epsilon(), s.fraction_below_three_epsilon());
    let detail = format!(
        "below -eps {:.3}% (<= 1%), below -3eps {:.3}% (<= 0.1%), eps {eps:.4}, min d {:.4}",
        100.0 * a,
        100.0 * b,
        s.min_distance
    );
    (s, a <= 0.01 && b <= 0.001, detail)
}

fn c1() -> Outcome {
    let mut r = rng(1);
    let frames: Vec<_> = (0..20).map(|_| random_frame(&mut r)).collect();
    let points = random_points(1000, 5.0, &mut r);
    let mut worst = 0.0f64;
    for f in &frames {
        for g in &points {
            let back = f.reconstruct(&f.map(g));
            worst = worst.max((back - g).norm() / g.norm().max(f64::MIN_POSITIVE));
        }
    }
    outcome(worst < 1e-9, format!("max relative error {worst:.2e} over 20 frames x 1000 points"))
}

fn c2(scene: &Scene) -> Outcome {
    let mut r = rng(2);
    let garment = &scene.garments[0].mesh;
    let frames = scene.source_skeleton.frames().unwrap();
    let weights = inherit_weights(&garment.vertices, &scene.source_avatar, &scene.source_skinning).unwrap();
    let coords = encode_garment(&garment.vertices, &frames, &weights).unwrap();
    let diag = garment.bbox_diagonal();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let rot = rotation(&mut r);
        let t = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let moved = transformed(&scene.source_skeleton, |p| rot * p + t, |v| rot * v);
        let got = transfer(&coords, &moved.frames().unwrap()).unwrap();
        for (a, g) in got.iter().zip(&garment.vertices) {
            worst = worst.max((a - (rot * g + t)).norm() / diag);
        }
    }
    for s in [0.25, 0.5, 2.0, 3.0, 10.0] {
        let scaled = transformed(&scene.source_skeleton, |p| p * s, |v| v);
        let got = transfer(&coords, &scaled.frames().unwrap()).unwrap();
        for (a, g) in got.iter().zip(&garment.vertices) {
            worst = worst.max((a - g * s).norm() / (diag * s));
        }
    }
    outcome(worst < 1e-9, format!("max relative error {worst:.2e} over 20 rigid + 5 scaling transforms"))
}

fn c3() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut fallbacks = 0;
    for i in 0..100 {
        let skel = random_skeleton(r.random_range(2..24), if i % 2 == 0 { 0.4 } else { 0.0 }, &mut r);
        let frames = skel.frames().unwrap();
        for (b, bone) in skel.bones.iter().enumerate() {
            if let Some(p) = bone.parent {
                let z = bone.direction / bone.length();
                let xp = frames[p].x();
                if (xp - z * xp.dot(&z)).norm() < 1e-6 {
                    fallbacks += 1;
                }
            }
            let f = &frames[b];
            worst = worst.max(f.orthonormality_error()).max((f.axes.determinant() - 1.0).abs());
        }
    }
    outcome(
        worst <= 1e-9 && fallbacks > 0,
        format!("max orthonormality/determinant error {worst:.2e} on 100 skeletons, {fallbacks} fallback frames"),
    )
}

fn c4() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (name, check)) in gradcheck::CHECKS.iter().enumerate() {
        let e = gradcheck::worst(*check, 10_000 + 100 * i as u64);
        ok &= e < gradcheck::TOLERANCE;
        parts.push(format!("{name} {e:.1e}"));
    }
    outcome(
        ok,
        format!("worst relative error per term over {} instances: {}", gradcheck::INSTANCES, parts.join(", ")),
    )
}

fn c5(scene: &Scene) -> Outcome {
    let garment = &scene.garments[0].mesh;
    let cache = DifferentialCache::new(garment).unwrap();
    let mut worst = 0.0f64;
    for s in [0.25, 1.0, 4.0] {
        let scaled: Vec<Vec3> = garment.vertices.iter().map(|p| p * s).collect();
        let mut g = vec![Vec3::zeros(); scaled.len()];
        worst = worst.max(l_lap(&cache, &scaled, &mut g));
    }
    outcome(worst < 1e-12, format!("max L_lap(G, sG) {worst:.2e} for s in {{0.25, 1, 4}}"))
}

fn c6() -> Outcome {
    let scene = generate(&SynthSpec::small(6)).unwrap();
    let mut c = config();
    c.resolution = Resolution::Single;
    let r = run_coarse_to_fine(&scene, &c).unwrap();
    let iterations = r.trace.last().map(|t| t.iteration).unwrap_or(0);
    outcome(
        r.max_weight_residual < 0.1 && r.max_weight_sum_error <= 1e-9 && iterations == 8000,
        format!(
            "{iterations} iterations: max |dw| {:.6} (< 0.1), max |sum w - 1| {:.2e} (<= 1e-9)",
            r.max_weight_residual, r.max_weight_sum_error
        ),
    )
}

fn c7() -> Outcome {
    let spec = SynthSpec {
        target: TargetVariation::identity(),
        ..SynthSpec::standard(7)
    };
    let scene = generate(&spec).unwrap();
    let r = run_coarse_to_fine(&scene, &config()).unwrap();
    let src = &scene.garments[0].mesh;
    let rel = mean_distance(&r.mesh.vertices, &src.vertices) / src.bbox_diagonal();
    outcome(rel < 0.01, format!("mean vertex error {:.4}% of garment diagonal (< 1%)", 100.0 * rel))
}

fn c8(scene: &Scene, r: &GarmentResult, body: &CollisionBody) -> Outcome {
    let (_, ok, detail) = penetration(&r.mesh.vertices, body, r.epsilon);
    let (before, _, _) = penetration(&r.initial_positions, body, r.epsilon);
    outcome(
        ok,
        format!(
            "{} ({} coarse target / {} fine vertices, {:.1}% below -eps at initialization)",
            detail,
            config().coarse_target_size(scene.garments[0].mesh.vertex_count()),
            scene.garments[0].mesh.vertex_count(),
            100.0 * before.fraction_below_epsilon()
        ),
    )
}

fn c9(scene: &Scene, forward: &GarmentResult) -> Outcome {
    let layer = GarmentLayer {
        name: forward.name.clone(),
        mesh: forward.mesh.clone(),
        fit_region: None,
        connected: false,
    };
    let back = scene.reversed(vec![layer]).unwrap();
    let r = run_coarse_to_fine(&back, &config()).unwrap();
    let src = &scene.garments[0].mesh.vertices;
    let err = mean_distance(&r.mesh.vertices, src);
    let raw = mean_distance(&r.initial_positions, src);
    let h = height(&scene.source_avatar);
    outcome(
        err <= 0.05 * h && err < raw,
        format!(
            "cycle error {err:.4} = {:.2}% of avatar height (<= 5%), raw transfer error {raw:.4}",
            100.0 * err / h
        ),
    )
}

fn c10(scene: &Scene, r: &GarmentResult, body: &CollisionBody) -> Outcome {
    let d0 = bone_guided_distances(&r.initial_positions, &scene.target_skeleton, body);
    let d1 = bone_guided_distances(&r.mesh.vertices, &scene.target_skeleton, body);
    let fit = |d: &[f64]| {
        r.region.iter().map(|&v| (d[v] - r.source_distances[v]).abs()).sum::<f64>() / r.region.len().max(1) as f64
    };
    let (before, after) = (fit(&d0), fit(&d1));
    outcome(
        !r.region.is_empty() && after <= 0.25 * before,
        format!(
            "{} region vertices, mean |d_t - d_s| {before:.5} -> {after:.5} (ratio {:.3}, <= 0.25)",
            r.region.len(),
            after / before
        ),
    )
}

fn c11(scene: &Scene) -> Outcome {
    let report = bench_conditioning(scene, &config()).unwrap();
    let at = |it: usize| {
        report
            .checkpoints
            .iter()
            .find(|c| c.iteration == it)
            .map(|c| format!("it {it}: {:.3e} vs {:.3e}", c.bone_local_loss, c.global_loss))
            .unwrap_or_default()
    };
    outcome(
        report.bone_local_spread < report.global_spread,
        format!(
            "{} iterations, IQR(r/median r) bone-local {:.4} < global {:.4}; losses {}, {}",
            report.iterations,
            report.bone_local_spread,
            report.global_spread,
            at(2000),
            at(4000)
        ),
    )
}

fn c12() -> Outcome {
    let scene = generate(&SynthSpec::two_layer(12)).unwrap();
    let results = run_multilayer(&scene, &config()).unwrap();
    let (inner, outer) = (&results[0], &results[1]);
    let pairs = &outer.connections;
    let mean_rest = pairs.iter().map(|p| p.rest_length).sum::<f64>() / pairs.len().max(1) as f64;
    let worst = pairs
        .iter()
        .map(|p| ((outer.mesh.vertices[p.outer] - inner.mesh.vertices[p.inner]).norm() - p.rest_length).abs())
        .fold(0.0, f64::max);
    let body = CollisionBody::from_parts([&scene.target_avatar, &inner.mesh]).unwrap();
    let (_, pen_ok, detail) = penetration(&outer.mesh.vertices, &body, outer.epsilon);
    let ratio = worst / mean_rest;
    outcome(
        !pairs.is_empty() && ratio <= 0.02 && pen_ok,
        format!(
            "{} pairs, max |l_t - l_s| {:.2}% of mean l_s (<= 2%); outer vs avatar+inner: {detail}",
            pairs.len(),
            100.0 * ratio
        ),
    )
}

fn c13() -> Outcome {
    let scene = generate(&SynthSpec::small(13)).unwrap();
    let a = run_coarse_to_fine(&scene, &config()).unwrap();
    let b = run_coarse_to_fine(&scene, &config()).unwrap();
    let bits = |m: &Mesh| m.vertices.iter().flat_map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    let trace = |r: &GarmentResult| r.trace.iter().map(|t| serde_json::to_string(t).unwrap()).collect::<Vec<_>>();
    let same = bits(&a.mesh) == bits(&b.mesh) && write_obj(&a.mesh) == write_obj(&b.mesh) && trace(&a) == trace(&b);
    outcome(same, format!("two runs, {} trace records, meshes and traces bitwise identical: {same}", a.trace.len()))
}

fn main() {
    let mut h = Harness { failures: 0 };
    let standard = generate(&SynthSpec::standard(0)).unwrap();
    h.run("C1", "representation exactness", Some(Duration::from_secs(1)), c1);
    h.run("C2", "equivariance", Some(Duration::from_secs(5)), || c2(&standard));
    h.run("C3", "frame validity", None, c3);
    h.run("C4", "gradient correctness", Some(Duration::from_secs(60)), c4);
    h.run("C5", "laplacian normalization", None, || c5(&standard));
    h.run("C6", "constraint hard bounds", None, c6);
    h.run("C7", "self-refit identity", None, c7);

    let start = Instant::now();
    let forward = run_coarse_to_fine(&standard, &config()).unwrap();
    let forward_time = start.elapsed();
    let body = CollisionBody::new(standard.target_avatar.clone()).unwrap();
    h.run("C8", "penetration resolution", Some(Duration::from_secs(300).saturating_sub(forward_time)), || {
        c8(&standard, &forward, &body)
    });
    h.run("C9", "cycle consistency", Some(Duration::from_secs(600).saturating_sub(forward_time)), || {
        c9(&standard, &forward)
    });
    h.run("C10", "fit-style preservation", None, || c10(&standard, &forward, &body));
    h.run("C11", "conditioning benchmark", None, || c11(&standard));
    h.run("C12", "multi-layer connection", None, c12);
    h.run("C13", "determinism", None, c13);
    println!("standard scene refit took {:.1}s", forward_time.as_secs_f64());
    if h.failures > 0 {
        println!("{} criteria failed", h.failures);
        std::process::exit(1);
    }
}
