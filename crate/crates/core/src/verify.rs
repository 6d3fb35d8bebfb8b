//! Invariant checks run against a loaded scene.

use nalgebra::{Rotation3, Unit};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bone_local::{encode_garment, BoneLocalCoords};
use crate::geometry::differential::DifferentialCache;
use crate::geometry::{Topology, Vec3};
use crate::init::{inherit_weights, transfer};
use crate::losses::l_lap;
use crate::optimizer::{constrain_weight_residual, decode, ResidualSet};
use crate::scene::Scene;
use crate::skeleton::Skeleton;

pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

fn fail(name: &'static str, e: impl std::fmt::Display) -> Check {
    check(name, false, e.to_string())
}

fn frame_errors(skeleton: &Skeleton) -> crate::Result<f64> {
    let frames = skeleton.frames()?;
    let mut worst = 0.0f64;
    for (f, b) in frames.iter().zip(&skeleton.bones) {
        worst = worst
            .max(f.orthonormality_error())
            .max((f.axes.determinant() - 1.0).abs())
            .max((f.z() - b.direction / b.length()).norm());
    }
    Ok(worst)
}

fn max_relative(a: &[Vec3], b: &[Vec3], scale: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm() / scale).fold(0.0, f64::max)
}

/// Runs every check; failures are reported, never returned as errors.
pub fn verify_scene(scene: &Scene, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    out.push(match scene.validate() {
        Ok(()) => check("scene_valid", true, format!("{} garment(s)", scene.garments.len())),
        Err(e) => fail("scene_valid", e),
    });
    out.push(match scene.source_skeleton.check_correspondence(&scene.target_skeleton) {
        Ok(()) => check("bone_correspondence", true, format!("{} bones", scene.source_skeleton.len())),
        Err(e) => fail("bone_correspondence", e),
    });
    for (name, skel) in [("frames_source", &scene.source_skeleton), ("frames_target", &scene.target_skeleton)] {
        out.push(match frame_errors(skel) {
            Ok(err) => check(name, err <= TOLERANCE, format!("max error {err:.2e}")),
            Err(e) => fail(name, e),
        });
    }
    let Ok(source_frames) = scene.source_skeleton.frames() else {
        return out;
    };
    let Ok(target_frames) = scene.target_skeleton.frames() else {
        return out;
    };

    for g in &scene.garments {
        let mesh = &g.mesh;
        out.push(match Topology::build(mesh) {
            Ok(t) => check("garment_topology", true, format!("{}: {} boundary edges", g.name, t.boundary_edge_count())),
            Err(e) => fail("garment_topology", format!("{}: {e}", g.name)),
        });
        let scale = mesh.bbox_diagonal().max(f64::MIN_POSITIVE);
        let coords: BoneLocalCoords = match inherit_weights(&mesh.vertices, &scene.source_avatar, &scene.source_skinning)
            .and_then(|w| encode_garment(&mesh.vertices, &source_frames, &w))
        {
            Ok(c) => c,
            Err(e) => {
                out.push(fail("encoding", format!("{}: {e}", g.name)));
                continue;
            }
        };

        let sums = (0..coords.vertex_count())
            .map(|v| (coords.entries(v).map(|e| coords.weights[e]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        out.push(check("weight_sum", sums <= TOLERANCE, format!("{}: max |Σw − 1| {sums:.2e}", g.name)));

        let round = coords.decode(&source_frames).map(|p| max_relative(&p, &mesh.vertices, scale));
        out.push(match round {
            Ok(err) => check("encode_round_trip", err <= TOLERANCE, format!("{}: max relative error {err:.2e}", g.name)),
            Err(e) => fail("encode_round_trip", e),
        });

        let axis = Unit::new_normalize(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
        let shift = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let s = rng.random_range(0.5..2.0);
        let f = |p: Vec3| rot * p * s + shift;
        let mut moved = scene.target_skeleton.map_points(f);
        moved.crotch_reference = rot * scene.target_skeleton.crotch_reference;
        let equi = moved.frames().and_then(|mf| {
            let base = transfer(&coords, &target_frames)?;
            let got = transfer(&coords, &mf)?;
            let want: Vec<Vec3> = base.into_iter().map(f).collect();
            Ok(max_relative(&got, &want, scale * s))
        });
        out.push(match equi {
            Ok(err) => check("equivariance", err <= TOLERANCE, format!("{}: max relative error {err:.2e}", g.name)),
            Err(e) => fail("equivariance", e),
        });

        out.push(match DifferentialCache::new(mesh) {
            Ok(cache) => {
                let worst = [0.25, 1.0, 4.0]
                    .iter()
                    .map(|&s| {
                        let scaled: Vec<Vec3> = mesh.vertices.iter().map(|p| p * s).collect();
                        let mut grad = vec![Vec3::zeros(); scaled.len()];
                        l_lap(&cache, &scaled, &mut grad)
                    })
                    .fold(0.0, f64::max);
                check("laplacian_scale", worst < 1e-12, format!("{}: max L_lap {worst:.2e}", g.name))
            }
            Err(e) => fail("laplacian_scale", e),
        });

        let gamma = crate::losses::LossWeights::default().gamma;
        let mut residuals = ResidualSet::for_coords(&coords);
        for x in residuals.values.iter_mut() {
            *x = rng.random_range(-5.0..5.0);
        }
        for e in 0..residuals.len() {
            for k in 0..3 {
                residuals.values[4 * e + k] *= 0.01;
            }
        }
        out.push(match decode(&coords, &residuals, &target_frames, gamma) {
            Ok(dec) => {
                let dw = (0..residuals.len())
                    .map(|e| constrain_weight_residual(residuals.raw_weight(e), gamma).abs())
                    .fold(0.0, f64::max);
                let sum = (0..coords.vertex_count())
                    .map(|v| (coords.entries(v).map(|e| dec.weights[e]).sum::<f64>() - 1.0).abs())
                    .fold(0.0, f64::max);
                check(
                    "decode_bounds",
                    dw < gamma && sum <= TOLERANCE,
                    format!("{}: max |Δw| {dw:.6}, max |Σw − 1| {sum:.2e}", g.name),
                )
            }
            Err(e) => fail("decode_bounds", e),
        });
    }
    out
}

/// Fixed-width pass/fail table.
pub fn format_table(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        s.push_str(&format!(
            "{:<4} {:<20} {}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    s
}
