#![allow(dead_code)]

pub mod gradcheck;

use garment_refit::bone_local::{encode_garment, BoneLocalCoords, VertexWeights};
use garment_refit::contact::ContactPair;
use garment_refit::geometry::{Mesh, Vec2, Vec3};
use garment_refit::losses::LayerPair;
use garment_refit::skeleton::{child_frame, root_frame, Bone, BoneFrame, Skeleton};
use nalgebra::{Rotation3, Unit};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(unit(rng)), rng.random_range(-3.1..3.1))
}

pub fn random_frame(rng: &mut ChaCha8Rng) -> BoneFrame {
    let r = rotation(rng).into_inner();
    let origin = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    BoneFrame::from_axes(r.column(0).into(), r.column(1).into(), r.column(2).into(), origin, rng.random_range(0.1..2.0))
}

/// Wrinkled, jittered `nx × ny` grid with UVs.
pub fn grid(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Mesh {
    let (a, b) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let mut v = Vec::new();
    let mut uv = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (u, w) = (i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64);
            let jitter = 0.15 / nx as f64;
            v.push(Vec3::new(
                u + rng.random_range(-jitter..jitter),
                w + rng.random_range(-jitter..jitter),
                0.08 * (a * u).sin() * (b * w).cos(),
            ));
            uv.push(Vec2::new(u, w));
        }
    }
    let mut f = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let k = j * nx + i;
            f.push([k, k + 1, k + nx + 1]);
            f.push([k, k + nx + 1, k + nx]);
        }
    }
    Mesh::new(v, f).with_uvs(uv)
}

pub fn perturb(points: &[Vec3], amount: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    points.iter().map(|p| p + unit(rng) * rng.random_range(0.0..amount)).collect()
}

/// Margin used with [`random_pairs`].
pub const SEP_EPSILON: f64 = 0.01;

/// One pair per vertex, in vertex order, against random planes. Signed
/// distances stay at least 0.005 away from the [`SEP_EPSILON`] hinge.
pub fn random_pairs(positions: &[Vec3], rng: &mut ChaCha8Rng) -> Vec<ContactPair> {
    let n = positions.len() as f64;
    positions
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let normal = unit(rng);
            let d = if rng.random_bool(0.5) {
                rng.random_range(-0.03..SEP_EPSILON - 0.005)
            } else {
                rng.random_range(SEP_EPSILON + 0.005..0.05)
            };
            ContactPair {
                garment_vertex: v,
                body_point: p - normal * d,
                body_face: v,
                normal,
                area_weight: rng.random_range(0.5..1.5) / n,
                source_distance: rng.random_range(0.0..0.04),
            }
        })
        .collect()
}

/// Each sampled outer vertex is paired with an inner vertex of nearby index.
pub fn random_layer_pairs(n_outer: usize, n_inner: usize, rng: &mut ChaCha8Rng) -> Vec<LayerPair> {
    let mut out = Vec::new();
    for outer in 0..n_outer {
        if rng.random_bool(0.5) {
            out.push(LayerPair {
                outer,
                inner: (outer + rng.random_range(0..3)).saturating_sub(1).min(n_inner - 1),
                rest_length: rng.random_range(0.0..0.05),
                rest_direction: unit(rng),
            });
        }
    }
    out
}

pub fn random_weights(n: usize, bones: usize, rng: &mut ChaCha8Rng) -> Vec<VertexWeights> {
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=bones.min(3));
            let mut picked: Vec<usize> = Vec::new();
            while picked.len() < k {
                let b = rng.random_range(0..bones);
                if !picked.contains(&b) {
                    picked.push(b);
                }
            }
            picked.sort();
            let raw: Vec<f64> = picked.iter().map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            picked.into_iter().zip(raw).map(|(b, w)| (b, w / s)).collect()
        })
        .collect()
}

pub fn random_coords(positions: &[Vec3], frames: &[BoneFrame], rng: &mut ChaCha8Rng) -> BoneLocalCoords {
    let w = random_weights(positions.len(), frames.len(), rng);
    encode_garment(positions, frames, &w).unwrap()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random tree skeleton. With probability `fallback`, a child bone is laid
/// along its parent's x-axis so its frame takes the fallback branch.
pub fn random_skeleton(bones: usize, fallback: f64, rng: &mut ChaCha8Rng) -> Skeleton {
    let root_dir = unit(rng) * rng.random_range(0.05..0.5);
    let mut crotch = unit(rng);
    while crotch.cross(&root_dir.normalize()).norm() < 0.1 {
        crotch = unit(rng);
    }
    let mut list = vec![Bone {
        name: "b0".into(),
        parent: None,
        head: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        direction: root_dir,
    }];
    let mut frames = vec![root_frame(&list[0], crotch).unwrap()];
    for i in 1..bones {
        let p = rng.random_range(0..i);
        let parent = &list[p];
        let len = rng.random_range(0.05..0.5);
        let direction = if rng.random_bool(fallback) {
            let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            frames[p].x() * (s * len)
        } else {
            unit(rng) * len
        };
        let bone = Bone {
            name: format!("b{i}"),
            parent: Some(p),
            head: parent.tail(),
            direction,
        };
        frames.push(child_frame(&frames[p], bone.head, bone.direction));
        list.push(bone);
    }
    Skeleton::new(list, crotch).unwrap()
}

pub fn random_points(n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread)))
        .collect()
}
