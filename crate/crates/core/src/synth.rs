//! Procedural scenes: a capsule humanoid with analytic skinning and
//! UV-parameterized tube garments, plus a reshaped target variant.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bone_local::VertexWeights;
use crate::error::{RefitError, Result};
use crate::geometry::query::closest_point_on_segment;
use crate::geometry::{Mesh, Vec2, Vec3};
use crate::scene::{GarmentLayer, Scene};
use crate::skeleton::{Bone, Skeleton};

/// Bones whose capsules form the torso.
pub const TORSO_BONES: &[&str] = &["hips", "spine", "chest"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetVariation {
    pub torso_radius_scale: f64,
    pub bone_length_range: (f64, f64),
    pub radius_range: (f64, f64),
}

impl Default for TargetVariation {
    fn default() -> Self {
        Self {
            torso_radius_scale: 1.4,
            bone_length_range: (0.95, 1.05),
            radius_range: (0.9, 1.1),
        }
    }
}

impl TargetVariation {
    pub fn identity() -> Self {
        Self {
            torso_radius_scale: 1.0,
            bone_length_range: (1.0, 1.0),
            radius_range: (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    /// Vertex columns per panel around the half circumference.
    pub panel_columns: usize,
    pub panel_rows: usize,
    pub garment_bottom: f64,
    pub garment_top: f64,
    pub clearance: f64,
    pub wrinkle_amplitude: f64,
    pub torso_radius: f64,
    pub capsule_segments: usize,
    pub cap_rings: usize,
    pub target: TargetVariation,
    /// Adds an outer tube connected to the inner one along its top ring.
    pub two_layers: bool,
    pub outer_gap: f64,
    pub connect_gap: f64,
    /// Upper-arm elevation in degrees applied to both avatars.
    pub arm_raise_degrees: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            panel_columns: 70,
            panel_rows: 58,
            garment_bottom: 0.97,
            garment_top: 1.27,
            clearance: 0.012,
            wrinkle_amplitude: 0.004,
            torso_radius: 0.15,
            capsule_segments: 40,
            cap_rings: 8,
            target: TargetVariation::default(),
            two_layers: false,
            outer_gap: 0.035,
            connect_gap: 0.008,
            arm_raise_degrees: 0.0,
        }
    }
}

impl SynthSpec {
    /// The standard scene: a ~8k-vertex tube on a target with a 1.4x torso.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// A reduced-resolution variant for quick runs.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            panel_columns: 30,
            panel_rows: 20,
            capsule_segments: 24,
            cap_rings: 5,
            ..Self::default()
        }
    }

    pub fn two_layer(seed: u64) -> Self {
        Self {
            seed,
            panel_columns: 46,
            panel_rows: 34,
            two_layers: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RefitError::InvalidConfig(m.to_string()));
        if self.panel_columns < 2 || self.panel_rows < 2 {
            return bad("panels need at least 2x2 vertices");
        }
        if self.capsule_segments < 3 || self.cap_rings < 1 {
            return bad("capsules need at least 3 segments and 1 cap ring");
        }
        if !(self.garment_bottom < self.garment_top) {
            return bad("garment_bottom must lie below garment_top");
        }
        if !(self.torso_radius > 0.0 && self.clearance >= 0.0 && self.wrinkle_amplitude >= 0.0) {
            return bad("radii, clearance and wrinkle amplitude must be nonnegative");
        }
        if self.wrinkle_amplitude >= self.clearance + self.torso_radius {
            return bad("wrinkle amplitude exceeds the garment radius");
        }
        let t = &self.target;
        for (name, (lo, hi)) in [("bone_length_range", t.bone_length_range), ("radius_range", t.radius_range)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(RefitError::InvalidConfig(format!("invalid {name} ({lo}, {hi})")));
            }
        }
        if !(t.torso_radius_scale > 0.0) {
            return bad("torso_radius_scale must be positive");
        }
        if self.two_layers && !(self.outer_gap > 0.0 && self.connect_gap > 0.0) {
            return bad("layer gaps must be positive");
        }
        Ok(())
    }
}

/// Bone with the radius of its capsule.
#[derive(Debug, Clone, PartialEq)]
pub struct RigBone {
    pub bone: Bone,
    pub radius: f64,
}

/// Humanoid rest rig, y up, facing +z.
pub fn base_rig(torso_radius: f64) -> Vec<RigBone> {
    fn add(rig: &mut Vec<RigBone>, name: &str, parent: Option<usize>, head: [f64; 3], dir: [f64; 3], radius: f64) {
        rig.push(RigBone {
            bone: Bone {
                name: name.to_string(),
                parent,
                head: Vec3::from(head),
                direction: Vec3::from(dir),
            },
            radius,
        });
    }
    let mut rig = Vec::new();
    add(&mut rig, "hips", None, [0.0, 0.95, 0.0], [0.0, 0.15, 0.0], torso_radius);
    add(&mut rig, "spine", Some(0), [0.0, 1.10, 0.0], [0.0, 0.15, 0.0], torso_radius);
    add(&mut rig, "chest", Some(1), [0.0, 1.25, 0.0], [0.0, 0.17, 0.0], torso_radius);
    add(&mut rig, "neck", Some(2), [0.0, 1.42, 0.0], [0.0, 0.10, 0.0], 0.05);
    add(&mut rig, "head", Some(3), [0.0, 1.52, 0.0], [0.0, 0.20, 0.0], 0.09);
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let base = rig.len();
        add(&mut rig, &format!("{side}_shoulder"), Some(2), [0.02 * s, 1.38, 0.0], [0.16 * s, 0.0, 0.0], 0.05);
        add(&mut rig, &format!("{side}_upper_arm"), Some(base), [0.18 * s, 1.38, 0.0], [0.26 * s, -0.10, 0.0], 0.045);
        add(&mut rig, &format!("{side}_forearm"), Some(base + 1), [0.44 * s, 1.28, 0.0], [0.24 * s, -0.10, 0.0], 0.04);
    }
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let base = rig.len();
        add(&mut rig, &format!("{side}_crotch"), Some(0), [0.0, 0.95, 0.0], [0.09 * s, -0.05, 0.0], 0.07);
        add(&mut rig, &format!("{side}_thigh"), Some(base), [0.09 * s, 0.90, 0.0], [0.0, -0.42, 0.0], 0.075);
        add(&mut rig, &format!("{side}_shin"), Some(base + 1), [0.09 * s, 0.48, 0.0], [0.0, -0.42, 0.0], 0.05);
    }
    rig
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Rescales bone lengths and capsule radii. Child heads keep their offset
/// from the parent head, scaled by the parent's length factor.
pub fn vary_rig(rig: &[RigBone], variation: &TargetVariation, rng: &mut ChaCha8Rng) -> Vec<RigBone> {
    let lengths: Vec<f64> = rig.iter().map(|_| sample(rng, variation.bone_length_range)).collect();
    let radii: Vec<f64> = rig.iter().map(|_| sample(rng, variation.radius_range)).collect();
    let mut out: Vec<RigBone> = Vec::with_capacity(rig.len());
    for (i, rb) in rig.iter().enumerate() {
        let head = match rb.bone.parent {
            None => rb.bone.head,
            Some(p) => out[p].bone.head + (rb.bone.head - rig[p].bone.head) * lengths[p],
        };
        let torso = TORSO_BONES.contains(&rb.bone.name.as_str());
        out.push(RigBone {
            bone: Bone {
                head,
                direction: rb.bone.direction * lengths[i],
                ..rb.bone.clone()
            },
            radius: rb.radius * if torso { variation.torso_radius_scale } else { radii[i] },
        });
    }
    out
}

/// Rotates each arm chain upwards about its upper-arm head.
pub fn raise_arms(rig: &[RigBone], degrees: f64) -> Vec<RigBone> {
    let mut out = rig.to_vec();
    if degrees == 0.0 {
        return out;
    }
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let Some(ua) = rig.iter().position(|r| r.bone.name == format!("{side}_upper_arm")) else {
            continue;
        };
        let pivot = rig[ua].bone.head;
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), s * degrees.to_radians());
        let chain = [format!("{side}_upper_arm"), format!("{side}_forearm")];
        for rb in out.iter_mut().filter(|r| chain.contains(&r.bone.name)) {
            rb.bone.head = pivot + rot * (rb.bone.head - pivot);
            rb.bone.direction = rot * rb.bone.direction;
        }
    }
    out
}

pub fn rig_skeleton(rig: &[RigBone]) -> Result<Skeleton> {
    Skeleton::new(rig.iter().map(|r| r.bone.clone()).collect(), Vec3::x())
}

/// Outward-wound capsule around segment `a -> b`.
pub fn capsule(a: Vec3, b: Vec3, radius: f64, segments: usize, cap_rings: usize) -> Mesh {
    let axis_vec = b - a;
    let len = axis_vec.norm();
    let w = axis_vec / len;
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = (helper - w * helper.dot(&w)).normalize();
    let v = w.cross(&u);

    // rings as (center, ring radius) from the south pole upwards
    let mut rings: Vec<(Vec3, f64)> = Vec::new();
    for k in 1..=cap_rings {
        let phi = -PI / 2.0 + PI / 2.0 * k as f64 / cap_rings as f64;
        rings.push((a + w * radius * phi.sin(), radius * phi.cos()));
    }
    let spacing = 2.0 * PI * radius / segments as f64;
    let m = ((len / spacing).ceil() as usize).max(1);
    for k in 1..=m {
        rings.push((a + axis_vec * (k as f64 / m as f64), radius));
    }
    for k in 1..cap_rings {
        let phi = PI / 2.0 * k as f64 / cap_rings as f64;
        rings.push((b + w * radius * phi.sin(), radius * phi.cos()));
    }

    let mut vertices = vec![a - w * radius];
    for (c, r) in &rings {
        for j in 0..segments {
            let t = 2.0 * PI * j as f64 / segments as f64;
            vertices.push(c + (u * t.cos() + v * t.sin()) * *r);
        }
    }
    vertices.push(b + w * radius);
    let north = vertices.len() - 1;
    let idx = |ring: usize, j: usize| 1 + ring * segments + j % segments;
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, idx(0, j + 1), idx(0, j)]);
        faces.push([north, idx(rings.len() - 1, j), idx(rings.len() - 1, j + 1)]);
    }
    for i in 0..rings.len() - 1 {
        for j in 0..segments {
            let (p, q, r, s) = (idx(i, j), idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j));
            faces.push([p, q, r]);
            faces.push([p, r, s]);
        }
    }
    Mesh::new(vertices, faces)
}

fn capsule_distance(p: &Vec3, rb: &RigBone) -> f64 {
    (p - closest_point_on_segment(*p, rb.bone.head, rb.bone.tail())).norm() - rb.radius
}

/// Union surface of the rig's capsules: faces buried inside other capsules
/// are dropped and unused vertices removed. Faces crossing an intersection
/// curve are kept so the surface has no holes.
pub fn avatar_mesh(rig: &[RigBone], segments: usize, cap_rings: usize) -> Mesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, rb) in rig.iter().enumerate() {
        let c = capsule(rb.bone.head, rb.bone.tail(), rb.radius, segments, cap_rings);
        let base = vertices.len();
        let inside: Vec<bool> = c
            .vertices
            .iter()
            .map(|p| {
                rig.iter()
                    .enumerate()
                    .any(|(k, other)| k != i && capsule_distance(p, other) < -1e-9)
            })
            .collect();
        for f in 0..c.face_count() {
            if !c.faces[f].iter().all(|&x| inside[x]) {
                faces.push(c.faces[f].map(|x| x + base));
            }
        }
        vertices.extend(c.vertices);
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for f in &mut faces {
        for x in f.iter_mut() {
            if remap[*x] == usize::MAX {
                remap[*x] = kept.len();
                kept.push(vertices[*x]);
            }
            *x = remap[*x];
        }
    }
    Mesh::new(kept, faces)
}

/// Gaussian falloff of capsule-surface distance, top four bones, normalized.
pub fn skinning_weights(avatar: &Mesh, rig: &[RigBone]) -> Vec<VertexWeights> {
    const SIGMA: f64 = 0.025;
    avatar
        .vertices
        .iter()
        .map(|p| {
            let d: Vec<f64> = rig.iter().map(|rb| capsule_distance(p, rb)).collect();
            let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
            let mut w: Vec<(usize, f64)> = d
                .iter()
                .enumerate()
                .map(|(b, &x)| (b, (-((x - dmin) / SIGMA).powi(2)).exp()))
                .collect();
            w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            w.truncate(4);
            w.retain(|&(_, x)| x > 1e-4);
            let s: f64 = w.iter().map(|(_, x)| x).sum();
            w.iter_mut().for_each(|e| e.1 /= s);
            w.sort_by_key(|e| e.0);
            w
        })
        .collect()
}

/// Radial offset profile of a tube garment.
struct TubeProfile {
    radius: f64,
    amplitude: f64,
    phase_y: f64,
    phase_t: f64,
}

impl TubeProfile {
    fn at(&self, theta: f64, s: f64) -> f64 {
        self.radius + self.amplitude * (2.0 * PI * 3.0 * s + self.phase_y).sin() * (7.0 * theta + self.phase_t).sin()
    }
}

/// Two-panel tube around the vertical torso axis. `extra(row)` adds a radial
/// offset per row.
fn tube(spec: &SynthSpec, profile: &TubeProfile, extra: impl Fn(usize) -> f64) -> Mesh {
    let (nc, nr) = (spec.panel_columns, spec.panel_rows);
    let height = spec.garment_top - spec.garment_bottom;
    let uv_scale = 0.45 / (PI * profile.radius);
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (panel, start) in [(0usize, -PI / 2.0), (1, PI / 2.0)] {
        let base = vertices.len();
        for j in 0..nr {
            let s = j as f64 / (nr - 1) as f64;
            let y = spec.garment_bottom + height * s;
            for i in 0..nc {
                let theta = start + PI * i as f64 / (nc - 1) as f64;
                let r = profile.at(theta, s) + extra(j);
                vertices.push(Vec3::new(r * theta.sin(), y, r * theta.cos()));
                uvs.push(Vec2::new(0.55 * panel as f64 + 0.45 * i as f64 / (nc - 1) as f64, height * s * uv_scale));
            }
        }
        for j in 0..nr - 1 {
            for i in 0..nc - 1 {
                let a = base + j * nc + i;
                faces.push([a, a + 1, a + nc + 1]);
                faces.push([a, a + nc + 1, a + nc]);
            }
        }
    }
    Mesh::new(vertices, faces).with_uvs(uvs)
}

fn assemble(spec: &SynthSpec, source_rig: &[RigBone], target_rig: &[RigBone], garments: Vec<GarmentLayer>) -> Result<Scene> {
    let source_avatar = avatar_mesh(source_rig, spec.capsule_segments, spec.cap_rings);
    let target_avatar = avatar_mesh(target_rig, spec.capsule_segments, spec.cap_rings);
    let scene = Scene {
        source_skinning: skinning_weights(&source_avatar, source_rig),
        target_skinning: Some(skinning_weights(&target_avatar, target_rig)),
        source_avatar,
        target_avatar,
        source_skeleton: rig_skeleton(source_rig)?,
        target_skeleton: rig_skeleton(target_rig)?,
        garments,
    };
    scene.validate()?;
    Ok(scene)
}

fn garments(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<GarmentLayer> {
    let profile = TubeProfile {
        radius: spec.torso_radius + spec.clearance,
        amplitude: spec.wrinkle_amplitude,
        phase_y: rng.random_range(0.0..2.0 * PI),
        phase_t: rng.random_range(0.0..2.0 * PI),
    };
    let inner = tube(spec, &profile, |_| 0.0);
    if !spec.two_layers {
        return vec![GarmentLayer {
            name: "shirt".into(),
            mesh: inner,
            fit_region: None,
            connected: false,
        }];
    }
    let top = spec.panel_rows - 1;
    let ramp = 3.0;
    let outer = tube(spec, &profile, |j| {
        let t = (1.0 - (top - j) as f64 / ramp).max(0.0);
        spec.outer_gap + (spec.connect_gap - spec.outer_gap) * t
    });
    vec![
        GarmentLayer {
            name: "inner".into(),
            mesh: inner,
            fit_region: None,
            connected: false,
        },
        GarmentLayer {
            name: "outer".into(),
            mesh: outer,
            fit_region: None,
            connected: true,
        },
    ]
}

/// Deterministic scene from `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rest = base_rig(spec.torso_radius);
    let target = vary_rig(&rest, &spec.target, &mut rng);
    let layers = garments(spec, &mut rng);
    assemble(
        spec,
        &raise_arms(&rest, spec.arm_raise_degrees),
        &raise_arms(&target, spec.arm_raise_degrees),
        layers,
    )
}

/// One scene per arm elevation, sharing the target shape and garments.
pub fn generate_sequence(spec: &SynthSpec, arm_raise_degrees: &[f64]) -> Result<Vec<Scene>> {
    arm_raise_degrees
        .iter()
        .map(|&deg| {
            generate(&SynthSpec {
                arm_raise_degrees: deg,
                ..spec.clone()
            })
        })
        .collect()
}
