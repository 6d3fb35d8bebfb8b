//! UV-space down/upsampling for coarse-to-fine refitting, and the per-layer,
//! multi-layer and per-frame refitting pipelines.

use nalgebra::Matrix3;

use crate::bone_local::{encode_garment, BoneLocalCoords, VertexWeights};
use crate::contact::{
    bone_guided_distances, bone_guided_init, build_fit_region, update_pairs, CollisionBody, FitLabel,
};
use crate::error::{RefitError, Result};
use crate::geometry::differential::DifferentialCache;
use crate::geometry::query::closest_point_on_triangle;
use crate::geometry::{Mesh, Vec2, Vec3};
use crate::init::{inherit_weights, nearest_vertices, transfer};
use crate::losses::{LayerPair, LossReport, LossWeights};
use serde::{Deserialize, Serialize};

use crate::optimizer::{
    benchmark_global_offsets, displacement_spread, run, RefitProblem, ResidualSet, RunOutput, Schedule, TraceRecord,
};
use crate::scene::{RefitConfig, Resolution, Scene};
use crate::skeleton::{BoneFrame, Skeleton};

/// Barycentric tolerance for point-in-triangle tests in UV space.
const UV_INSIDE_TOLERANCE: f64 = 1e-7;

/// Location of a fine vertex on the coarse mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineLocation {
    pub face: usize,
    pub bary: [f64; 3],
    /// Detail offset in the coarse triangle's local frame.
    pub detail: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingCorrespondence {
    pub coarse: Mesh,
    pub locations: Vec<FineLocation>,
    /// Fine vertices represented by each coarse vertex.
    pub clusters: Vec<Vec<usize>>,
}

/// Columns `e1, e2, n/√|n|` of triangle `p`; scales linearly with the triangle.
fn detail_frame(p: [Vec3; 3]) -> Matrix3<f64> {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let n = e1.cross(&e2);
    let len = n.norm();
    let n = if len > 0.0 { n / len.sqrt() } else { n };
    Matrix3::from_columns(&[e1, e2, n])
}

fn bary_point(p: [Vec3; 3], b: [f64; 3]) -> Vec3 {
    p[0] * b[0] + p[1] * b[1] + p[2] * b[2]
}

fn uv3(uv: &Vec2) -> Vec3 {
    Vec3::new(uv.x, uv.y, 0.0)
}

/// Barycentric coordinates of `p` in the UV triangle; `None` if degenerate.
fn uv_barycentric(p: &Vec2, a: &Vec2, b: &Vec2, c: &Vec2) -> Option<[f64; 3]> {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let det = v0.x * v1.y - v1.x * v0.y;
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = (v2.x * v1.y - v1.x * v2.y) / det;
    let l2 = (v0.x * v2.y - v2.x * v0.y) / det;
    Some([1.0 - l1 - l2, l1, l2])
}

fn charts(mesh: &Mesh) -> Vec<Vec<usize>> {
    let n = mesh.vertex_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in &mesh.faces {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut root_chart = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let r = find(&mut parent, f[0]);
        if root_chart[r] == usize::MAX {
            root_chart[r] = out.len();
            out.push(Vec::new());
        }
        out[root_chart[r]].push(fi);
    }
    out
}

struct CoarseBuilder {
    vertices: Vec<Vec3>,
    uvs: Vec<Vec2>,
    faces: Vec<[usize; 3]>,
    /// `(coarse face range, fine vertex)` assignments resolved later.
    pending: Vec<(std::ops::Range<usize>, usize)>,
    direct: Vec<(usize, FineLocation)>,
}

fn chart_vertices(mesh: &Mesh, faces: &[usize]) -> Vec<usize> {
    let mut vs: Vec<usize> = faces.iter().flat_map(|&f| mesh.faces[f]).collect();
    vs.sort_unstable();
    vs.dedup();
    vs
}

/// Copies a chart unchanged into the coarse mesh.
fn keep_chart(mesh: &Mesh, uvs: &[Vec2], faces: &[usize], out: &mut CoarseBuilder) {
    let verts = chart_vertices(mesh, faces);
    let base = out.vertices.len();
    let local = |v: usize| base + verts.binary_search(&v).expect("chart vertex");
    for &v in &verts {
        out.vertices.push(mesh.vertices[v]);
        out.uvs.push(uvs[v]);
    }
    let mut first_face = vec![None; verts.len()];
    for &f in faces {
        let tri = mesh.faces[f].map(local);
        let cf = out.faces.len();
        out.faces.push(tri);
        for (k, &c) in tri.iter().enumerate() {
            first_face[c - base].get_or_insert((cf, k));
        }
    }
    for (i, &v) in verts.iter().enumerate() {
        let (face, k) = first_face[i].expect("vertex has a face");
        let mut bary = [0.0; 3];
        bary[k] = 1.0;
        out.direct.push((
            v,
            FineLocation {
                face,
                bary,
                detail: Vec3::zeros(),
            },
        ));
    }
}

/// Evaluates the fine surface at `uv`, if it lies on the chart.
fn surface_at(mesh: &Mesh, uvs: &[Vec2], faces: &[usize], uv: &Vec2) -> Option<Vec3> {
    for &f in faces {
        let [a, b, c] = mesh.faces[f];
        let (lo, hi) = (
            uvs[a].inf(&uvs[b]).inf(&uvs[c]),
            uvs[a].sup(&uvs[b]).sup(&uvs[c]),
        );
        let pad = UV_INSIDE_TOLERANCE * (hi - lo).norm();
        if uv.x < lo.x - pad || uv.y < lo.y - pad || uv.x > hi.x + pad || uv.y > hi.y + pad {
            continue;
        }
        if let Some(w) = uv_barycentric(uv, &uvs[a], &uvs[b], &uvs[c]) {
            if w.iter().all(|&x| x >= -UV_INSIDE_TOLERANCE) {
                let w = w.map(|x| x.max(0.0));
                let s = w[0] + w[1] + w[2];
                let w = w.map(|x| x / s);
                return Some(bary_point([mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]], w));
            }
        }
    }
    None
}

fn grid_chart(mesh: &Mesh, uvs: &[Vec2], faces: &[usize], share: f64, out: &mut CoarseBuilder) -> bool {
    let verts = chart_vertices(mesh, faces);
    let (mut lo, mut hi) = (uvs[verts[0]], uvs[verts[0]]);
    for &v in &verts {
        lo = lo.inf(&uvs[v]);
        hi = hi.sup(&uvs[v]);
    }
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    if w <= 0.0 || h <= 0.0 {
        return false;
    }
    let nu = ((share * w / h).sqrt().round() as usize).max(2);
    let nv = ((share / nu as f64).round() as usize).max(2);
    if nu * nv >= verts.len() {
        return false;
    }

    let orientation: f64 = faces
        .iter()
        .map(|&f| {
            let [a, b, c] = mesh.faces[f];
            let (e1, e2) = (uvs[b] - uvs[a], uvs[c] - uvs[a]);
            e1.x * e2.y - e1.y * e2.x
        })
        .sum();

    let base = out.vertices.len();
    let mut node = vec![None; nu * nv];
    let mut vertices = Vec::new();
    let mut node_uvs = Vec::new();
    for j in 0..nv {
        for i in 0..nu {
            let uv = Vec2::new(
                lo.x + w * i as f64 / (nu - 1) as f64,
                lo.y + h * j as f64 / (nv - 1) as f64,
            );
            if let Some(p) = surface_at(mesh, uvs, faces, &uv) {
                node[j * nu + i] = Some(base + vertices.len());
                vertices.push(p);
                node_uvs.push(uv);
            }
        }
    }
    if vertices.len() < 3 {
        return false;
    }

    let mut tris = Vec::new();
    for j in 0..nv - 1 {
        for i in 0..nu - 1 {
            let a = node[j * nu + i];
            let b = node[j * nu + i + 1];
            let c = node[(j + 1) * nu + i + 1];
            let d = node[(j + 1) * nu + i];
            let cell: Vec<[usize; 3]> = match (a, b, c, d) {
                (Some(a), Some(b), Some(c), Some(d)) => vec![[a, b, c], [a, c, d]],
                (None, Some(b), Some(c), Some(d)) => vec![[b, c, d]],
                (Some(a), None, Some(c), Some(d)) => vec![[a, c, d]],
                (Some(a), Some(b), None, Some(d)) => vec![[a, b, d]],
                (Some(a), Some(b), Some(c), None) => vec![[a, b, c]],
                _ => vec![],
            };
            tris.extend(cell);
        }
    }
    if tris.is_empty() {
        return false;
    }
    if orientation < 0.0 {
        for t in &mut tris {
            t.swap(1, 2);
        }
    }

    out.vertices.extend(vertices);
    out.uvs.extend(node_uvs);
    let start = out.faces.len();
    out.faces.extend(tris);
    let range = start..out.faces.len();
    for v in verts {
        out.pending.push((range.clone(), v));
    }
    true
}

/// Coarse proxy of a UV-parameterized garment with about `target` vertices.
///
/// Each UV chart is resampled on a regular UV grid spanning its bounding box.
/// Grid nodes that fall on the chart take the fine surface position at their
/// UV; cells with at least three nodes are triangulated.
pub fn downsample(garment: &Mesh, target: usize) -> Result<SamplingCorrespondence> {
    let uvs = garment.uvs.as_ref().ok_or(RefitError::MissingUvs)?;
    garment.validate_indices()?;
    let n = garment.vertex_count();
    let mut out = CoarseBuilder {
        vertices: Vec::new(),
        uvs: Vec::new(),
        faces: Vec::new(),
        pending: Vec::new(),
        direct: Vec::new(),
    };
    let chart_faces = charts(garment);
    for faces in &chart_faces {
        if target >= n {
            keep_chart(garment, uvs, faces, &mut out);
            continue;
        }
        let count = chart_vertices(garment, faces).len();
        let share = target as f64 * count as f64 / n as f64;
        if !grid_chart(garment, uvs, faces, share, &mut out) {
            keep_chart(garment, uvs, faces, &mut out);
        }
    }

    let coarse = Mesh::new(out.vertices, out.faces).with_uvs(out.uvs);
    let mut locations: Vec<Option<FineLocation>> = vec![None; n];
    for (v, loc) in out.direct {
        locations[v] = Some(loc);
    }
    for (range, v) in out.pending {
        let uv = uvs[v];
        let cu = coarse.uvs.as_ref().expect("coarse uvs");
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for f in range {
            let [a, b, c] = coarse.faces[f];
            if let Some(w) = uv_barycentric(&uv, &cu[a], &cu[b], &cu[c]) {
                if w.iter().all(|&x| x >= -UV_INSIDE_TOLERANCE) {
                    let w = w.map(|x| x.max(0.0));
                    let s = w[0] + w[1] + w[2];
                    best = Some((0.0, f, w.map(|x| x / s)));
                    break;
                }
            }
            let (q, w) = closest_point_on_triangle(uv3(&uv), uv3(&cu[a]), uv3(&cu[b]), uv3(&cu[c]));
            let d = (q - uv3(&uv)).norm_squared();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, f, w));
            }
        }
        let (_, face, bary) = best.expect("chart has coarse faces");
        let tri = coarse.faces[face].map(|i| coarse.vertices[i]);
        let offset = garment.vertices[v] - bary_point(tri, bary);
        let detail = detail_frame(tri).try_inverse().map(|m| m * offset).unwrap_or(offset);
        locations[v] = Some(FineLocation { face, bary, detail });
    }

    let locations: Vec<FineLocation> = locations
        .into_iter()
        .enumerate()
        .map(|(v, l)| {
            l.ok_or_else(|| RefitError::InvalidConfig(format!("garment vertex {v} is not referenced by any face")))
        })
        .collect::<Result<_>>()?;
    let mut clusters = vec![Vec::new(); coarse.vertex_count()];
    for (v, loc) in locations.iter().enumerate() {
        let k = (0..3).fold(0, |best, k| if loc.bary[k] > loc.bary[best] { k } else { best });
        clusters[coarse.faces[loc.face][k]].push(v);
    }
    Ok(SamplingCorrespondence {
        coarse,
        locations,
        clusters,
    })
}

/// Fine positions from coarse positions: barycentric interpolation plus the
/// detail offset carried by each coarse triangle's frame.
pub fn upsample(coarse_positions: &[Vec3], corr: &SamplingCorrespondence) -> Result<Vec<Vec3>> {
    if coarse_positions.len() != corr.coarse.vertex_count() {
        return Err(RefitError::CorrespondenceMismatch {
            expected: corr.coarse.vertex_count(),
            actual: coarse_positions.len(),
        });
    }
    Ok(corr
        .locations
        .iter()
        .map(|loc| {
            let tri = corr.coarse.faces[loc.face].map(|i| coarse_positions[i]);
            let frame = detail_frame(tri);
            let detail = if frame.determinant() != 0.0 { frame * loc.detail } else { loc.detail };
            bary_point(tri, loc.bary) + detail
        })
        .collect())
}

/// Outcome of refitting one garment layer.
#[derive(Debug, Clone)]
pub struct GarmentResult {
    pub name: String,
    /// Refitted garment with the source connectivity and UVs.
    pub mesh: Mesh,
    pub weights: Vec<VertexWeights>,
    /// Raw transfer of the source garment before optimization.
    pub initial_positions: Vec<Vec3>,
    pub trace: Vec<TraceRecord>,
    pub final_report: LossReport,
    pub epsilon: f64,
    pub fit_region: FitLabel,
    pub region: Vec<usize>,
    pub source_distances: Vec<f64>,
    pub connections: Vec<LayerPair>,
    pub max_weight_residual: f64,
    pub max_weight_sum_error: f64,
    pub collision_faces: usize,
}

/// Shared, per-layer inputs.
pub struct LayerContext<'a> {
    pub source_skeleton: &'a Skeleton,
    pub target_skeleton: &'a Skeleton,
    pub source_frames: &'a [BoneFrame],
    pub target_frames: &'a [BoneFrame],
    pub source_avatar: &'a Mesh,
    pub skinning: &'a [VertexWeights],
    /// Target avatar together with the refined inner layers.
    pub target_body: &'a CollisionBody,
    /// Source avatar together with the source inner layers.
    pub source_body: &'a CollisionBody,
    /// Source and refined positions of the connected inner layer.
    pub inner: Option<(&'a [Vec3], &'a [Vec3])>,
    pub weights: LossWeights,
}

struct StageSetup {
    coords: BoneLocalCoords,
    cache: DifferentialCache,
    source_distances: Vec<f64>,
    region: Vec<usize>,
    connect: Vec<LayerPair>,
}

fn setup_stage(
    ctx: &LayerContext<'_>,
    mesh: &Mesh,
    label: FitLabel,
    config: &RefitConfig,
    connect_threshold: Option<f64>,
) -> Result<StageSetup> {
    let weights = inherit_weights(&mesh.vertices, ctx.source_avatar, ctx.skinning)?;
    let coords = encode_garment(&mesh.vertices, ctx.source_frames, &weights)?;
    let cache = DifferentialCache::new(mesh)?;
    let source_distances = bone_guided_distances(&mesh.vertices, ctx.source_skeleton, ctx.source_body);
    let region = build_fit_region(label, &coords, ctx.source_frames, ctx.source_skeleton, &config.region_rule)?.vertices;
    let connect = match (connect_threshold, ctx.inner) {
        (Some(threshold), Some((inner_source, _))) => connection_pairs(&mesh.vertices, inner_source, threshold)?,
        _ => Vec::new(),
    };
    Ok(StageSetup {
        coords,
        cache,
        source_distances,
        region,
        connect,
    })
}

/// Pairs each outer vertex with its nearest inner vertex when closer than `threshold`.
pub fn connection_pairs(outer: &[Vec3], inner: &[Vec3], threshold: f64) -> Result<Vec<LayerPair>> {
    let nearest = nearest_vertices(outer, inner)?;
    Ok(nearest
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let d = outer[i] - inner[j];
            let len = d.norm();
            (len < threshold).then(|| LayerPair {
                outer: i,
                inner: j,
                rest_length: len,
                rest_direction: if len > 0.0 { d / len } else { Vec3::zeros() },
            })
        })
        .collect())
}

fn problem<'a>(ctx: &'a LayerContext<'a>, s: &'a StageSetup, coords: &'a BoneLocalCoords) -> RefitProblem<'a> {
    RefitProblem {
        coords,
        frames: ctx.target_frames,
        body: ctx.target_body,
        cache: &s.cache,
        source_distances: &s.source_distances,
        region: &s.region,
        connect: &s.connect,
        anchors: ctx.inner.map(|(_, refined)| refined).unwrap_or(&[]),
        weights: ctx.weights,
    }
}

fn run_single(ctx: &LayerContext<'_>, s: &StageSetup, schedule: &Schedule, stage: &str) -> Result<RunOutput> {
    let init = transfer(&s.coords, ctx.target_frames)?;
    let pairs = bone_guided_init(&init, ctx.target_skeleton, ctx.target_body, &s.source_distances);
    run(&problem(ctx, s, &s.coords), schedule, stage, ResidualSet::for_coords(&s.coords), pairs)
}

/// Refits one garment layer at a single resolution or coarse-to-fine.
pub fn refit_layer(
    ctx: &LayerContext<'_>,
    name: &str,
    garment: &Mesh,
    label: FitLabel,
    connected: bool,
    config: &RefitConfig,
) -> Result<GarmentResult> {
    let threshold = connected.then(|| config.connect_factor * garment.mean_edge_length());
    let fine = setup_stage(ctx, garment, label, config, threshold)?;
    let initial_positions = transfer(&fine.coords, ctx.target_frames)?;
    let coarse_to_fine = config.resolution == Resolution::CoarseToFine && garment.uvs.is_some();

    let (out, trace, fine_coords) = if coarse_to_fine {
        let corr = downsample(garment, config.coarse_target_size(garment.vertex_count()))?;
        let coarse = setup_stage(ctx, &corr.coarse, label, config, threshold)?;
        let coarse_out = run_single(ctx, &coarse, &config.coarse_schedule(), "coarse")?;
        let upsampled = upsample(&coarse_out.positions, &corr)?;
        let coords = encode_garment(&upsampled, ctx.target_frames, &fine.coords.vertex_weights())?;
        let schedule = config.fine_schedule();
        let pairs = update_pairs(&upsampled, ctx.target_body, schedule.knn, &fine.source_distances);
        let fine_out = run(&problem(ctx, &fine, &coords), &schedule, "fine", ResidualSet::for_coords(&coords), pairs)?;
        let mut trace = coarse_out.trace;
        trace.extend(fine_out.trace.iter().cloned());
        let mut out = fine_out;
        out.max_weight_residual = out.max_weight_residual.max(coarse_out.max_weight_residual);
        out.max_weight_sum_error = out.max_weight_sum_error.max(coarse_out.max_weight_sum_error);
        (out, trace, coords)
    } else {
        let out = run_single(ctx, &fine, &config.single_schedule(), "single")?;
        let trace = out.trace.clone();
        (out, trace, fine.coords.clone())
    };
    debug_assert_eq!(fine_coords.vertex_count(), garment.vertex_count());

    Ok(GarmentResult {
        name: name.to_string(),
        mesh: garment.with_positions(out.positions),
        weights: out.weights,
        initial_positions,
        trace,
        final_report: out.final_report,
        epsilon: ctx.weights.epsilon,
        fit_region: label,
        region: fine.region,
        source_distances: fine.source_distances,
        connections: fine.connect,
        max_weight_residual: out.max_weight_residual,
        max_weight_sum_error: out.max_weight_sum_error,
        collision_faces: ctx.target_body.face_count(),
    })
}

/// Refits every layer of `scene` from the innermost outwards. Each layer
/// collides with the target avatar and all refined layers inside it.
pub fn run_multilayer(scene: &Scene, config: &RefitConfig) -> Result<Vec<GarmentResult>> {
    scene.validate()?;
    config.validate()?;
    let source_frames = scene.source_skeleton.frames()?;
    let target_frames = scene.target_skeleton.frames()?;
    let weights = config.resolved_weights(&scene.target_avatar);
    let mut results: Vec<GarmentResult> = Vec::new();
    for (n, layer) in scene.garments.iter().enumerate() {
        let source_body = CollisionBody::from_parts(
            std::iter::once(&scene.source_avatar).chain(scene.garments[..n].iter().map(|g| &g.mesh)),
        )?;
        let target_body =
            CollisionBody::from_parts(std::iter::once(&scene.target_avatar).chain(results.iter().map(|r| &r.mesh)))?;
        let inner = (layer.connected && n > 0)
            .then(|| (scene.garments[n - 1].mesh.vertices.as_slice(), results[n - 1].mesh.vertices.as_slice()));
        let ctx = LayerContext {
            source_skeleton: &scene.source_skeleton,
            target_skeleton: &scene.target_skeleton,
            source_frames: &source_frames,
            target_frames: &target_frames,
            source_avatar: &scene.source_avatar,
            skinning: &scene.source_skinning,
            target_body: &target_body,
            source_body: &source_body,
            inner,
            weights,
        };
        let label = layer.fit_region.unwrap_or(config.fit_region);
        results.push(refit_layer(&ctx, &layer.name, &layer.mesh, label, inner.is_some(), config)?);
    }
    Ok(results)
}

/// Refits the first garment of `scene`.
pub fn run_coarse_to_fine(scene: &Scene, config: &RefitConfig) -> Result<GarmentResult> {
    let single = Scene {
        garments: scene.garments[..1.min(scene.garments.len())].to_vec(),
        ..scene.clone()
    };
    Ok(run_multilayer(&single, config)?.remove(0))
}

/// Independent refits of every frame; a failing frame does not stop the others.
pub fn run_sequence(frames: &[Scene], config: &RefitConfig) -> Vec<Result<Vec<GarmentResult>>> {
    frames.iter().map(|scene| run_multilayer(scene, config)).collect()
}

/// Loss of both parameterizations at one logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningCheckpoint {
    pub iteration: usize,
    pub bone_local_loss: f64,
    pub global_loss: f64,
}

/// Paired bone-local and global-offset runs from the same initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub iterations: usize,
    /// IQR of `r / median(r)` over bone-local displacements.
    pub bone_local_spread: f64,
    pub global_spread: f64,
    pub checkpoints: Vec<ConditioningCheckpoint>,
    pub bone_local_trace: Vec<TraceRecord>,
    pub global_trace: Vec<TraceRecord>,
}

/// Refits the first garment of `scene` at full resolution twice, once with
/// bone-local residuals and once with world-space offsets, sharing the
/// initialization, contact pairs and schedule (`config.single`).
pub fn bench_conditioning(scene: &Scene, config: &RefitConfig) -> Result<ConditioningReport> {
    scene.validate()?;
    config.validate()?;
    let source_frames = scene.source_skeleton.frames()?;
    let target_frames = scene.target_skeleton.frames()?;
    let layer = &scene.garments[0];
    let source_body = CollisionBody::new(scene.source_avatar.clone())?;
    let target_body = CollisionBody::new(scene.target_avatar.clone())?;
    let ctx = LayerContext {
        source_skeleton: &scene.source_skeleton,
        target_skeleton: &scene.target_skeleton,
        source_frames: &source_frames,
        target_frames: &target_frames,
        source_avatar: &scene.source_avatar,
        skinning: &scene.source_skinning,
        target_body: &target_body,
        source_body: &source_body,
        inner: None,
        weights: config.resolved_weights(&scene.target_avatar),
    };
    let label = layer.fit_region.unwrap_or(config.fit_region);
    let s = setup_stage(&ctx, &layer.mesh, label, config, None)?;
    let schedule = config.single_schedule();
    let init = transfer(&s.coords, ctx.target_frames)?;
    let pairs = bone_guided_init(&init, ctx.target_skeleton, ctx.target_body, &s.source_distances);
    let p = problem(&ctx, &s, &s.coords);
    let local = run(&p, &schedule, "bone-local", ResidualSet::for_coords(&s.coords), pairs.clone())?;
    let global = benchmark_global_offsets(&p, &schedule, &init, pairs)?;
    let checkpoints = local
        .trace
        .iter()
        .zip(&global.trace)
        .map(|(a, b)| ConditioningCheckpoint {
            iteration: a.iteration,
            bone_local_loss: a.report.total,
            global_loss: b.report.total,
        })
        .collect();
    Ok(ConditioningReport {
        iterations: schedule.iterations,
        bone_local_spread: displacement_spread(&init, &local.positions),
        global_spread: global.spread,
        checkpoints,
        bone_local_trace: local.trace,
        global_trace: global.trace,
    })
}
