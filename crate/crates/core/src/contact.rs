//! Garment-body contact pairs, signed distances and fit-control regions.

use std::num::NonZero;
use std::str::FromStr;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::bone_local::BoneLocalCoords;
use crate::error::{RefitError, Result};
use crate::geometry::query::{closest_point_on_segment, closest_point_on_triangle, line_triangle_intersection};
use crate::geometry::{Mesh, Vec3};
use crate::skeleton::{BoneFrame, Skeleton};

/// Default number of face-centroid candidates per nearest-face query.
pub const DEFAULT_KNN: usize = 8;

/// Garment vertex associated with a point on the collision body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPair {
    pub garment_vertex: usize,
    pub body_point: Vec3,
    pub body_face: usize,
    /// Outward unit normal of `body_face`.
    pub normal: Vec3,
    /// Face area normalized over all pairs.
    pub area_weight: f64,
    /// Signed distance of the source garment vertex to the source body.
    pub source_distance: f64,
}

/// `n·(g − a)`: positive outside, negative when penetrating.
pub fn signed_distance(pair: &ContactPair, g: &Vec3) -> f64 {
    pair.normal.dot(&(g - pair.body_point))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub point: Vec3,
    pub distance_sq: f64,
}

/// Static triangle mesh used for contact queries, with a k-d tree over face
/// centroids.
pub struct CollisionBody {
    pub mesh: Mesh,
    pub normals: Vec<Vec3>,
    pub areas: Vec<f64>,
    centroids: Vec<Vec3>,
    radii: Vec<f64>,
    tree: ImmutableKdTree<f64, 3>,
}

impl std::fmt::Debug for CollisionBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollisionBody")
            .field("vertices", &self.mesh.vertex_count())
            .field("faces", &self.mesh.face_count())
            .finish()
    }
}

impl CollisionBody {
    pub fn new(mesh: Mesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(RefitError::EmptyMesh("collision body"));
        }
        mesh.validate_indices()?;
        let normals = (0..mesh.face_count()).map(|f| mesh.face_normal(f)).collect();
        let areas = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
        let centroids: Vec<Vec3> = (0..mesh.face_count()).map(|f| mesh.face_centroid(f)).collect();
        let radii = mesh
            .faces
            .iter()
            .zip(&centroids)
            .map(|(tri, c)| {
                tri.iter()
                    .map(|&v| (mesh.vertices[v] - c).norm())
                    .fold(0.0, f64::max)
            })
            .collect();
        let entries: Vec<[f64; 3]> = centroids.iter().map(|c| [c.x, c.y, c.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&entries)
            .map_err(|e| RefitError::InvalidConfig(format!("k-d tree construction failed: {e:?}")))?;
        Ok(Self {
            mesh,
            normals,
            areas,
            centroids,
            radii,
            tree,
        })
    }

    /// Union of several meshes as one body.
    pub fn from_parts<'a>(parts: impl IntoIterator<Item = &'a Mesh>) -> Result<Self> {
        Self::new(Mesh::concat(parts))
    }

    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }

    fn closest_on_face(&self, face: usize, p: &Vec3) -> SurfacePoint {
        let [a, b, c] = self.mesh.faces[face];
        let v = &self.mesh.vertices;
        let (point, _) = closest_point_on_triangle(*p, v[a], v[b], v[c]);
        SurfacePoint {
            face,
            point,
            distance_sq: (p - point).norm_squared(),
        }
    }

    fn best_of(&self, p: &Vec3, faces: impl Iterator<Item = usize>) -> SurfacePoint {
        let mut best: Option<SurfacePoint> = None;
        for f in faces {
            let s = self.closest_on_face(f, p);
            let better = match &best {
                None => true,
                Some(b) => s.distance_sq < b.distance_sq || (s.distance_sq == b.distance_sq && s.face < b.face),
            };
            if better {
                best = Some(s);
            }
        }
        best.expect("collision body has faces")
    }

    /// Exact closest surface point over all faces; ties go to the lowest face index.
    pub fn nearest_exhaustive(&self, p: &Vec3) -> SurfacePoint {
        self.best_of(p, 0..self.face_count())
    }

    /// Closest point among the faces whose centroids are the `k` nearest to
    /// `p`. `k` is clamped to the face count.
    pub fn nearest_knn(&self, p: &Vec3, k: usize) -> SurfacePoint {
        let k = k.clamp(1, self.face_count());
        if k == self.face_count() {
            return self.nearest_exhaustive(p);
        }
        let hits = self
            .tree
            .query(&[p.x, p.y, p.z])
            .nearest_n::<SquaredEuclidean<f64>>(NonZero::new(k).expect("k >= 1"))
            .execute();
        let mut faces: Vec<usize> = hits.iter().map(|h| h.item as usize).collect();
        faces.sort_unstable();
        self.best_of(p, faces.into_iter())
    }

    /// Closest intersection (by |t|) of the line through `origin` along `dir`
    /// with a face whose normal has a positive component along `dir`.
    pub fn cast_line(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let d = dir.normalize();
        let v = &self.mesh.vertices;
        let mut best: Option<(f64, usize)> = None;
        for (f, tri) in self.mesh.faces.iter().enumerate() {
            if self.normals[f].dot(&d) <= 0.0 {
                continue;
            }
            let to_c = self.centroids[f] - origin;
            if to_c.cross(&d).norm() > self.radii[f] * (1.0 + 1e-9) {
                continue;
            }
            if let Some(t) = line_triangle_intersection(*origin, d, v[tri[0]], v[tri[1]], v[tri[2]]) {
                if best.is_none_or(|(bt, _)| t.abs() < bt.abs()) {
                    best = Some((t, f));
                }
            }
        }
        best.map(|(t, face)| {
            let point = origin + d * t;
            SurfacePoint {
                face,
                point,
                distance_sq: t * t,
            }
        })
    }
}

/// Builds pairs from one surface point per garment vertex, normalizing area
/// weights over all pairs.
pub fn pairs_from_hits(
    body: &CollisionBody,
    hits: &[SurfacePoint],
    source_distances: &[f64],
) -> Vec<ContactPair> {
    let total: f64 = hits.iter().map(|h| body.areas[h.face]).sum();
    hits.iter()
        .enumerate()
        .map(|(v, h)| ContactPair {
            garment_vertex: v,
            body_point: h.point,
            body_face: h.face,
            normal: body.normals[h.face],
            area_weight: if total > 0.0 {
                body.areas[h.face] / total
            } else {
                1.0 / hits.len() as f64
            },
            source_distance: source_distances.get(v).copied().unwrap_or(0.0),
        })
        .collect()
}

/// Bone-guided surface point for a single vertex: cast a line through the
/// vertex orthogonal to its nearest bone and keep the closest outward-facing
/// hit, falling back to the plain nearest point.
pub fn bone_guided_hit(position: &Vec3, skeleton: &Skeleton, body: &CollisionBody) -> SurfacePoint {
    let mut nearest: Option<(f64, usize, Vec3)> = None;
    for (b, bone) in skeleton.bones.iter().enumerate() {
        let q = closest_point_on_segment(*position, bone.head, bone.tail());
        let d = (position - q).norm_squared();
        if nearest.is_none_or(|(bd, _, _)| d < bd) {
            nearest = Some((d, b, q));
        }
    }
    let Some((_, b, q)) = nearest else {
        return body.nearest_exhaustive(position);
    };
    let axis = skeleton.bones[b].direction.normalize();
    let offset = position - q;
    let outward = offset - axis * offset.dot(&axis);
    let scale = skeleton.bones[b].length().max(offset.norm());
    if outward.norm() <= 1e-9 * scale {
        return body.nearest_exhaustive(position);
    }
    match body.cast_line(position, &outward) {
        Some(hit) => hit,
        None => body.nearest_exhaustive(position),
    }
}

pub fn bone_guided_init(
    positions: &[Vec3],
    skeleton: &Skeleton,
    body: &CollisionBody,
    source_distances: &[f64],
) -> Vec<ContactPair> {
    let hits: Vec<SurfacePoint> = positions
        .iter()
        .map(|p| bone_guided_hit(p, skeleton, body))
        .collect();
    pairs_from_hits(body, &hits, source_distances)
}

/// Nearest-face pairs from the `k` nearest face centroids.
pub fn update_pairs(
    positions: &[Vec3],
    body: &CollisionBody,
    k: usize,
    source_distances: &[f64],
) -> Vec<ContactPair> {
    let hits: Vec<SurfacePoint> = positions.iter().map(|p| body.nearest_knn(p, k)).collect();
    pairs_from_hits(body, &hits, source_distances)
}

/// Signed distances of `positions` against `body` via bone-guided association.
pub fn bone_guided_distances(positions: &[Vec3], skeleton: &Skeleton, body: &CollisionBody) -> Vec<f64> {
    bone_guided_init(positions, skeleton, body, &[])
        .iter()
        .map(|pair| signed_distance(pair, &positions[pair.garment_vertex]))
        .collect()
}

/// Count of vertices with `d < -threshold` and the minimum signed distance,
/// measured against nearest faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenetrationStats {
    pub vertices: usize,
    pub below_epsilon: usize,
    pub below_three_epsilon: usize,
    pub min_distance: f64,
}

impl PenetrationStats {
    pub fn fraction_below_epsilon(&self) -> f64 {
        self.below_epsilon as f64 / self.vertices.max(1) as f64
    }

    pub fn fraction_below_three_epsilon(&self) -> f64 {
        self.below_three_epsilon as f64 / self.vertices.max(1) as f64
    }
}

pub fn penetration_stats(positions: &[Vec3], body: &CollisionBody, epsilon: f64, k: usize) -> PenetrationStats {
    let mut stats = PenetrationStats {
        vertices: positions.len(),
        below_epsilon: 0,
        below_three_epsilon: 0,
        min_distance: f64::INFINITY,
    };
    for p in positions {
        let hit = body.nearest_knn(p, k);
        let d = body.normals[hit.face].dot(&(p - hit.point));
        stats.min_distance = stats.min_distance.min(d);
        if d < -epsilon {
            stats.below_epsilon += 1;
        }
        if d < -3.0 * epsilon {
            stats.below_three_epsilon += 1;
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitLabel {
    Waist,
    UpperTrunk,
    UpperTrunkAndWaist,
    All,
}

impl FromStr for FitLabel {
    type Err = RefitError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "waist" => Ok(FitLabel::Waist),
            "upper-trunk" => Ok(FitLabel::UpperTrunk),
            "upper-trunk-and-waist" | "upper-trunk-waist" => Ok(FitLabel::UpperTrunkAndWaist),
            "all" => Ok(FitLabel::All),
            other => Err(RefitError::InvalidConfig(format!("unknown fit region `{other}`"))),
        }
    }
}

impl std::fmt::Display for FitLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitLabel::Waist => "waist",
            FitLabel::UpperTrunk => "upper-trunk",
            FitLabel::UpperTrunkAndWaist => "upper-trunk-and-waist",
            FitLabel::All => "all",
        })
    }
}

/// Thresholds selecting region membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRegionRule {
    /// Accepted band of the local z-coordinate.
    pub z_band: (f64, f64),
    /// Minimum summed weight on the region's bones.
    pub dominance: f64,
}

impl Default for FitRegionRule {
    fn default() -> Self {
        Self {
            z_band: (0.0, 1.0),
            dominance: 0.5,
        }
    }
}

/// Bones counted as the torso chain for the upper-trunk region.
pub const TORSO_CHAIN: &[&str] = &["hips", "spine", "chest", "upper_chest"];

#[derive(Debug, Clone, PartialEq)]
pub struct FitRegion {
    pub label: FitLabel,
    /// Sorted garment vertex indices.
    pub vertices: Vec<usize>,
}

impl FitRegion {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        match self.vertices.iter().find(|&&v| v >= vertex_count) {
            Some(&vertex) => Err(RefitError::UnknownVertex {
                vertex,
                count: vertex_count,
            }),
            None => Ok(()),
        }
    }
}

pub fn build_fit_region(
    label: FitLabel,
    coords: &BoneLocalCoords,
    frames: &[BoneFrame],
    skeleton: &Skeleton,
    rule: &FitRegionRule,
) -> Result<FitRegion> {
    let n = coords.vertex_count();
    if label == FitLabel::All {
        return Ok(FitRegion {
            label,
            vertices: (0..n).collect(),
        });
    }
    let hips = skeleton.require_bone("hips")?;
    let spine = skeleton.require_bone("spine")?;
    let torso: Vec<usize> = TORSO_CHAIN.iter().filter_map(|name| skeleton.bone_index(name)).collect();
    let positions = coords.decode(frames)?;

    let weight_on = |v: usize, set: &[usize]| -> f64 {
        coords
            .entries(v)
            .filter(|&e| set.contains(&coords.bones[e]))
            .map(|e| coords.weights[e])
            .sum()
    };
    let in_band = |frame: &BoneFrame, g: &Vec3| {
        let z = frame.map(g).z;
        z >= rule.z_band.0 && z <= rule.z_band.1
    };
    let waist = |v: usize| in_band(&frames[hips], &positions[v]) && weight_on(v, &[hips, spine]) >= rule.dominance;
    let upper = |v: usize| in_band(&frames[spine], &positions[v]) && weight_on(v, &torso) >= rule.dominance;

    let vertices = (0..n)
        .filter(|&v| match label {
            FitLabel::Waist => waist(v),
            FitLabel::UpperTrunk => upper(v),
            FitLabel::UpperTrunkAndWaist => waist(v) || upper(v),
            FitLabel::All => true,
        })
        .collect();
    Ok(FitRegion { label, vertices })
}
