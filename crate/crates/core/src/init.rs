//! Initialization: blend weights inherited from the nearest body vertex, and
//! transfer of source bone-local coordinates onto the target skeleton.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::bone_local::{prune_and_normalize, BoneLocalCoords, VertexWeights};
use crate::error::{RefitError, Result};
use crate::geometry::{Mesh, Vec3};
use crate::skeleton::BoneFrame;

/// Body vertex count above which nearest-vertex queries use a k-d tree.
pub const BRUTE_FORCE_LIMIT: usize = 50_000;

/// Index of the nearest body vertex for each query point. Exact ties go to
/// the lowest body index.
pub fn nearest_vertices(points: &[Vec3], body: &[Vec3]) -> Result<Vec<usize>> {
    if body.is_empty() {
        return Err(RefitError::EmptyMesh("body"));
    }
    if body.len() <= BRUTE_FORCE_LIMIT {
        return Ok(points
            .iter()
            .map(|p| {
                let mut best = (f64::INFINITY, 0);
                for (i, q) in body.iter().enumerate() {
                    let d = (p - q).norm_squared();
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            })
            .collect());
    }
    let entries: Vec<[f64; 3]> = body.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = ImmutableKdTree::new_from_slice(&entries)
        .map_err(|e| RefitError::InvalidConfig(format!("k-d tree construction failed: {e:?}")))?;
    Ok(points
        .iter()
        .map(|p| {
            tree.query(&[p.x, p.y, p.z])
                .nearest_one::<SquaredEuclidean<f64>>()
                .execute()
                .item as usize
        })
        .collect())
}

/// Copies each garment vertex's weights from its nearest body vertex, pruned
/// and renormalized.
pub fn inherit_weights(
    garment: &[Vec3],
    body: &Mesh,
    skinning: &[VertexWeights],
) -> Result<Vec<VertexWeights>> {
    if body.vertices.is_empty() {
        return Err(RefitError::EmptyMesh("body"));
    }
    if skinning.len() != body.vertex_count() {
        return Err(RefitError::LayoutMismatch {
            expected: body.vertex_count(),
            actual: skinning.len(),
        });
    }
    let nearest = nearest_vertices(garment, &body.vertices)?;
    nearest
        .into_iter()
        .enumerate()
        .map(|(vertex, b)| {
            prune_and_normalize(&skinning[b]).ok_or(RefitError::ZeroWeights { vertex })
        })
        .collect()
}

/// Decodes source-frame local coordinates in the target frames.
pub fn transfer(coords: &BoneLocalCoords, target_frames: &[BoneFrame]) -> Result<Vec<Vec3>> {
    let max_bone = coords.bones.iter().copied().max().unwrap_or(0);
    if max_bone >= target_frames.len() {
        return Err(RefitError::BoneCountMismatch {
            source_bones: max_bone + 1,
            target_bones: target_frames.len(),
        });
    }
    coords.decode(target_frames)
}

/// [`transfer`] materialized with the source garment's connectivity and UVs.
pub fn transfer_mesh(
    source_garment: &Mesh,
    coords: &BoneLocalCoords,
    target_frames: &[BoneFrame],
) -> Result<Mesh> {
    Ok(source_garment.with_positions(transfer(coords, target_frames)?))
}
