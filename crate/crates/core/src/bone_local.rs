//! Bone-local encoding of garment vertices: each vertex is stored as a sparse
//! set of (bone, local coordinates, blend weight) entries and decoded as the
//! weighted blend of per-bone reconstructions.

use crate::error::{RefitError, Result};
use crate::geometry::Vec3;
use crate::skeleton::BoneFrame;

/// Sparse `(bone, weight)` list for one vertex.
pub type VertexWeights = Vec<(usize, f64)>;

/// Entries with weight at or below this are dropped before renormalizing.
pub const WEIGHT_PRUNE_THRESHOLD: f64 = 1e-4;

/// Tolerance on Σw = 1 accepted by [`blend`].
pub const BLEND_WEIGHT_TOLERANCE: f64 = 1e-6;

/// CSR-style storage: entries of vertex `v` are `offsets[v]..offsets[v + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLocalCoords {
    pub offsets: Vec<usize>,
    pub bones: Vec<usize>,
    pub coords: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl BoneLocalCoords {
    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entry_count(&self) -> usize {
        self.bones.len()
    }

    pub fn entries(&self, vertex: usize) -> std::ops::Range<usize> {
        self.offsets[vertex]..self.offsets[vertex + 1]
    }

    /// Per-vertex sparse weights, as stored.
    pub fn vertex_weights(&self) -> Vec<VertexWeights> {
        (0..self.vertex_count())
            .map(|v| {
                self.entries(v)
                    .map(|e| (self.bones[e], self.weights[e]))
                    .collect()
            })
            .collect()
    }

    /// Decodes every vertex with `frames`.
    pub fn decode(&self, frames: &[BoneFrame]) -> Result<Vec<Vec3>> {
        (0..self.vertex_count())
            .map(|v| {
                let r = self.entries(v);
                blend(
                    frames,
                    &self.bones[r.clone()],
                    &self.coords[r.clone()],
                    &self.weights[r],
                )
                .map_err(|e| match e {
                    RefitError::WeightSum { sum, .. } => RefitError::WeightSum { vertex: v, sum },
                    other => other,
                })
            })
            .collect()
    }
}

/// `Σ_b w_b · reconstruct_b(coords_b)` for one vertex.
pub fn blend(frames: &[BoneFrame], bones: &[usize], coords: &[Vec3], weights: &[f64]) -> Result<Vec3> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > BLEND_WEIGHT_TOLERANCE {
        return Err(RefitError::WeightSum { vertex: 0, sum });
    }
    Ok(bones
        .iter()
        .zip(coords)
        .zip(weights)
        .map(|((&b, c), &w)| frames[b].reconstruct(c) * w)
        .sum())
}

/// Drops tiny entries, merges duplicates and rescales to unit sum.
pub fn prune_and_normalize(weights: &[(usize, f64)]) -> Option<VertexWeights> {
    let mut kept: VertexWeights = Vec::with_capacity(weights.len());
    for &(b, w) in weights {
        if w <= WEIGHT_PRUNE_THRESHOLD {
            continue;
        }
        match kept.iter_mut().find(|(kb, _)| *kb == b) {
            Some(entry) => entry.1 += w,
            None => kept.push((b, w)),
        }
    }
    let sum: f64 = kept.iter().map(|(_, w)| w).sum();
    if kept.is_empty() || sum <= 0.0 {
        return None;
    }
    kept.sort_by_key(|(b, _)| *b);
    for entry in &mut kept {
        entry.1 /= sum;
    }
    Some(kept)
}

/// Maps each vertex into the frames of the bones that influence it.
pub fn encode_garment(
    positions: &[Vec3],
    frames: &[BoneFrame],
    weights: &[VertexWeights],
) -> Result<BoneLocalCoords> {
    if positions.len() != weights.len() {
        return Err(RefitError::LayoutMismatch {
            expected: positions.len(),
            actual: weights.len(),
        });
    }
    let mut out = BoneLocalCoords {
        offsets: Vec::with_capacity(positions.len() + 1),
        bones: Vec::new(),
        coords: Vec::new(),
        weights: Vec::new(),
    };
    out.offsets.push(0);
    for (vertex, (g, w)) in positions.iter().zip(weights).enumerate() {
        let nonzero: Vec<(usize, f64)> = w.iter().copied().filter(|&(_, x)| x > 0.0).collect();
        let sum: f64 = nonzero.iter().map(|(_, x)| x).sum();
        if nonzero.is_empty() || sum <= 0.0 {
            return Err(RefitError::ZeroWeights { vertex });
        }
        for (b, x) in nonzero {
            out.bones.push(b);
            out.coords.push(frames[b].map(g));
            out.weights.push(x / sum);
        }
        out.offsets.push(out.bones.len());
    }
    Ok(out)
}
