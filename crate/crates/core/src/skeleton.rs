//! Bone hierarchies and per-bone orthonormal frames.
//!
//! The root frame takes its z-axis from the root bone direction and its
//! x-axis from a crotch-reference vector orthogonalized against it. Every
//! child inherits the parent's x-axis by Gram-Schmidt against its own bone
//! direction; when the parent x-axis is (nearly) parallel to the child bone,
//! the parent z-axis is used instead, signed so it points away from the
//! parent x-axis.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{RefitError, Result};
use crate::geometry::Vec3;

/// Below this norm the Gram-Schmidt residual is treated as degenerate.
pub const FRAME_FALLBACK_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    /// Head joint position.
    pub head: Vec3,
    /// Head-to-tail vector; its norm is the bone length.
    pub direction: Vec3,
}

impl Bone {
    pub fn length(&self) -> f64 {
        self.direction.norm()
    }

    pub fn tail(&self) -> Vec3 {
        self.head + self.direction
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    /// Topologically sorted: parents precede children.
    pub bones: Vec<Bone>,
    /// World-space vector fixing the root x-axis.
    pub crotch_reference: Vec3,
}

impl Skeleton {
    pub fn new(bones: Vec<Bone>, crotch_reference: Vec3) -> Result<Self> {
        let skeleton = Self {
            bones,
            crotch_reference,
        };
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bones.is_empty() {
            return Err(RefitError::InvalidSkeleton("no bones".into()));
        }
        let mut roots = 0;
        for (i, bone) in self.bones.iter().enumerate() {
            match bone.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(RefitError::InvalidSkeleton(format!(
                        "bone `{}` (index {i}) has parent index {p}; parents must precede children",
                        bone.name
                    )))
                }
                Some(_) => {}
            }
            if !(bone.length() > 0.0) {
                return Err(RefitError::InvalidSkeleton(format!(
                    "bone `{}` has non-positive length",
                    bone.name
                )));
            }
        }
        if roots != 1 {
            return Err(RefitError::InvalidSkeleton(format!(
                "expected exactly one root bone, found {roots}"
            )));
        }
        if self.bones[0].parent.is_some() {
            return Err(RefitError::InvalidSkeleton("bone 0 must be the root".into()));
        }
        Ok(())
    }

    pub fn root_index(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    pub fn require_bone(&self, name: &str) -> Result<usize> {
        self.bone_index(name)
            .ok_or_else(|| RefitError::MissingBone(name.to_string()))
    }

    pub fn frames(&self) -> Result<Vec<BoneFrame>> {
        build_frames(self, self.crotch_reference)
    }

    /// Checks that `other` has the same bone count and names, index by index.
    pub fn check_correspondence(&self, other: &Skeleton) -> Result<()> {
        if self.len() != other.len() {
            return Err(RefitError::BoneCountMismatch {
                source_bones: self.len(),
                target_bones: other.len(),
            });
        }
        for (index, (a, b)) in self.bones.iter().zip(&other.bones).enumerate() {
            if a.name != b.name || a.parent != b.parent {
                return Err(RefitError::BoneNameMismatch {
                    index,
                    source_name: a.name.clone(),
                    target_name: b.name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Applies `f` to every head and tail, recomputing directions.
    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> Skeleton {
        let bones = self
            .bones
            .iter()
            .map(|b| {
                let head = f(b.head);
                Bone {
                    head,
                    direction: f(b.tail()) - head,
                    ..b.clone()
                }
            })
            .collect();
        Skeleton {
            bones,
            crotch_reference: self.crotch_reference,
        }
    }
}

/// Orthonormal right-handed frame attached to a bone head, scaled by the bone
/// length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneFrame {
    /// Columns are the x, y and z axes.
    pub axes: Matrix3<f64>,
    pub origin: Vec3,
    pub scale: f64,
}

impl BoneFrame {
    pub fn from_axes(x: Vec3, y: Vec3, z: Vec3, origin: Vec3, scale: f64) -> Self {
        Self {
            axes: Matrix3::from_columns(&[x, y, z]),
            origin,
            scale,
        }
    }

    pub fn x(&self) -> Vec3 {
        self.axes.column(0).into()
    }

    pub fn y(&self) -> Vec3 {
        self.axes.column(1).into()
    }

    pub fn z(&self) -> Vec3 {
        self.axes.column(2).into()
    }

    /// World point to dimensionless bone-local coordinates.
    pub fn map(&self, g: &Vec3) -> Vec3 {
        self.axes.tr_mul(&(g - self.origin)) / self.scale
    }

    /// Bone-local coordinates back to a world point.
    pub fn reconstruct(&self, local: &Vec3) -> Vec3 {
        self.origin + self.axes * local * self.scale
    }

    /// Largest deviation of `axesᵀ·axes` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.axes.transpose() * self.axes - Matrix3::identity()).abs().max()
    }
}

/// Root frame: z along the root bone, x from the crotch reference.
pub fn root_frame(bone: &Bone, crotch_reference: Vec3) -> Result<BoneFrame> {
    let z = bone.direction / bone.length();
    let c = crotch_reference.try_normalize(0.0).ok_or(RefitError::RootFrameUndefined)?;
    let x_raw = c - z * c.dot(&z);
    if x_raw.norm() < FRAME_FALLBACK_THRESHOLD {
        return Err(RefitError::RootFrameUndefined);
    }
    let x = x_raw.normalize();
    let y = z.cross(&x);
    Ok(BoneFrame::from_axes(x, y, z, bone.head, bone.length()))
}

/// Child frame propagated from its parent's frame.
pub fn child_frame(parent: &BoneFrame, head: Vec3, direction: Vec3) -> BoneFrame {
    let length = direction.norm();
    let z = direction / length;
    let xp = parent.x();
    let x_raw = xp - z * xp.dot(&z);
    let x = if x_raw.norm() >= FRAME_FALLBACK_THRESHOLD {
        x_raw.normalize()
    } else {
        let d = -xp.dot(&z);
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        let fallback = parent.z() * sign;
        // the parent z-axis is only orthogonal to z up to the threshold
        (fallback - z * fallback.dot(&z)).normalize()
    };
    let y = z.cross(&x);
    BoneFrame::from_axes(x, y, z, head, length)
}

/// Frames for every bone, in skeleton order.
pub fn build_frames(skeleton: &Skeleton, crotch_reference: Vec3) -> Result<Vec<BoneFrame>> {
    skeleton.validate()?;
    let mut frames: Vec<BoneFrame> = Vec::with_capacity(skeleton.len());
    for bone in &skeleton.bones {
        let frame = match bone.parent {
            None => root_frame(bone, crotch_reference)?,
            Some(p) => child_frame(&frames[p], bone.head, bone.direction),
        };
        frames.push(frame);
    }
    Ok(frames)
}
