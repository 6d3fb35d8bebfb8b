//! In-memory refitting scene and run configuration.

use serde::{Deserialize, Serialize};

use crate::bone_local::VertexWeights;
use crate::contact::{FitLabel, FitRegionRule};
use crate::error::{RefitError, Result};
use crate::geometry::Mesh;
use crate::losses::LossWeights;
use crate::optimizer::{AdamConfig, Schedule};
use crate::skeleton::Skeleton;

#[derive(Debug, Clone, PartialEq)]
pub struct GarmentLayer {
    pub name: String,
    pub mesh: Mesh,
    /// Overrides the configured fit region for this layer.
    pub fit_region: Option<FitLabel>,
    /// Connected to the previous (inner) layer.
    pub connected: bool,
}

/// Source and target avatars in the same pose with garments dressed on the
/// source, innermost first.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub source_avatar: Mesh,
    pub target_avatar: Mesh,
    pub source_skeleton: Skeleton,
    pub target_skeleton: Skeleton,
    /// Skinning weights of the source avatar vertices.
    pub source_skinning: Vec<VertexWeights>,
    /// Skinning weights of the target avatar vertices, when known.
    pub target_skinning: Option<Vec<VertexWeights>>,
    pub garments: Vec<GarmentLayer>,
}

fn check_skinning(avatar: &Mesh, skinning: &[VertexWeights], bones: usize) -> Result<()> {
    if skinning.len() != avatar.vertex_count() {
        return Err(RefitError::LayoutMismatch {
            expected: avatar.vertex_count(),
            actual: skinning.len(),
        });
    }
    for w in skinning {
        if let Some(&(b, _)) = w.iter().find(|(b, _)| *b >= bones) {
            return Err(RefitError::InvalidSkeleton(format!(
                "skinning references bone index {b} but the skeleton has {bones} bones"
            )));
        }
    }
    Ok(())
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.source_skeleton.validate()?;
        self.target_skeleton.validate()?;
        self.source_skeleton.check_correspondence(&self.target_skeleton)?;
        self.source_avatar.validate_indices()?;
        self.target_avatar.validate_indices()?;
        check_skinning(&self.source_avatar, &self.source_skinning, self.source_skeleton.len())?;
        if let Some(t) = &self.target_skinning {
            check_skinning(&self.target_avatar, t, self.target_skeleton.len())?;
        }
        if self.garments.is_empty() {
            return Err(RefitError::EmptyMesh("garment list"));
        }
        for g in &self.garments {
            if g.mesh.faces.is_empty() {
                return Err(RefitError::EmptyMesh("garment"));
            }
            g.mesh.validate_indices()?;
        }
        Ok(())
    }

    /// The scene going back from target to source, dressed with `garments`.
    pub fn reversed(&self, garments: Vec<GarmentLayer>) -> Result<Scene> {
        let target_skinning = self.target_skinning.clone().ok_or_else(|| {
            RefitError::InvalidConfig("reversing a scene needs target skinning weights".into())
        })?;
        Ok(Scene {
            source_avatar: self.target_avatar.clone(),
            target_avatar: self.source_avatar.clone(),
            source_skeleton: self.target_skeleton.clone(),
            target_skeleton: self.source_skeleton.clone(),
            source_skinning: target_skinning,
            target_skinning: Some(self.source_skinning.clone()),
            garments,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    Single,
    CoarseToFine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefitConfig {
    pub weights: LossWeights,
    /// Absolute penetration margin; derived from the target avatar when absent.
    pub epsilon: Option<f64>,
    pub fit_region: FitLabel,
    pub region_rule: FitRegionRule,
    pub resolution: Resolution,
    pub single: Schedule,
    pub coarse: Schedule,
    pub fine: Schedule,
    pub coarse_min_vertices: usize,
    pub coarse_ratio: usize,
    /// Connection pairs are kept below this multiple of the mean edge length.
    pub connect_factor: f64,
    pub deterministic: bool,
}

impl Default for RefitConfig {
    fn default() -> Self {
        let lr = |learning_rate| AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        };
        Self {
            weights: LossWeights::default(),
            epsilon: None,
            fit_region: FitLabel::Waist,
            region_rule: FitRegionRule::default(),
            resolution: Resolution::CoarseToFine,
            single: Schedule {
                iterations: 8000,
                adam: lr(5e-3),
                ..Schedule::default()
            },
            coarse: Schedule {
                iterations: 6000,
                adam: lr(5e-3),
                ..Schedule::default()
            },
            fine: Schedule {
                iterations: 4000,
                adam: lr(1e-3),
                ..Schedule::default()
            },
            coarse_min_vertices: 1500,
            coarse_ratio: 8,
            connect_factor: 1.5,
            deterministic: false,
        }
    }
}

impl RefitConfig {
    pub fn validate(&self) -> Result<()> {
        let mut w = self.weights;
        if let Some(e) = self.epsilon {
            w.epsilon = e;
        }
        w.validate()?;
        for s in [&self.single, &self.coarse, &self.fine] {
            s.validate()?;
        }
        if self.coarse_ratio == 0 {
            return Err(RefitError::InvalidConfig("coarse_ratio must be positive".into()));
        }
        if !(self.connect_factor > 0.0) {
            return Err(RefitError::InvalidConfig("connect_factor must be positive".into()));
        }
        let (lo, hi) = self.region_rule.z_band;
        if !(lo <= hi) || !(0.0..=1.0).contains(&self.region_rule.dominance) {
            return Err(RefitError::InvalidConfig("invalid fit region rule".into()));
        }
        Ok(())
    }

    pub fn coarse_target_size(&self, fine_count: usize) -> usize {
        self.coarse_min_vertices.max(fine_count / self.coarse_ratio)
    }

    /// Loss weights with the margin resolved against `target_avatar`.
    pub fn resolved_weights(&self, target_avatar: &Mesh) -> LossWeights {
        LossWeights {
            epsilon: self.epsilon.unwrap_or_else(|| crate::losses::epsilon_for(target_avatar)),
            ..self.weights
        }
    }

    fn staged(&self, s: &Schedule) -> Schedule {
        Schedule {
            deterministic: s.deterministic || self.deterministic,
            ..s.clone()
        }
    }

    pub fn single_schedule(&self) -> Schedule {
        self.staged(&self.single)
    }

    pub fn coarse_schedule(&self) -> Schedule {
        self.staged(&self.coarse)
    }

    pub fn fine_schedule(&self) -> Schedule {
        self.staged(&self.fine)
    }
}
