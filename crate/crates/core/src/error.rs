use std::path::PathBuf;

use crate::geometry::Vec3;

/// Errors produced anywhere in the refitting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum RefitError {
    #[error("face {face} is degenerate (zero area)")]
    DegenerateFace { face: usize },

    #[error("face {face} references vertex {vertex}, but the mesh has {count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        vertex: usize,
        count: usize,
    },

    #[error("edge ({a}, {b}) is shared by {faces} faces")]
    NonManifoldEdge { a: usize, b: usize, faces: usize },

    #[error("edge ({a}, {b}) has inconsistent winding between its two faces")]
    InconsistentWinding { a: usize, b: usize },

    #[error("boundary edge ({a}, {b}) has zero length")]
    ZeroLengthBoundaryEdge { a: usize, b: usize },

    #[error("{0} mesh is empty")]
    EmptyMesh(&'static str),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("crotch reference vector is parallel to the root bone direction")]
    RootFrameUndefined,

    #[error("skeleton is missing required bone `{0}`")]
    MissingBone(String),

    #[error("source skeleton has {source_bones} bones but target has {target_bones}")]
    BoneCountMismatch {
        source_bones: usize,
        target_bones: usize,
    },

    #[error("bone {index} is `{source_name}` in the source skeleton but `{target_name}` in the target")]
    BoneNameMismatch {
        index: usize,
        source_name: String,
        target_name: String,
    },

    #[error("blend weights of vertex {vertex} sum to {sum}, expected 1")]
    WeightSum { vertex: usize, sum: f64 },

    #[error("vertex {vertex} has no nonzero blend weight")]
    ZeroWeights { vertex: usize },

    #[error("weight normalization denominator {denominator} at vertex {vertex} is too small")]
    WeightDenominator { vertex: usize, denominator: f64 },

    #[error("fit region references vertex {vertex}, but the garment has {count} vertices")]
    UnknownVertex { vertex: usize, count: usize },

    #[error("residual layout does not match the bone-local encoding ({expected} entries expected, got {actual})")]
    LayoutMismatch { expected: usize, actual: usize },

    #[error("non-finite gradient at residual slot {slot}")]
    NonFiniteGradient { slot: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        last_good_positions: Box<Vec<Vec3>>,
    },

    #[error("mesh has no texture coordinates")]
    MissingUvs,

    #[error("sampling correspondence was built for {expected} fine vertices, got {actual}")]
    CorrespondenceMismatch { expected: usize, actual: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RefitError {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            RefitError::DegenerateFace { .. } => "degenerate_face",
            RefitError::FaceIndexOutOfRange { .. } => "face_index_out_of_range",
            RefitError::NonManifoldEdge { .. } => "non_manifold_edge",
            RefitError::InconsistentWinding { .. } => "inconsistent_winding",
            RefitError::ZeroLengthBoundaryEdge { .. } => "zero_length_boundary_edge",
            RefitError::EmptyMesh(_) => "empty_mesh",
            RefitError::InvalidSkeleton(_) => "invalid_skeleton",
            RefitError::RootFrameUndefined => "root_frame_undefined",
            RefitError::MissingBone(_) => "missing_bone",
            RefitError::BoneCountMismatch { .. } => "bone_count_mismatch",
            RefitError::BoneNameMismatch { .. } => "bone_name_mismatch",
            RefitError::WeightSum { .. } => "weight_sum",
            RefitError::ZeroWeights { .. } => "zero_weights",
            RefitError::WeightDenominator { .. } => "weight_denominator",
            RefitError::UnknownVertex { .. } => "unknown_vertex",
            RefitError::LayoutMismatch { .. } => "layout_mismatch",
            RefitError::NonFiniteGradient { .. } => "non_finite_gradient",
            RefitError::NonFiniteLoss { .. } => "non_finite_loss",
            RefitError::MissingUvs => "missing_uvs",
            RefitError::CorrespondenceMismatch { .. } => "correspondence_mismatch",
            RefitError::Parse { .. } => "parse",
            RefitError::InvalidConfig(_) => "invalid_config",
            RefitError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, RefitError>;
