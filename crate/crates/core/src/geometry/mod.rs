//! Triangle meshes, discrete differential operators and point/ray queries.

pub mod differential;
pub mod mesh;
pub mod query;

pub use differential::{
    boundary_curvature_cosines, cotangent_weights, dihedral_angle, dihedral_angles,
    laplacian_coordinates, normalize_laplacians, CotangentEdge, DifferentialCache,
    NormalizedLaplacians,
};
pub use mesh::{Edge, Mesh, Topology};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
