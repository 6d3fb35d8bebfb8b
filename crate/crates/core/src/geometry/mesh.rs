//! Indexed triangle meshes and their edge topology.

use std::collections::HashMap;

use nalgebra::Vector2;

use super::Vec3;
use crate::error::{RefitError, Result};

/// Indexed triangle mesh. Counter-clockwise faces face outward.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Option<Vec<Vector2<f64>>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            faces,
            uvs: None,
        }
    }

    pub fn with_uvs(mut self, uvs: Vec<Vector2<f64>>) -> Self {
        self.uvs = Some(uvs);
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Checks face indices against the vertex count.
    pub fn validate_indices(&self) -> Result<()> {
        let count = self.vertices.len();
        for (face, tri) in self.faces.iter().enumerate() {
            if let Some(&vertex) = tri.iter().find(|&&v| v >= count) {
                return Err(RefitError::FaceIndexOutOfRange {
                    face,
                    vertex,
                    count,
                });
            }
        }
        if let Some(uvs) = &self.uvs {
            if uvs.len() != count {
                return Err(RefitError::InvalidConfig(format!(
                    "mesh has {} texture coordinates for {} vertices",
                    uvs.len(),
                    count
                )));
            }
        }
        Ok(())
    }

    /// Same connectivity and UVs, new positions.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> Self {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            faces: self.faces.clone(),
            uvs: self.uvs.clone(),
        }
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        face_normal(&self.vertices, self.faces[face])
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let v = &self.vertices;
        0.5 * (v[b] - v[a]).cross(&(v[c] - v[a])).norm()
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Axis-aligned bounding box diagonal length.
    pub fn bbox_diagonal(&self) -> f64 {
        let Some(first) = self.vertices.first() else {
            return 0.0;
        };
        let (lo, hi) = self
            .vertices
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        (hi - lo).norm()
    }

    /// Mean length over all unique edges.
    pub fn mean_edge_length(&self) -> f64 {
        let mut seen = HashMap::new();
        for tri in &self.faces {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                seen.entry((a.min(b), a.max(b)))
                    .or_insert_with(|| (self.vertices[a] - self.vertices[b]).norm());
            }
        }
        if seen.is_empty() {
            0.0
        } else {
            seen.values().sum::<f64>() / seen.len() as f64
        }
    }

    /// Concatenates meshes, offsetting face indices. UVs are dropped unless
    /// every part carries them.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Mesh>) -> Mesh {
        let mut out = Mesh::new(Vec::new(), Vec::new());
        let mut uvs = Some(Vec::new());
        for part in parts {
            let offset = out.vertices.len();
            out.vertices.extend_from_slice(&part.vertices);
            out.faces.extend(
                part.faces
                    .iter()
                    .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
            );
            match (&mut uvs, &part.uvs) {
                (Some(acc), Some(p)) => acc.extend_from_slice(p),
                _ => uvs = None,
            }
        }
        out.uvs = uvs.filter(|u| !u.is_empty());
        out
    }
}

pub fn face_normal(vertices: &[Vec3], [a, b, c]: [usize; 3]) -> Vec3 {
    let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

/// An undirected edge with its one or two incident faces.
///
/// `a -> b` follows the winding of `faces[0]`; for an interior edge the
/// second face traverses `b -> a`. `opposite[k]` is the vertex of
/// `faces[k]` not on the edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub faces: [usize; 2],
    pub opposite: [usize; 2],
    pub interior: bool,
}

/// Edge adjacency and ordered boundary loops of a manifold-with-boundary mesh.
#[derive(Debug, Clone)]
pub struct Topology {
    pub edges: Vec<Edge>,
    pub boundary_loops: Vec<Vec<usize>>,
}

impl Topology {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        mesh.validate_indices()?;
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();

        for (f, tri) in mesh.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b, o) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                match index.get(&key) {
                    None => {
                        index.insert(key, edges.len());
                        edges.push(Edge {
                            a,
                            b,
                            faces: [f, f],
                            opposite: [o, o],
                            interior: false,
                        });
                        counts.push(1);
                    }
                    Some(&e) => {
                        counts[e] += 1;
                        if counts[e] > 2 {
                            return Err(RefitError::NonManifoldEdge {
                                a: key.0,
                                b: key.1,
                                faces: counts[e],
                            });
                        }
                        let edge = &mut edges[e];
                        if edge.a == a {
                            return Err(RefitError::InconsistentWinding { a, b });
                        }
                        edge.faces[1] = f;
                        edge.opposite[1] = o;
                        edge.interior = true;
                    }
                }
            }
        }

        let boundary_loops = extract_boundary_loops(&edges);
        Ok(Self {
            edges,
            boundary_loops,
        })
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.interior)
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| !e.interior).count()
    }
}

/// Walks boundary half-edges in face winding order. Every boundary edge
/// lands in exactly one loop.
fn extract_boundary_loops(edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
    let boundary: Vec<&Edge> = edges.iter().filter(|e| !e.interior).collect();
    for (k, e) in boundary.iter().enumerate() {
        outgoing.entry(e.a).or_default().push(k);
    }
    let mut used = vec![false; boundary.len()];
    let mut loops = Vec::new();
    for start in 0..boundary.len() {
        if used[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut current = start;
        loop {
            used[current] = true;
            let e = boundary[current];
            lp.push(e.a);
            let next = outgoing
                .get(&e.b)
                .and_then(|cands| cands.iter().copied().find(|&c| !used[c]));
            match next {
                Some(n) => current = n,
                None => break,
            }
        }
        loops.push(lp);
    }
    loops
}
