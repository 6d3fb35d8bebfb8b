//! Discrete differential quantities: cotangent Laplacian, signed dihedral
//! angles across interior edges and boundary turning cosines.

use super::mesh::{Mesh, Topology};
use super::Vec3;
use crate::error::{RefitError, Result};

/// Symmetric cotangent coefficient of the undirected edge `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CotangentEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// `cot` of the angle at `apex` in triangle `(apex, p, q)`. `None` if the
/// triangle is degenerate.
fn cot_at(apex: Vec3, p: Vec3, q: Vec3) -> Option<f64> {
    let u = p - apex;
    let v = q - apex;
    let cross = u.cross(&v).norm();
    let scale = u.norm() * v.norm();
    if cross <= 1e-14 * scale || scale == 0.0 {
        None
    } else {
        Some(u.dot(&v) / cross)
    }
}

/// `c_ij = ½(cot α + cot β)` for interior edges and `½ cot α` on the boundary,
/// clamped from below at zero.
pub fn cotangent_weights(mesh: &Mesh, topo: &Topology) -> Result<Vec<CotangentEdge>> {
    let v = &mesh.vertices;
    topo.edges
        .iter()
        .map(|e| {
            let sides = if e.interior { 2 } else { 1 };
            let mut sum = 0.0;
            for k in 0..sides {
                let o = e.opposite[k];
                sum += cot_at(v[o], v[e.a], v[e.b])
                    .ok_or(RefitError::DegenerateFace { face: e.faces[k] })?;
            }
            Ok(CotangentEdge {
                i: e.a,
                j: e.b,
                weight: (0.5 * sum).max(0.0),
            })
        })
        .collect()
}

/// `δ(g_i) = Σ_j c_ij (g_j − g_i)` over the 1-ring.
pub fn laplacian_coordinates(
    vertex_count: usize,
    cot: &[CotangentEdge],
    positions: &[Vec3],
) -> Vec<Vec3> {
    let mut delta = vec![Vec3::zeros(); vertex_count];
    for e in cot {
        let d = (positions[e.j] - positions[e.i]) * e.weight;
        delta[e.i] += d;
        delta[e.j] -= d;
    }
    delta
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacians {
    pub values: Vec<Vec3>,
    /// `(Σ_k ||δ_k||²)^½` of the input field.
    pub norm: f64,
    /// Set when the input field was identically zero and left unscaled.
    pub degenerate: bool,
}

/// Scales the field to unit total squared norm.
pub fn normalize_laplacians(deltas: &[Vec3]) -> NormalizedLaplacians {
    let norm = deltas.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return NormalizedLaplacians {
            values: deltas.to_vec(),
            norm,
            degenerate: true,
        };
    }
    NormalizedLaplacians {
        values: deltas.iter().map(|d| d / norm).collect(),
        norm,
        degenerate: false,
    }
}

/// Signed dihedral angle across edge `p0 -> p1` between faces
/// `(p0, p1, p2)` and `(p1, p0, p3)`. Zero when flat, positive on convex
/// ridges. `None` if either face is degenerate.
pub fn dihedral_angle(p: [Vec3; 4]) -> Option<f64> {
    let a = p[1] - p[0];
    let n1 = a.cross(&(p[2] - p[0]));
    let n2 = (p[3] - p[0]).cross(&a);
    let (l1, l2, la) = (n1.norm(), n2.norm(), a.norm());
    if l1 == 0.0 || l2 == 0.0 || la == 0.0 {
        return None;
    }
    let (n1, n2, e) = (n1 / l1, n2 / l2, a / la);
    Some(n1.cross(&n2).dot(&e).atan2(n1.dot(&n2)))
}

/// [`dihedral_angle`] together with its gradient with respect to the four
/// vertices.
pub fn dihedral_angle_with_gradient(p: [Vec3; 4]) -> Option<(f64, [Vec3; 4])> {
    let a = p[1] - p[0];
    let b = p[2] - p[0];
    let c = p[3] - p[0];
    let big_n1 = a.cross(&b);
    let big_n2 = c.cross(&a);
    let (l1, l2, la) = (big_n1.norm(), big_n2.norm(), a.norm());
    let tiny = 1e-300;
    if l1 <= tiny || l2 <= tiny || la <= tiny {
        return None;
    }
    let n1 = big_n1 / l1;
    let n2 = big_n2 / l2;
    let e = a / la;
    let s = n1.cross(&n2).dot(&e);
    let co = n1.dot(&n2);
    let theta = s.atan2(co);

    let r2 = s * s + co * co;
    let ds = co / r2;
    let dc = -s / r2;
    // s = det(n1, n2, e), c = n1·n2
    let g_n1 = n2.cross(&e) * ds + n2 * dc;
    let g_n2 = e.cross(&n1) * ds + n1 * dc;
    let g_e = n1.cross(&n2) * ds;
    // back through normalization
    let g_big_n1 = (g_n1 - n1 * n1.dot(&g_n1)) / l1;
    let g_big_n2 = (g_n2 - n2 * n2.dot(&g_n2)) / l2;
    let mut g_a = (g_e - e * e.dot(&g_e)) / la;
    // N1 = a × b, N2 = c × a
    g_a += b.cross(&g_big_n1) + g_big_n2.cross(&c);
    let g_b = g_big_n1.cross(&a);
    let g_c = a.cross(&g_big_n2);
    Some((theta, [-(g_a + g_b + g_c), g_a, g_b, g_c]))
}

/// Per interior edge (in topology order) signed dihedral angle.
pub fn dihedral_angles(mesh: &Mesh, topo: &Topology) -> Result<Vec<f64>> {
    let v = &mesh.vertices;
    topo.interior_edges()
        .map(|e| {
            dihedral_angle([v[e.a], v[e.b], v[e.opposite[0]], v[e.opposite[1]]])
                .ok_or(RefitError::DegenerateFace { face: e.faces[0] })
        })
        .collect()
}

/// Cosine of the turning angle at each boundary vertex, loop by loop: entry
/// `k` of a loop is `ê_in · ê_out` at `loop[k]`.
pub fn boundary_curvature_cosines(mesh: &Mesh, topo: &Topology) -> Result<Vec<Vec<f64>>> {
    let v = &mesh.vertices;
    topo.boundary_loops
        .iter()
        .map(|lp| {
            let n = lp.len();
            (0..n)
                .map(|k| {
                    let (prev, cur, next) = (lp[(k + n - 1) % n], lp[k], lp[(k + 1) % n]);
                    let e_in = v[cur] - v[prev];
                    let e_out = v[next] - v[cur];
                    if e_in.norm() == 0.0 {
                        return Err(RefitError::ZeroLengthBoundaryEdge { a: prev, b: cur });
                    }
                    if e_out.norm() == 0.0 {
                        return Err(RefitError::ZeroLengthBoundaryEdge { a: cur, b: next });
                    }
                    Ok(e_in.normalize().dot(&e_out.normalize()))
                })
                .collect()
        })
        .collect()
}

/// Turning cosine at `p[1]` for the polyline `p[0] -> p[1] -> p[2]`, with its
/// gradient. `None` on a zero-length edge.
pub fn turning_cosine_with_gradient(p: [Vec3; 3]) -> Option<(f64, [Vec3; 3])> {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[1];
    let (l1, l2) = (e1.norm(), e2.norm());
    if l1 == 0.0 || l2 == 0.0 {
        return None;
    }
    let (u1, u2) = (e1 / l1, e2 / l2);
    let c = u1.dot(&u2);
    let g1 = (u2 - u1 * c) / l1;
    let g2 = (u1 - u2 * c) / l2;
    Some((c, [-g1, g1 - g2, g2]))
}

/// Interior edge with its bending stencil and source-side reference values.
#[derive(Debug, Clone, Copy)]
pub struct BendEdge {
    /// Edge `a, b`, then the opposite vertices of its two faces.
    pub stencil: [usize; 4],
    pub rest_angle: f64,
    pub weight: f64,
}

/// Three consecutive boundary vertices with the source turning cosine.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureTerm {
    pub stencil: [usize; 3],
    pub rest_cosine: f64,
    pub weight: f64,
}

/// Everything the shape-preservation losses need from the source garment.
#[derive(Debug, Clone)]
pub struct DifferentialCache {
    pub vertex_count: usize,
    pub topology: Topology,
    pub cot_edges: Vec<CotangentEdge>,
    pub laplacians: NormalizedLaplacians,
    pub bend_edges: Vec<BendEdge>,
    pub curvature_terms: Vec<CurvatureTerm>,
    pub face_areas: Vec<f64>,
    pub face_normals: Vec<Vec3>,
}

impl DifferentialCache {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let topology = Topology::build(mesh)?;
        for f in 0..mesh.face_count() {
            if mesh.face_area(f) <= 0.0 {
                return Err(RefitError::DegenerateFace { face: f });
            }
        }
        let cot_edges = cotangent_weights(mesh, &topology)?;
        let deltas = laplacian_coordinates(mesh.vertex_count(), &cot_edges, &mesh.vertices);
        let laplacians = normalize_laplacians(&deltas);

        let v = &mesh.vertices;
        let angles = dihedral_angles(mesh, &topology)?;
        let interior: Vec<_> = topology.interior_edges().collect();
        let total_len: f64 = interior.iter().map(|e| (v[e.b] - v[e.a]).norm()).sum();
        let bend_edges = interior
            .iter()
            .zip(&angles)
            .map(|(e, &rest_angle)| BendEdge {
                stencil: [e.a, e.b, e.opposite[0], e.opposite[1]],
                rest_angle,
                weight: if total_len > 0.0 {
                    (v[e.b] - v[e.a]).norm() / total_len
                } else {
                    0.0
                },
            })
            .collect();

        let cosines = boundary_curvature_cosines(mesh, &topology)?;
        let mut curvature_terms = Vec::new();
        let boundary_len: f64 = topology
            .boundary_loops
            .iter()
            .flat_map(|lp| (0..lp.len()).map(move |k| (lp[k], lp[(k + 1) % lp.len()])))
            .map(|(a, b)| (v[b] - v[a]).norm())
            .sum();
        for (lp, cos) in topology.boundary_loops.iter().zip(&cosines) {
            let n = lp.len();
            for k in 0..n {
                // term k pairs edge lp[k]->lp[k+1] with its successor
                let stencil = [lp[k], lp[(k + 1) % n], lp[(k + 2) % n]];
                curvature_terms.push(CurvatureTerm {
                    stencil,
                    rest_cosine: cos[(k + 1) % n],
                    weight: (v[stencil[1]] - v[stencil[0]]).norm() / boundary_len,
                });
            }
        }

        let face_areas = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
        let face_normals = (0..mesh.face_count()).map(|f| mesh.face_normal(f)).collect();

        Ok(Self {
            vertex_count: mesh.vertex_count(),
            topology,
            cot_edges,
            laplacians,
            bend_edges,
            curvature_terms,
            face_areas,
            face_normals,
        })
    }
}
