//! Refitting objective: contact, shape preservation and residual
//! regularization terms with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::contact::{signed_distance, ContactPair};
use crate::error::{RefitError, Result};
use crate::geometry::differential::{
    dihedral_angle_with_gradient, laplacian_coordinates, turning_cosine_with_gradient, DifferentialCache,
};
use crate::geometry::{Mesh, Vec3};
use crate::optimizer::ResidualSet;

/// Margin as a fraction of the target avatar's bounding-box diagonal.
pub const EPSILON_DIAGONAL_FRACTION: f64 = 0.002;

/// Below this inter-layer distance the connection gradient uses the source direction.
pub const CONNECT_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu_t: f64,
    pub mu_l: f64,
    pub mu_w: f64,
    pub mu_c: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            mu_t: 10.0,
            mu_l: 0.5,
            mu_w: 0.01,
            mu_c: 100.0,
            epsilon: EPSILON_DIAGONAL_FRACTION,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    /// Default weights with the margin scaled to `avatar`.
    pub fn for_avatar(avatar: &Mesh) -> Self {
        Self {
            epsilon: epsilon_for(avatar),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda),
            ("mu_t", self.mu_t),
            ("mu_l", self.mu_l),
            ("mu_w", self.mu_w),
            ("mu_c", self.mu_c),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RefitError::InvalidConfig(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(RefitError::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(RefitError::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

pub fn epsilon_for(avatar: &Mesh) -> f64 {
    EPSILON_DIAGONAL_FRACTION * avatar.bbox_diagonal()
}

/// Inter-layer correspondence between an outer-layer vertex and an inner-layer vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPair {
    pub outer: usize,
    pub inner: usize,
    pub rest_length: f64,
    /// Unit direction inner -> outer on the source garments.
    pub rest_direction: Vec3,
}

/// `Σ ω [max(0, ε − d)]²`.
pub fn l_sep(pairs: &[ContactPair], positions: &[Vec3], epsilon: f64, grad: &mut [Vec3]) -> f64 {
    let mut value = 0.0;
    for p in pairs {
        let g = &positions[p.garment_vertex];
        let h = epsilon - signed_distance(p, g);
        if h > 0.0 {
            value += p.area_weight * h * h;
            grad[p.garment_vertex] -= p.normal * (2.0 * p.area_weight * h);
        }
    }
    value
}

/// `Σ_{g∈F} (d^t − d^s)²`. `pairs` must hold one pair per vertex, in vertex order.
pub fn l_tight(pairs: &[ContactPair], positions: &[Vec3], region: &[usize], grad: &mut [Vec3]) -> Result<f64> {
    let mut value = 0.0;
    for &v in region {
        let p = pairs.get(v).ok_or(RefitError::UnknownVertex {
            vertex: v,
            count: pairs.len(),
        })?;
        debug_assert_eq!(p.garment_vertex, v);
        let r = signed_distance(p, &positions[v]) - p.source_distance;
        value += r * r;
        grad[v] += p.normal * (2.0 * r);
    }
    Ok(value)
}

/// `Σ_i ||δ̃(g_i^t) − δ̃(g_i^s)||²` with cotangent weights from the source.
pub fn l_lap(cache: &DifferentialCache, positions: &[Vec3], grad: &mut [Vec3]) -> f64 {
    let delta = laplacian_coordinates(cache.vertex_count, &cache.cot_edges, positions);
    let norm = delta.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
    let rest = &cache.laplacians.values;
    if norm == 0.0 {
        return rest.iter().map(|d| d.norm_squared()).sum();
    }
    let unit: Vec<Vec3> = delta.iter().map(|d| d / norm).collect();
    let mut value = 0.0;
    let mut g_unit = Vec::with_capacity(unit.len());
    for (u, r) in unit.iter().zip(rest) {
        let diff = u - r;
        value += diff.norm_squared();
        g_unit.push(diff * 2.0);
    }
    let proj: f64 = unit.iter().zip(&g_unit).map(|(u, g)| u.dot(g)).sum();
    let g_delta: Vec<Vec3> = unit.iter().zip(&g_unit).map(|(u, g)| (g - u * proj) / norm).collect();
    for e in &cache.cot_edges {
        let d = (g_delta[e.i] - g_delta[e.j]) * e.weight;
        grad[e.j] += d;
        grad[e.i] -= d;
    }
    value
}

/// `Σ ω_e (θ^t − θ^s)²`. Returns the value and the number of skipped degenerate stencils.
pub fn l_bend(cache: &DifferentialCache, positions: &[Vec3], grad: &mut [Vec3]) -> (f64, usize) {
    let mut value = 0.0;
    let mut skipped = 0;
    for e in &cache.bend_edges {
        let s = e.stencil;
        let Some((theta, dtheta)) =
            dihedral_angle_with_gradient([positions[s[0]], positions[s[1]], positions[s[2]], positions[s[3]]])
        else {
            skipped += 1;
            continue;
        };
        let r = theta - e.rest_angle;
        value += e.weight * r * r;
        let k = 2.0 * e.weight * r;
        for (idx, d) in s.iter().zip(dtheta) {
            grad[*idx] += d * k;
        }
    }
    (value, skipped)
}

/// `Σ ω_i (ê_i·ê_{i+1} − rest)²` along every boundary loop.
pub fn l_curv(cache: &DifferentialCache, positions: &[Vec3], grad: &mut [Vec3]) -> (f64, usize) {
    let mut value = 0.0;
    let mut skipped = 0;
    for t in &cache.curvature_terms {
        let s = t.stencil;
        let Some((c, dc)) = turning_cosine_with_gradient([positions[s[0]], positions[s[1]], positions[s[2]]]) else {
            skipped += 1;
            continue;
        };
        let r = c - t.rest_cosine;
        value += t.weight * r * r;
        let k = 2.0 * t.weight * r;
        for (idx, d) in s.iter().zip(dc) {
            grad[*idx] += d * k;
        }
    }
    (value, skipped)
}

/// `Σ (ℓ^t − ℓ^s)²` with `ℓ^t = ||g_outer − g_inner||`.
pub fn l_connect(
    pairs: &[LayerPair],
    outer: &[Vec3],
    inner: &[Vec3],
    grad_outer: &mut [Vec3],
    mut grad_inner: Option<&mut [Vec3]>,
) -> f64 {
    let mut value = 0.0;
    for p in pairs {
        let d = outer[p.outer] - inner[p.inner];
        let len = d.norm();
        let r = len - p.rest_length;
        value += r * r;
        let dir = if len < CONNECT_GUARD { p.rest_direction } else { d / len };
        let g = dir * (2.0 * r);
        grad_outer[p.outer] += g;
        if let Some(gi) = grad_inner.as_deref_mut() {
            gi[p.inner] -= g;
        }
    }
    value
}

/// `Σ Δz²` over all (vertex, bone) entries.
pub fn l_dz(residuals: &ResidualSet, grad: &mut [f64]) -> f64 {
    let mut value = 0.0;
    for e in 0..residuals.len() {
        let z = residuals.values[4 * e + 2];
        value += z * z;
        grad[4 * e + 2] += 2.0 * z;
    }
    value
}

/// `Σ Δw²` on the constrained residuals `Δw = γ tanh(Δŵ)`.
pub fn l_dw(residuals: &ResidualSet, gamma: f64, grad: &mut [f64]) -> f64 {
    let mut value = 0.0;
    for e in 0..residuals.len() {
        let t = residuals.values[4 * e + 3].tanh();
        let w = gamma * t;
        value += w * w;
        grad[4 * e + 3] += 2.0 * w * gamma * (1.0 - t * t);
    }
    value
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub sep: f64,
    pub tight: f64,
    pub lap: f64,
    pub bend: f64,
    pub curv: f64,
    pub dz: f64,
    pub dw: f64,
    pub connect: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: TermValues,
    /// Norm of each unweighted term's gradient.
    pub grad_norms: TermValues,
    /// Pairs with `d < 0`.
    pub penetrating: usize,
    pub min_distance: f64,
    pub skipped_bend: usize,
    pub skipped_curv: usize,
}

/// Composite `λ(sep + μ_t tight + μ_c connect) + μ_l lap + bend + curv + dz + μ_w dw`.
pub fn compose(t: &TermValues, w: &LossWeights) -> f64 {
    w.lambda * (t.sep + w.mu_t * t.tight + w.mu_c * t.connect) + w.mu_l * t.lap + t.bend + t.curv + t.dz + w.mu_w * t.dw
}

/// Frozen per-evaluation inputs besides positions and residuals.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub cache: &'a DifferentialCache,
    pub pairs: &'a [ContactPair],
    pub region: &'a [usize],
    pub connect: &'a [LayerPair],
    /// Inner-layer positions referenced by `connect`.
    pub anchors: &'a [Vec3],
}

pub struct Evaluation {
    pub report: LossReport,
    pub position_grad: Vec<Vec3>,
    /// Gradient of the regularizers with respect to the residual slots.
    pub residual_grad: Vec<f64>,
}

fn norm3(g: &[Vec3]) -> f64 {
    g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

fn norm1(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn accumulate(total: &mut [Vec3], part: &[Vec3], scale: f64) {
    for (t, p) in total.iter_mut().zip(part) {
        *t += p * scale;
    }
}

/// Evaluates every term and the weighted gradient with respect to positions
/// and, when given, residuals.
pub fn evaluate(
    inputs: &LossInputs<'_>,
    weights: &LossWeights,
    positions: &[Vec3],
    residuals: Option<&ResidualSet>,
) -> Result<Evaluation> {
    let n = positions.len();
    let mut terms = TermValues::default();
    let mut norms = TermValues::default();
    let mut total_grad = vec![Vec3::zeros(); n];
    let mut scratch = vec![Vec3::zeros(); n];

    let mut run = |scale: f64, f: &mut dyn FnMut(&mut [Vec3]) -> Result<f64>| -> Result<(f64, f64)> {
        scratch.iter_mut().for_each(|g| *g = Vec3::zeros());
        let v = f(&mut scratch)?;
        accumulate(&mut total_grad, &scratch, scale);
        Ok((v, norm3(&scratch)))
    };

    (terms.sep, norms.sep) = run(weights.lambda, &mut |g| Ok(l_sep(inputs.pairs, positions, weights.epsilon, g)))?;
    (terms.tight, norms.tight) = run(weights.lambda * weights.mu_t, &mut |g| {
        l_tight(inputs.pairs, positions, inputs.region, g)
    })?;
    (terms.connect, norms.connect) = run(weights.lambda * weights.mu_c, &mut |g| {
        Ok(l_connect(inputs.connect, positions, inputs.anchors, g, None))
    })?;
    (terms.lap, norms.lap) = run(weights.mu_l, &mut |g| Ok(l_lap(inputs.cache, positions, g)))?;
    let mut skipped_bend = 0;
    (terms.bend, norms.bend) = run(1.0, &mut |g| {
        let (v, s) = l_bend(inputs.cache, positions, g);
        skipped_bend = s;
        Ok(v)
    })?;
    let mut skipped_curv = 0;
    (terms.curv, norms.curv) = run(1.0, &mut |g| {
        let (v, s) = l_curv(inputs.cache, positions, g);
        skipped_curv = s;
        Ok(v)
    })?;

    let mut residual_grad = Vec::new();
    if let Some(res) = residuals {
        residual_grad = vec![0.0; res.values.len()];
        let mut part = vec![0.0; res.values.len()];
        terms.dz = l_dz(res, &mut part);
        norms.dz = norm1(&part);
        residual_grad.copy_from_slice(&part);
        part.iter_mut().for_each(|x| *x = 0.0);
        terms.dw = l_dw(res, weights.gamma, &mut part);
        norms.dw = norm1(&part);
        for (r, p) in residual_grad.iter_mut().zip(&part) {
            *r += weights.mu_w * p;
        }
    }

    let mut penetrating = 0;
    let mut min_distance = f64::INFINITY;
    for p in inputs.pairs {
        let d = signed_distance(p, &positions[p.garment_vertex]);
        if d < 0.0 {
            penetrating += 1;
        }
        min_distance = min_distance.min(d);
    }
    if inputs.pairs.is_empty() {
        min_distance = 0.0;
    }

    Ok(Evaluation {
        report: LossReport {
            total: compose(&terms, weights),
            terms,
            grad_norms: norms,
            penetrating,
            min_distance,
            skipped_bend,
            skipped_curv,
        },
        position_grad: total_grad,
        residual_grad,
    })
}
