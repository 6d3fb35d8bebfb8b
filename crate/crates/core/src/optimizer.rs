//! Residual parameterization on top of the bone-local encoding, decoding to
//! world space with its backward pass, and the AMSGrad-style optimization loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bone_local::{BoneLocalCoords, VertexWeights};
use crate::contact::{update_pairs, CollisionBody, ContactPair, DEFAULT_KNN};
use crate::error::{RefitError, Result};
use crate::geometry::differential::DifferentialCache;
use crate::geometry::Vec3;
use crate::losses::{evaluate, LayerPair, LossInputs, LossReport, LossWeights};
use crate::skeleton::BoneFrame;

/// Smallest accepted `Σ_b (w_b + Δw_b)` per vertex.
pub const MIN_WEIGHT_DENOMINATOR: f64 = 1e-6;

/// Residual slots laid out as `[Δx, Δy, Δz, Δŵ]` per (vertex, bone) entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub values: Vec<f64>,
}

impl ResidualSet {
    pub fn zeros(entries: usize) -> Self {
        Self {
            values: vec![0.0; 4 * entries],
        }
    }

    pub fn for_coords(coords: &BoneLocalCoords) -> Self {
        Self::zeros(coords.entry_count())
    }

    /// Number of (vertex, bone) entries.
    pub fn len(&self) -> usize {
        self.values.len() / 4
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coord(&self, entry: usize) -> Vec3 {
        Vec3::new(
            self.values[4 * entry],
            self.values[4 * entry + 1],
            self.values[4 * entry + 2],
        )
    }

    pub fn raw_weight(&self, entry: usize) -> f64 {
        self.values[4 * entry + 3]
    }

    pub fn check_layout(&self, coords: &BoneLocalCoords) -> Result<()> {
        if self.values.len() != 4 * coords.entry_count() {
            return Err(RefitError::LayoutMismatch {
                expected: 4 * coords.entry_count(),
                actual: self.values.len(),
            });
        }
        Ok(())
    }
}

/// `γ tanh(Δŵ)`.
pub fn constrain_weight_residual(raw: f64, gamma: f64) -> f64 {
    gamma * raw.tanh()
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub positions: Vec<Vec3>,
    /// Normalized target weight per entry.
    pub weights: Vec<f64>,
    /// Per-entry reconstruction `P_b^{-1}(c + Δ)`.
    pub reconstructions: Vec<Vec3>,
    /// Per-vertex `Σ_b (w_b + Δw_b)`.
    pub denominators: Vec<f64>,
}

impl Decoded {
    pub fn vertex_weights(&self, coords: &BoneLocalCoords) -> Vec<VertexWeights> {
        (0..coords.vertex_count())
            .map(|v| coords.entries(v).map(|e| (coords.bones[e], self.weights[e])).collect())
            .collect()
    }
}

/// `g = Σ_b w_b^t P_b^{-1}(c_b + Δ_b)` with `w^t` the renormalized perturbed weights.
pub fn decode(
    coords: &BoneLocalCoords,
    residuals: &ResidualSet,
    frames: &[BoneFrame],
    gamma: f64,
) -> Result<Decoded> {
    residuals.check_layout(coords)?;
    let n = coords.vertex_count();
    let m = coords.entry_count();
    let mut out = Decoded {
        positions: Vec::with_capacity(n),
        weights: vec![0.0; m],
        reconstructions: Vec::with_capacity(m),
        denominators: Vec::with_capacity(n),
    };
    for v in 0..n {
        let mut denom = 0.0;
        for e in coords.entries(v) {
            let u = coords.weights[e] + constrain_weight_residual(residuals.raw_weight(e), gamma);
            out.weights[e] = u;
            denom += u;
            let frame = &frames[coords.bones[e]];
            out.reconstructions.push(frame.reconstruct(&(coords.coords[e] + residuals.coord(e))));
        }
        if denom < MIN_WEIGHT_DENOMINATOR {
            return Err(RefitError::WeightDenominator {
                vertex: v,
                denominator: denom,
            });
        }
        let mut g = Vec3::zeros();
        for e in coords.entries(v) {
            out.weights[e] /= denom;
            g += out.reconstructions[e] * out.weights[e];
        }
        out.positions.push(g);
        out.denominators.push(denom);
    }
    Ok(out)
}

/// Chains a position gradient through [`decode`] and adds it to `out`.
pub fn decode_backward(
    coords: &BoneLocalCoords,
    decoded: &Decoded,
    residuals: &ResidualSet,
    frames: &[BoneFrame],
    gamma: f64,
    position_grad: &[Vec3],
    out: &mut [f64],
) {
    for v in 0..coords.vertex_count() {
        let gbar = position_grad[v];
        let g = decoded.positions[v];
        let denom = decoded.denominators[v];
        for e in coords.entries(v) {
            let frame = &frames[coords.bones[e]];
            let local = frame.axes.transpose() * gbar * (decoded.weights[e] * frame.scale);
            out[4 * e] += local.x;
            out[4 * e + 1] += local.y;
            out[4 * e + 2] += local.z;
            let du = (decoded.reconstructions[e] - g).dot(&gbar) / denom;
            let t = residuals.raw_weight(e).tanh();
            out[4 * e + 3] += du * gamma * (1.0 - t * t);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay and the running maximum of the second moment.
#[derive(Debug, Clone)]
pub struct AmsGrad {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
    pub step_count: u64,
}

impl AmsGrad {
    pub fn new(slots: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; slots],
            v: vec![0.0; slots],
            v_max: vec![0.0; slots],
            step_count: 0,
        }
    }

    /// Effective denominator of `slot` at the current step.
    pub fn denominator(&self, slot: usize) -> f64 {
        let bc2 = 1.0 - self.config.beta2.powi(self.step_count as i32);
        self.v_max[slot].sqrt() / bc2.sqrt() + self.config.eps
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if let Some(slot) = grads.iter().position(|g| !g.is_finite()) {
            return Err(RefitError::NonFiniteGradient { slot });
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(RefitError::LayoutMismatch {
                expected: self.m.len(),
                actual: grads.len().min(params.len()),
            });
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2_sqrt = (1.0 - c.beta2.powi(t)).sqrt();
        let step_size = c.learning_rate / bc1;
        for i in 0..params.len() {
            let g = grads[i];
            params[i] *= 1.0 - c.learning_rate * c.weight_decay;
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            self.v_max[i] = self.v_max[i].max(self.v[i]);
            let denom = self.v_max[i].sqrt() / bc2_sqrt + c.eps;
            params[i] -= step_size * self.m[i] / denom;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub iterations: usize,
    pub pair_update_every: usize,
    pub log_every: usize,
    pub knn: usize,
    pub adam: AdamConfig,
    /// Records zero wall time so traces compare bitwise.
    pub deterministic: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: 8000,
            pair_update_every: 2000,
            log_every: 100,
            knn: DEFAULT_KNN,
            adam: AdamConfig::default(),
            deterministic: false,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.log_every == 0 {
            return Err(RefitError::InvalidConfig("log_every must be positive".into()));
        }
        if self.knn == 0 {
            return Err(RefitError::InvalidConfig("knn must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(RefitError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: String,
    pub iteration: usize,
    #[serde(flatten)]
    pub report: LossReport,
    pub wall_time: f64,
}

/// Fixed data of one refitting problem.
#[derive(Clone, Copy)]
pub struct RefitProblem<'a> {
    pub coords: &'a BoneLocalCoords,
    pub frames: &'a [BoneFrame],
    pub body: &'a CollisionBody,
    pub cache: &'a DifferentialCache,
    pub source_distances: &'a [f64],
    pub region: &'a [usize],
    pub connect: &'a [LayerPair],
    pub anchors: &'a [Vec3],
    pub weights: LossWeights,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub positions: Vec<Vec3>,
    pub weights: Vec<VertexWeights>,
    pub residuals: ResidualSet,
    pub pairs: Vec<ContactPair>,
    pub trace: Vec<TraceRecord>,
    pub final_report: LossReport,
    /// Largest `|Δw|` seen at any iteration.
    pub max_weight_residual: f64,
    /// Largest `|Σ_b w_b^t − 1|` seen at any iteration.
    pub max_weight_sum_error: f64,
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(deterministic: bool) -> Self {
        Self {
            start: Instant::now(),
            enabled: !deterministic,
        }
    }

    fn elapsed(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

/// Optimizes bone-local residuals from `initial`, starting with `pairs`.
pub fn run(
    problem: &RefitProblem<'_>,
    schedule: &Schedule,
    stage: &str,
    initial: ResidualSet,
    mut pairs: Vec<ContactPair>,
) -> Result<RunOutput> {
    schedule.validate()?;
    problem.weights.validate()?;
    initial.check_layout(problem.coords)?;
    let gamma = problem.weights.gamma;
    let clock = Clock::new(schedule.deterministic);
    let mut residuals = initial;
    let mut opt = AmsGrad::new(residuals.values.len(), schedule.adam);
    let mut trace = Vec::new();
    let mut max_weight_residual: f64 = 0.0;
    let mut max_weight_sum_error: f64 = 0.0;
    let mut last_good: Option<Vec<Vec3>> = None;

    for it in 0..=schedule.iterations {
        let dec = decode(problem.coords, &residuals, problem.frames, gamma)?;
        if it > 0 && schedule.pair_update_every > 0 && it % schedule.pair_update_every == 0 {
            pairs = update_pairs(&dec.positions, problem.body, schedule.knn, problem.source_distances);
        }
        let inputs = LossInputs {
            cache: problem.cache,
            pairs: &pairs,
            region: problem.region,
            connect: problem.connect,
            anchors: problem.anchors,
        };
        let eval = evaluate(&inputs, &problem.weights, &dec.positions, Some(&residuals))?;
        if !eval.report.total.is_finite() {
            return Err(RefitError::NonFiniteLoss {
                iteration: it,
                last_good_positions: Box::new(last_good.unwrap_or(dec.positions)),
            });
        }
        for e in 0..residuals.len() {
            max_weight_residual = max_weight_residual.max(constrain_weight_residual(residuals.raw_weight(e), gamma).abs());
        }
        for v in 0..problem.coords.vertex_count() {
            let s: f64 = problem.coords.entries(v).map(|e| dec.weights[e]).sum();
            max_weight_sum_error = max_weight_sum_error.max((s - 1.0).abs());
        }
        if it % schedule.log_every == 0 || it == schedule.iterations {
            trace.push(TraceRecord {
                stage: stage.to_string(),
                iteration: it,
                report: eval.report,
                wall_time: clock.elapsed(),
            });
        }
        if it == schedule.iterations {
            return Ok(RunOutput {
                weights: dec.vertex_weights(problem.coords),
                positions: dec.positions,
                residuals,
                pairs,
                trace,
                final_report: eval.report,
                max_weight_residual,
                max_weight_sum_error,
            });
        }
        let mut grad = eval.residual_grad;
        decode_backward(problem.coords, &dec, &residuals, problem.frames, gamma, &eval.position_grad, &mut grad);
        opt.step(&mut residuals.values, &grad)?;
        last_good = Some(dec.positions);
    }
    unreachable!("loop returns on the last iteration")
}

/// Result of optimizing world-space offsets directly.
#[derive(Debug, Clone)]
pub struct GlobalRunOutput {
    pub positions: Vec<Vec3>,
    pub trace: Vec<TraceRecord>,
    pub final_report: LossReport,
    pub spread: f64,
}

/// Same objective and optimizer, parameterized by per-vertex offsets `g = ĝ + Δg`.
pub fn benchmark_global_offsets(
    problem: &RefitProblem<'_>,
    schedule: &Schedule,
    initial_positions: &[Vec3],
    mut pairs: Vec<ContactPair>,
) -> Result<GlobalRunOutput> {
    schedule.validate()?;
    problem.weights.validate()?;
    let n = initial_positions.len();
    let clock = Clock::new(schedule.deterministic);
    let mut offsets = vec![0.0; 3 * n];
    let mut opt = AmsGrad::new(3 * n, schedule.adam);
    let mut trace = Vec::new();
    let mut last_good: Option<Vec<Vec3>> = None;
    for it in 0..=schedule.iterations {
        let positions: Vec<Vec3> = initial_positions
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vec3::new(offsets[3 * i], offsets[3 * i + 1], offsets[3 * i + 2]))
            .collect();
        if it > 0 && schedule.pair_update_every > 0 && it % schedule.pair_update_every == 0 {
            pairs = update_pairs(&positions, problem.body, schedule.knn, problem.source_distances);
        }
        let inputs = LossInputs {
            cache: problem.cache,
            pairs: &pairs,
            region: problem.region,
            connect: problem.connect,
            anchors: problem.anchors,
        };
        let eval = evaluate(&inputs, &problem.weights, &positions, None)?;
        if !eval.report.total.is_finite() {
            return Err(RefitError::NonFiniteLoss {
                iteration: it,
                last_good_positions: Box::new(last_good.unwrap_or(positions)),
            });
        }
        if it % schedule.log_every == 0 || it == schedule.iterations {
            trace.push(TraceRecord {
                stage: "global".to_string(),
                iteration: it,
                report: eval.report,
                wall_time: clock.elapsed(),
            });
        }
        if it == schedule.iterations {
            let spread = displacement_spread(initial_positions, &positions);
            return Ok(GlobalRunOutput {
                positions,
                trace,
                final_report: eval.report,
                spread,
            });
        }
        let grad: Vec<f64> = eval.position_grad.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
        opt.step(&mut offsets, &grad)?;
        last_good = Some(positions);
    }
    unreachable!("loop returns on the last iteration")
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interquartile range of `r / median(r)` with `r = ||after − before||`.
/// Zero when the median displacement is zero.
pub fn displacement_spread(before: &[Vec3], after: &[Vec3]) -> f64 {
    let mut r: Vec<f64> = before.iter().zip(after).map(|(a, b)| (b - a).norm()).collect();
    r.sort_by(f64::total_cmp);
    let median = quantile(&r, 0.5);
    if median <= 0.0 {
        return 0.0;
    }
    (quantile(&r, 0.75) - quantile(&r, 0.25)) / median
}
