//! Finite-difference checks of every loss term and of the chained residual
//! gradient. Each check builds one random instance (at most 300 vertices)
//! from a seed and returns the worst relative error.

use garment_refit::geometry::differential::DifferentialCache;
use garment_refit::geometry::Vec3;
use garment_refit::losses::{
    evaluate, l_bend, l_connect, l_curv, l_dw, l_dz, l_lap, l_sep, l_tight, LossInputs, LossWeights,
};
use garment_refit::optimizer::{decode, decode_backward, ResidualSet};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 20;
const H: f64 = 1e-4;

/// Smallest magnitude compared relatively; components below it are compared
/// at this absolute scale. The `|f|` part bounds the stencil's roundoff
/// (about `1.5 ε_mach |f| / H`) well below the tolerance.
fn floor(grad_scale: f64, value: f64) -> f64 {
    (1e-6 * grad_scale).max(1e-7 * value.abs()).max(1e-10)
}

/// Fourth-order central difference of `f` at 0.
fn five_point(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(-2.0 * H) - 8.0 * f(-H) + 8.0 * f(H) - f(2.0 * H)) / (12.0 * H)
}

pub fn position_error(x: &[Vec3], grad: &[Vec3], f: &dyn Fn(&[Vec3]) -> f64) -> f64 {
    let scale = grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let floor = floor(scale, f(x));
    let mut p = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        for k in 0..3 {
            let orig = p[i][k];
            let fd = five_point(|t| {
                p[i][k] = orig + t;
                f(&p)
            });
            p[i][k] = orig;
            worst = worst.max(rel_err(grad[i][k], fd, floor));
        }
    }
    worst
}

pub fn slot_error(x: &[f64], grad: &[f64], slots: &[usize], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = floor(scale, f(x));
    let mut p = x.to_vec();
    let mut worst = 0.0f64;
    for &s in slots {
        let orig = p[s];
        let fd = five_point(|t| {
            p[s] = orig + t;
            f(&p)
        });
        p[s] = orig;
        worst = worst.max(rel_err(grad[s], fd, floor));
    }
    worst
}

fn zeros(n: usize) -> Vec<Vec3> {
    vec![Vec3::zeros(); n]
}

fn instance(seed: u64) -> (DifferentialCache, Vec<Vec3>, ChaCha8Rng) {
    let mut r = rng(seed);
    let nx = r.random_range(4..=15);
    let ny = r.random_range(4..=(300 / nx).min(15));
    let mesh = grid(nx, ny, &mut r);
    assert!(mesh.vertex_count() <= 300);
    let cache = DifferentialCache::new(&mesh).unwrap();
    let x = perturb(&mesh.vertices, 0.02, &mut r);
    (cache, x, r)
}

pub fn separation(seed: u64) -> f64 {
    let (_, x, mut r) = instance(seed);
    let pairs = random_pairs(&x, &mut r);
    let eps = SEP_EPSILON;
    let mut g = zeros(x.len());
    l_sep(&pairs, &x, eps, &mut g);
    position_error(&x, &g, &|p| l_sep(&pairs, p, eps, &mut zeros(p.len())))
}

pub fn tightness(seed: u64) -> f64 {
    let (_, x, mut r) = instance(seed);
    let pairs = random_pairs(&x, &mut r);
    let region: Vec<usize> = (0..x.len()).filter(|_| r.random_bool(0.6)).collect();
    let mut g = zeros(x.len());
    l_tight(&pairs, &x, &region, &mut g).unwrap();
    position_error(&x, &g, &|p| l_tight(&pairs, p, &region, &mut zeros(p.len())).unwrap())
}

pub fn laplacian(seed: u64) -> f64 {
    let (cache, x, _) = instance(seed);
    let mut g = zeros(x.len());
    l_lap(&cache, &x, &mut g);
    position_error(&x, &g, &|p| l_lap(&cache, p, &mut zeros(p.len())))
}

pub fn bending(seed: u64) -> f64 {
    let (cache, x, _) = instance(seed);
    let mut g = zeros(x.len());
    let (_, skipped) = l_bend(&cache, &x, &mut g);
    assert_eq!(skipped, 0);
    position_error(&x, &g, &|p| l_bend(&cache, p, &mut zeros(p.len())).0)
}

pub fn curvature(seed: u64) -> f64 {
    let (cache, x, _) = instance(seed);
    let mut g = zeros(x.len());
    let (_, skipped) = l_curv(&cache, &x, &mut g);
    assert_eq!(skipped, 0);
    position_error(&x, &g, &|p| l_curv(&cache, p, &mut zeros(p.len())).0)
}

/// Both the outer-layer and the inner-layer gradient.
pub fn connection(seed: u64) -> f64 {
    let (_, x, mut r) = instance(seed);
    let inner: Vec<Vec3> = x.iter().map(|p| p - Vec3::new(0.0, 0.0, 0.03) + unit(&mut r) * 0.005).collect();
    let pairs = random_layer_pairs(x.len(), inner.len(), &mut r);
    let mut go = zeros(x.len());
    let mut gi = zeros(inner.len());
    l_connect(&pairs, &x, &inner, &mut go, Some(&mut gi));
    let outer = position_error(&x, &go, &|p| l_connect(&pairs, p, &inner, &mut zeros(p.len()), None));
    let inner = position_error(&inner, &gi, &|p| l_connect(&pairs, &x, p, &mut zeros(x.len()), None));
    outer.max(inner)
}

fn random_residuals(seed: u64) -> ResidualSet {
    let mut r = rng(seed);
    let mut res = ResidualSet::zeros(r.random_range(5..300));
    res.values.iter_mut().for_each(|v| *v = r.random_range(-2.0..2.0));
    res
}

pub fn coordinate_regularizer(seed: u64) -> f64 {
    let res = random_residuals(seed);
    let slots: Vec<usize> = (0..res.values.len()).collect();
    let mut g = vec![0.0; res.values.len()];
    l_dz(&res, &mut g);
    slot_error(&res.values, &g, &slots, &|v| l_dz(&ResidualSet { values: v.to_vec() }, &mut vec![0.0; v.len()]))
}

pub fn weight_regularizer(seed: u64) -> f64 {
    let res = random_residuals(seed);
    let slots: Vec<usize> = (0..res.values.len()).collect();
    let mut g = vec![0.0; res.values.len()];
    l_dw(&res, 0.1, &mut g);
    slot_error(&res.values, &g, &slots, &|v| {
        l_dw(&ResidualSet { values: v.to_vec() }, 0.1, &mut vec![0.0; v.len()])
    })
}

fn weights() -> LossWeights {
    LossWeights {
        epsilon: SEP_EPSILON,
        ..LossWeights::default()
    }
}

/// Weighted sum of every position term.
pub fn composite(seed: u64) -> f64 {
    let (cache, x, mut r) = instance(seed);
    let pairs = random_pairs(&x, &mut r);
    let region: Vec<usize> = (0..x.len()).filter(|_| r.random_bool(0.5)).collect();
    let anchors: Vec<Vec3> = x.iter().map(|p| p - Vec3::new(0.0, 0.0, 0.03)).collect();
    let connect = random_layer_pairs(x.len(), anchors.len(), &mut r);
    let inputs = LossInputs {
        cache: &cache,
        pairs: &pairs,
        region: &region,
        connect: &connect,
        anchors: &anchors,
    };
    let w = weights();
    let eval = evaluate(&inputs, &w, &x, None).unwrap();
    position_error(&x, &eval.position_grad, &|p| evaluate(&inputs, &w, p, None).unwrap().report.total)
}

/// Total loss with respect to 24 random residual slots, through decode.
pub fn chained(seed: u64) -> f64 {
    let (cache, x, mut r) = instance(seed);
    let frames: Vec<_> = (0..4).map(|_| random_frame(&mut r)).collect();
    let coords = random_coords(&x, &frames, &mut r);
    let positions0 = coords.decode(&frames).unwrap();
    let pairs = random_pairs(&positions0, &mut r);
    let region: Vec<usize> = (0..x.len()).filter(|_| r.random_bool(0.5)).collect();
    let anchors: Vec<Vec3> = positions0.iter().map(|p| p - Vec3::new(0.0, 0.0, 0.03)).collect();
    let connect = random_layer_pairs(x.len(), anchors.len(), &mut r);
    let inputs = LossInputs {
        cache: &cache,
        pairs: &pairs,
        region: &region,
        connect: &connect,
        anchors: &anchors,
    };
    let w = weights();
    let mut res = ResidualSet::for_coords(&coords);
    for (i, v) in res.values.iter_mut().enumerate() {
        *v = if i % 4 == 3 { r.random_range(-1.5..1.5) } else { r.random_range(-0.01..0.01) };
    }
    let total = |values: &[f64]| {
        let res = ResidualSet { values: values.to_vec() };
        let dec = decode(&coords, &res, &frames, w.gamma).unwrap();
        evaluate(&inputs, &w, &dec.positions, Some(&res)).unwrap().report.total
    };
    let dec = decode(&coords, &res, &frames, w.gamma).unwrap();
    let eval = evaluate(&inputs, &w, &dec.positions, Some(&res)).unwrap();
    let mut grad = eval.residual_grad.clone();
    decode_backward(&coords, &dec, &res, &frames, w.gamma, &eval.position_grad, &mut grad);
    let slots: Vec<usize> = (0..24).map(|_| r.random_range(0..res.values.len())).collect();
    slot_error(&res.values, &grad, &slots, &total)
}

pub type Check = (&'static str, fn(u64) -> f64);

pub const CHECKS: &[Check] = &[
    ("sep", separation),
    ("tight", tightness),
    ("lap", laplacian),
    ("bend", bending),
    ("curv", curvature),
    ("connect", connection),
    ("dz", coordinate_regularizer),
    ("dw", weight_regularizer),
    ("total", composite),
    ("chained", chained),
];

/// Worst error of `check` over [`INSTANCES`] seeds starting at `base`.
pub fn worst(check: fn(u64) -> f64, base: u64) -> f64 {
    (base..base + INSTANCES).map(check).fold(0.0, f64::max)
}
