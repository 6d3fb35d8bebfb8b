//! Closest-point and ray queries against single triangles.

use super::Vec3;

/// Closest point on triangle `(a, b, c)` to `p`, with barycentric
/// coordinates `(u, v, w)` such that the point is `u·a + v·b + w·c`.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Intersection of the infinite line `origin + t·dir` with triangle
/// `(a, b, c)`. Returns the signed parameter `t`.
pub fn line_triangle_intersection(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Closest point on segment `[a, b]` to `p`.
pub fn closest_point_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tri() -> (Vec3, Vec3, Vec3) {
        (
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
        )
    }

    #[test]
    fn projects_interior_points() {
        let (a, b, c) = tri();
        let (q, bary) = closest_point_on_triangle(Vec3::new(0.5, 0.5, 3.0), a, b, c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
        assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_to_vertex_and_edge() {
        let (a, b, c) = tri();
        let (q, _) = closest_point_on_triangle(Vec3::new(-1.0, -1.0, 0.5), a, b, c);
        assert_eq!(q, a);
        let (q, _) = closest_point_on_triangle(Vec3::new(1.0, -3.0, 0.0), a, b, c);
        assert!((q - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn line_hits_on_both_sides() {
        let (a, b, c) = tri();
        let t = line_triangle_intersection(Vec3::new(0.5, 0.5, 2.0), Vec3::new(0.0, 0.0, 1.0), a, b, c);
        assert!((t.unwrap() + 2.0).abs() < 1e-12);
        let miss = line_triangle_intersection(Vec3::new(3.0, 3.0, 2.0), Vec3::new(0.0, 0.0, 1.0), a, b, c);
        assert!(miss.is_none());
    }

    proptest! {
        // brute-force oracle: no sampled triangle point is closer than the returned one
        #[test]
        fn closest_point_beats_samples(px in -3.0..3.0f64, py in -3.0..3.0f64, pz in -3.0..3.0f64) {
            let (a, b, c) = (Vec3::new(0.1, -0.3, 0.2), Vec3::new(1.7, 0.2, -0.4), Vec3::new(0.3, 1.4, 0.5));
            let p = Vec3::new(px, py, pz);
            let (q, bary) = closest_point_on_triangle(p, a, b, c);
            prop_assert!(bary.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
            prop_assert!((a * bary[0] + b * bary[1] + c * bary[2] - q).norm() < 1e-9);
            let best = (p - q).norm();
            let n = 40;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                    let s = a + (b - a) * u + (c - a) * v;
                    prop_assert!((p - s).norm() >= best - 1e-9);
                }
            }
        }
    }
}
