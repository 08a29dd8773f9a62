use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A 3x3 projective transform, stored in canonical form: unit Frobenius
/// norm with a non-negative bottom-right entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

const DET_EPS: f64 = 1e-12;

impl Homography {
    /// Canonicalizes `m`; fails when it is singular.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let canonical = canonicalize(m)?;
        if det3(&canonical).abs() <= DET_EPS {
            return Err(Error::DegenerateInput("homography is singular".into()));
        }
        Ok(Homography { m: canonical })
    }

    pub fn identity() -> Self {
        Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).expect("identity is invertible")
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography::new([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]).expect("translation is invertible")
    }

    pub fn scaling(sx: f64, sy: f64) -> Result<Self> {
        Homography::new([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Canonical matrix entries.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    /// Matrix scaled so the bottom-right entry is 1 (when it is non-zero).
    pub fn normalized(&self) -> [[f64; 3]; 3] {
        let s = self.m[2][2];
        if s.abs() < 1e-15 {
            return self.m;
        }
        self.m.map(|row| row.map(|v| v / s))
    }

    pub fn is_identity(&self) -> bool {
        *self == Homography::identity()
    }

    /// Largest absolute deviation of the normalized matrix from identity.
    pub fn deviation_from_identity(&self) -> f64 {
        let n = self.normalized();
        let mut worst = 0f64;
        for (r, row) in n.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    pub fn inverse(&self) -> Homography {
        let m = Matrix3::from_fn(|r, c| self.m[r][c]);
        let inv = m.try_inverse().expect("canonical homographies are invertible");
        Homography::new(std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)])))
            .expect("inverse of an invertible matrix is invertible")
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Homography {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        Homography::new(out).expect("product of invertible matrices is invertible")
    }

    /// Projective action on a point.
    pub fn apply(&self, p: Point2) -> Result<Point2> {
        let m = &self.normalized();
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if w.abs() <= DET_EPS {
            return Err(Error::NumericDomain(format!("({}, {}) maps to infinity", p.x, p.y)));
        }
        Ok(Point2 {
            x: (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            y: (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        })
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self> {
        Homography::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    /// Whitespace-separated row-major text with round-trip precision.
    pub fn to_text(&self) -> String {
        self.to_row_major().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::input(format!("bad homography entry '{t}': {e}"))))
            .collect::<Result<_>>()?;
        let arr: [f64; 9] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::input(format!("homography needs 9 numbers, got {}", v.len())))?;
        Homography::from_row_major(arr)
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(v).map_err(serde::de::Error::custom)
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn canonicalize(m: [[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::DegenerateInput("homography has zero or non-finite norm".into()));
    }
    // sign convention: bottom-right entry non-negative; when it is zero the
    // first non-zero entry decides
    let pivot = if m[2][2] != 0.0 {
        m[2][2]
    } else {
        m.iter().flatten().copied().find(|v| *v != 0.0).unwrap_or(1.0)
    };
    if pivot > 0.0 && (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        // already canonical; rescaling would only add rounding
        return Ok(m);
    }
    let s = if pivot < 0.0 { -1.0 / norm } else { 1.0 / norm };
    Ok(m.map(|row| row.map(|v| v * s)))
}

/// Result of a direct linear transform fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DltFit {
    pub homography: Homography,
    /// Mean forward reprojection error over the input pairs, in pixels.
    pub mean_error: f64,
}

/// Similarity transform moving the centroid to the origin with mean
/// distance sqrt(2).
fn normalizing_transform(pts: &[Point2]) -> Option<[[f64; 3]; 3]> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn transform_point(t: &[[f64; 3]; 3], p: &Point2) -> (f64, f64) {
    (t[0][0] * p.x + t[0][2], t[1][1] * p.y + t[1][2])
}

/// Normalized DLT estimate of the homography mapping `src[i]` to `dst[i]`.
pub fn estimate_homography_dlt(src: &[Point2], dst: &[Point2]) -> Result<DltFit> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::input(format!("{n} source points but {} destination points", dst.len())));
    }
    if n < 4 {
        return Err(Error::DegenerateInput(format!("need at least 4 correspondences, got {n}")));
    }
    let degenerate = || Error::DegenerateInput("point configuration does not determine a homography".into());
    let ts = normalizing_transform(src).ok_or_else(degenerate)?;
    let td = normalizing_transform(dst).ok_or_else(degenerate)?;

    // pad to at least 9 rows so the full right singular basis is available
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = transform_point(&ts, s);
        let (u, v) = transform_point(&td, d);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(degenerate)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = &svd.singular_values;
    let largest = sv[order[0]];
    let second_smallest = sv[order[7]];
    if !(largest > 0.0) || second_smallest / largest < 1e-10 {
        return Err(degenerate());
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    // denormalize: H = Td^-1 * Hn * Ts
    let ts_m = Matrix3::from_fn(|r, c| ts[r][c]);
    let td_m = Matrix3::from_fn(|r, c| td[r][c]);
    let td_inv = td_m.try_inverse().ok_or_else(degenerate)?;
    let full = td_inv * hn * ts_m;
    let homography = Homography::new(std::array::from_fn(|r| std::array::from_fn(|c| full[(r, c)])))
        .map_err(|_| degenerate())?;

    let mut total = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let p = homography.apply(*s).map_err(|_| degenerate())?;
        total += p.distance(d);
    }
    Ok(DltFit { homography, mean_error: total / n as f64 })
}

/// Twice the signed area of triangle `abc`.
pub(crate) fn cross(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// True when some three of the four points are (nearly) collinear.
pub(crate) fn has_collinear_triple(p: &[Point2; 4]) -> bool {
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES.iter().any(|&(i, j, k)| {
        let scale = p[i].distance(&p[j]).max(p[i].distance(&p[k])).max(1e-12);
        cross(&p[i], &p[j], &p[k]).abs() / (scale * scale) < 1e-6
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> Vec<Point2> {
        vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)]
    }

    fn random_h(rng: &mut ChaCha8Rng) -> Homography {
        Homography::new([
            [1.0 + rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-20.0..20.0)],
            [rng.gen_range(-0.2..0.2), 1.0 + rng.gen_range(-0.2..0.2), rng.gen_range(-20.0..20.0)],
            [rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3), 1.0],
        ])
        .unwrap()
    }

    fn max_diff(a: &Homography, b: &Homography) -> f64 {
        a.to_row_major().iter().zip(b.to_row_major()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn unit_square_gives_identity() {
        let fit = estimate_homography_dlt(&square(), &square()).unwrap();
        assert!(max_diff(&fit.homography, &Homography::identity()) < 1e-12);
        assert!(fit.mean_error < 1e-12);
    }

    #[test]
    fn translation_closed_form() {
        let dst: Vec<Point2> = square().iter().map(|p| Point2::new(p.x + 5.0, p.y - 3.0)).collect();
        let n = estimate_homography_dlt(&square(), &dst).unwrap().homography.normalized();
        assert!((n[0][2] - 5.0).abs() < 1e-9);
        assert!((n[1][2] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn exact_projective_points_reproject() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_h(&mut rng);
        let src: Vec<Point2> = (0..8).map(|_| Point2::new(rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0))).collect();
        let dst: Vec<Point2> = src.iter().map(|p| h.apply(*p).unwrap()).collect();
        let fit = estimate_homography_dlt(&src, &dst).unwrap();
        assert!(fit.mean_error < 1e-6, "error {}", fit.mean_error);
        assert!(max_diff(&fit.homography, &h) < 1e-9);
    }

    #[test]
    fn degenerate_inputs_fail() {
        let line: Vec<Point2> = (0..6).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(estimate_homography_dlt(&line, &line), Err(Error::DegenerateInput(_))));
        assert!(estimate_homography_dlt(&square()[..3], &square()[..3]).is_err());
    }

    #[test]
    fn apply_closed_forms() {
        let p = Point2::new(3.0, 7.0);
        assert_eq!(Homography::identity().apply(p).unwrap(), p);
        let s = Homography::scaling(2.0, 2.0).unwrap().apply(p).unwrap();
        assert!((s.x - 6.0).abs() < 1e-12 && (s.y - 14.0).abs() < 1e-12);
        let h = Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        // singular, rejected at construction
        assert!(h.is_err());
        let h = Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, -3.0]]).unwrap();
        assert!(matches!(h.apply(p), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (h1, h2) = (random_h(&mut rng), random_h(&mut rng));
            let p = Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0));
            let seq = h2.apply(h1.apply(p).unwrap()).unwrap();
            let comp = h2.compose(&h1).apply(p).unwrap();
            assert!(seq.distance(&comp) < 1e-9);
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_h(&mut rng);
        assert_eq!(Homography::from_text(&h.to_text()).unwrap(), h);
        assert!(Homography::from_text("1 2 3").is_err());
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(v in proptest::array::uniform9(-10.0f64..10.0)) {
            if let Ok(h) = Homography::from_row_major(v) {
                let again = Homography::new(h.matrix()).unwrap();
                prop_assert_eq!(again, h);
                let norm: f64 = h.to_row_major().iter().map(|x| x * x).sum();
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn dlt_ignores_homogeneous_scale(seed in 0u64..1000, w in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_h(&mut rng);
            let src: Vec<Point2> = (0..6).map(|_| Point2::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0))).collect();
            let dst: Vec<Point2> = src.iter().map(|p| h.apply(*p).unwrap()).collect();
            // homogeneous (x w, y w, w) dehomogenized back to the plane
            let scaled = |pts: &[Point2]| -> Vec<Point2> {
                pts.iter().map(|p| Point2::new((p.x * w) / w, (p.y * w) / w)).collect()
            };
            let a = estimate_homography_dlt(&src, &dst).unwrap().homography;
            let b = estimate_homography_dlt(&scaled(&src), &scaled(&dst)).unwrap().homography;
            prop_assert!(max_diff(&a, &b) < 1e-9);
        }
    }
}
