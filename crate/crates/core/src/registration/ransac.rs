use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Keypoint;
use super::homography::{estimate_homography_dlt, has_collinear_triple, Homography, Point2};
use super::matching::Match;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacParams {
    /// Inlier threshold on forward reprojection error, pixels.
    pub reproj_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { reproj_threshold: 3.0, max_iterations: 2000, confidence: 0.995, min_inliers: 8, seed: 0 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.reproj_threshold > 0.0) {
            return Err(Error::param("ransac reproj_threshold must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::param("ransac confidence must lie in (0, 1)"));
        }
        if self.min_inliers < 4 {
            return Err(Error::param("ransac min_inliers must be at least 4"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("ransac max_iterations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

fn reprojection_errors(h: &Homography, src: &[Point2], dst: &[Point2]) -> Vec<f64> {
    src.iter()
        .zip(dst)
        .map(|(s, d)| h.apply(*s).map(|p| p.distance(d)).unwrap_or(f64::INFINITY))
        .collect()
}

fn consensus(h: &Homography, src: &[Point2], dst: &[Point2], thr: f64) -> (Vec<bool>, usize, f64) {
    let errs = reprojection_errors(h, src, dst);
    let mask: Vec<bool> = errs.iter().map(|e| *e < thr).collect();
    let count = mask.iter().filter(|b| **b).count();
    let spread: f64 = errs.iter().filter(|e| **e < thr).sum();
    (mask, count, spread)
}

fn required_iterations(confidence: f64, inlier_ratio: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 - 1e-12 {
        return 1;
    }
    if w4 <= 1e-12 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// RANSAC over point correspondences `src[i] -> dst[i]`.
///
/// Minimal four-point samples are drawn from a generator seeded by
/// `params.seed`; the iteration bound adapts to the best inlier ratio seen.
/// The winning consensus set is refit with the normalized DLT.
pub fn ransac_homography_points(src: &[Point2], dst: &[Point2], params: &RansacParams) -> Result<RansacFit> {
    params.validate()?;
    let n = src.len();
    if n != dst.len() {
        return Err(Error::input("source and destination point counts differ"));
    }
    if n < params.min_inliers || n < 4 {
        return Err(Error::AlignmentFailed(format!(
            "{n} correspondences, need at least {}",
            params.min_inliers.max(4)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    let mut needed = params.max_iterations;
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let idx = sample(&mut rng, n, 4);
        let s: [Point2; 4] = std::array::from_fn(|k| src[idx.index(k)]);
        let d: [Point2; 4] = std::array::from_fn(|k| dst[idx.index(k)]);
        if has_collinear_triple(&s) || has_collinear_triple(&d) {
            continue;
        }
        let Ok(fit) = estimate_homography_dlt(&s, &d) else {
            continue;
        };
        let (mask, count, spread) = consensus(&fit.homography, src, dst, params.reproj_threshold);
        let better = match &best {
            None => true,
            Some((_, bc, bs)) => count > *bc || (count == *bc && spread < *bs),
        };
        if better {
            needed = required_iterations(params.confidence, count as f64 / n as f64, params.max_iterations);
            best = Some((mask, count, spread));
        }
    }

    let (mut mask, mut count, _) = best.ok_or_else(|| Error::AlignmentFailed("no non-degenerate sample".into()))?;
    if count < params.min_inliers {
        return Err(Error::AlignmentFailed(format!("{count} inliers, need {}", params.min_inliers)));
    }

    let refit = |mask: &[bool]| -> Result<Homography> {
        let (s, d): (Vec<Point2>, Vec<Point2>) =
            src.iter().zip(dst).zip(mask).filter(|(_, m)| **m).map(|((s, d), _)| (*s, *d)).unzip();
        estimate_homography_dlt(&s, &d)
            .map(|f| f.homography)
            .map_err(|e| Error::AlignmentFailed(e.to_string()))
    };
    // refit on the consensus set; repeat while the set keeps growing
    let mut homography = refit(&mask)?;
    for _ in 0..3 {
        let (new_mask, new_count, _) = consensus(&homography, src, dst, params.reproj_threshold);
        if new_count <= count {
            break;
        }
        mask = new_mask;
        count = new_count;
        homography = refit(&mask)?;
    }
    let (mask, count, _) = consensus(&homography, src, dst, params.reproj_threshold);
    if count < params.min_inliers {
        return Err(Error::AlignmentFailed(format!("{count} inliers after refit, need {}", params.min_inliers)));
    }
    Ok(RansacFit { homography, inliers: mask })
}

/// RANSAC homography mapping `kps_a` (query side) onto `kps_b` (train side).
pub fn ransac_homography(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    params: &RansacParams,
) -> Result<RansacFit> {
    let mut src = Vec::with_capacity(matches.len());
    let mut dst = Vec::with_capacity(matches.len());
    for m in matches {
        let (a, b) = kps_a
            .get(m.query_index)
            .zip(kps_b.get(m.train_index))
            .ok_or_else(|| Error::input("match index out of range"))?;
        src.push(Point2::new(a.x, a.y));
        dst.push(Point2::new(b.x, b.y));
    }
    ransac_homography_points(&src, &dst, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn planted() -> Homography {
        Homography::new([[1.05, 0.04, 12.0], [-0.03, 0.97, -7.0], [2e-5, -3e-5, 1.0]]).unwrap()
    }

    fn exact_pairs(n: usize, seed: u64) -> (Vec<Point2>, Vec<Point2>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = planted();
        let src: Vec<Point2> = (0..n).map(|_| Point2::new(rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0))).collect();
        let dst = src.iter().map(|p| h.apply(*p).unwrap()).collect();
        (src, dst)
    }

    #[test]
    fn recovers_exact_homography() {
        let (src, dst) = exact_pairs(60, 1);
        let fit = ransac_homography_points(&src, &dst, &RansacParams::default()).unwrap();
        assert!(fit.inliers.iter().all(|b| *b));
        let dlt = estimate_homography_dlt(&src, &dst).unwrap().homography;
        let diff = fit
            .homography
            .to_row_major()
            .iter()
            .zip(dlt.to_row_major())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6);
    }

    #[test]
    fn survives_thirty_percent_outliers() {
        let (mut src, mut dst) = exact_pairs(140, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            src.push(Point2::new(rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0)));
            dst.push(Point2::new(rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0)));
        }
        let fit = ransac_homography_points(&src, &dst, &RansacParams::default()).unwrap();
        let recall = fit.inliers[..140].iter().filter(|b| **b).count() as f64 / 140.0;
        assert!(recall >= 0.95);
        for (s, d) in src[..140].iter().zip(&dst[..140]) {
            assert!(fit.homography.apply(*s).unwrap().distance(d) < 1.0);
        }
    }

    #[test]
    fn too_few_matches_fail() {
        let (src, dst) = exact_pairs(3, 3);
        assert!(matches!(
            ransac_homography_points(&src, &dst, &RansacParams::default()),
            Err(Error::AlignmentFailed(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let (mut src, mut dst) = exact_pairs(50, 4);
        src.extend(exact_pairs(20, 5).1);
        dst.extend(exact_pairs(20, 6).0);
        let p = RansacParams { seed: 17, ..RansacParams::default() };
        assert_eq!(ransac_homography_points(&src, &dst, &p).unwrap(), ransac_homography_points(&src, &dst, &p).unwrap());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let (src, dst) = exact_pairs(20, 7);
        for p in [
            RansacParams { reproj_threshold: 0.0, ..Default::default() },
            RansacParams { confidence: 1.0, ..Default::default() },
            RansacParams { min_inliers: 3, ..Default::default() },
        ] {
            assert!(matches!(ransac_homography_points(&src, &dst, &p), Err(Error::InvalidParameter(_))));
        }
    }
}
