//! Feature detection and matching, homography estimation and
//! perspective warping.

mod features;
mod homography;
mod matching;
mod ransac;
mod warp;

pub use features::{
    compute_descriptors, detect_and_describe, detect_keypoints, dump_keypoints, Descriptor, Features, Keypoint,
    SiftParams, DESCRIPTOR_LEN,
};
pub(crate) use homography::cross;
pub use homography::{estimate_homography_dlt, DltFit, Homography, Point2};
pub use matching::{dump_matches, match_descriptors, Match};
pub use ransac::{ransac_homography, ransac_homography_points, RansacFit, RansacParams};
pub use warp::warp_perspective;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::Raster;

/// Everything needed to register one image onto another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignParams {
    pub sift: SiftParams,
    pub ratio: f32,
    pub ransac: RansacParams,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams { sift: SiftParams::default(), ratio: 0.75, ransac: RansacParams::default() }
    }
}

/// Homography mapping `moving` onto `fixed`, estimated from matched features.
pub fn register(moving: &Raster, fixed: &Raster, params: &AlignParams) -> Result<RansacFit> {
    let fm = detect_and_describe(moving, &params.sift);
    let ff = detect_and_describe(fixed, &params.sift);
    register_features(&fm, &ff, params)
}

pub fn register_features(moving: &Features, fixed: &Features, params: &AlignParams) -> Result<RansacFit> {
    let matches = match_descriptors(&moving.descriptors, &fixed.descriptors, params.ratio);
    ransac_homography(&matches, &moving.keypoints, &fixed.keypoints, &params.ransac)
}
