//! Photo outline detection in captures, top-down rectification and global
//! alignment to the ground truth.

mod canny;
mod quad;

pub use canny::{canny_edges, CannyParams, EdgeMap};
pub use quad::{find_photo_quad, load_quad_override, load_quad_overrides, Quad};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{Raster, Size};
use crate::registration::{estimate_homography_dlt, register, warp_perspective, AlignParams, Homography, Point2};

/// Homography taking `q` onto the outer pixel edges of an `out` image, so
/// the quad outline becomes the image border.
pub fn topdown_homography(q: &Quad, out: Size) -> Result<Homography> {
    let target = Quad::full_frame(out.width, out.height).corners();
    estimate_homography_dlt(&q.corners(), &target).map(|f| f.homography)
}

/// Warps the region inside `q` to a fronto-parallel `out` image.
pub fn rectify_to_topdown(img: &Raster, q: &Quad, out: Size) -> Result<Raster> {
    let h = topdown_homography(q, out)?;
    Ok(warp_perspective(img, &h, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadSource {
    Detected,
    Override,
}

#[derive(Debug, Clone)]
pub struct Rectified {
    pub image: Raster,
    pub quad: Quad,
    pub source: QuadSource,
    /// Capture-to-output homography.
    pub homography: Homography,
}

/// Rectifies one capture. An annotated quad, when given, takes precedence
/// over detection.
pub fn rectify_capture(capture: &Raster, annotated: Option<Quad>, canny: &CannyParams, out: Size) -> Result<Rectified> {
    let (quad, source) = match annotated {
        Some(q) => (q, QuadSource::Override),
        None => (find_photo_quad(&canny_edges(capture, canny)?)?, QuadSource::Detected),
    };
    let homography = topdown_homography(&quad, out)?;
    Ok(Rectified { image: warp_perspective(capture, &homography, out), quad, source, homography })
}

#[derive(Debug, Clone)]
pub struct GlobalAlignment {
    /// Scan resampled into the reference frame.
    pub aligned: Raster,
    /// Scan-to-reference homography.
    pub homography: Homography,
    pub inliers: usize,
}

/// Registers `scan` onto `reference` with matched features and RANSAC, then
/// warps it to the reference size.
pub fn global_align(scan: &Raster, reference: &Raster, params: &AlignParams) -> Result<GlobalAlignment> {
    let min_side = |r: &Raster| r.width().min(r.height());
    if min_side(scan) < 64 || min_side(reference) < 64 {
        return Err(Error::input("global alignment needs images of at least 64 px per side"));
    }
    let fit = register(scan, reference, params)?;
    Ok(GlobalAlignment {
        aligned: warp_perspective(scan, &fit.homography, reference.size()),
        inliers: fit.inlier_count(),
        homography: fit.homography,
    })
}

/// Corner positions of `size` after mapping through `h`, for auditing.
pub fn mapped_frame_corners(h: &Homography, size: Size) -> Result<[Point2; 4]> {
    let c = Quad::full_frame(size.width, size.height).corners();
    Ok([h.apply(c[0])?, h.apply(c[1])?, h.apply(c[2])?, h.apply(c[3])?])
}
