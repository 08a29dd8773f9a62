//! Sliding-window local alignment of a globally aligned scan against its
//! ground truth.
//!
//! Both images are center-cropped by `r1` and resized to the frame size. A
//! window of side `W1 = round(W2 / r2)` slides with stride `round(s * W1)`;
//! in each window the scan is registered onto the ground truth (features
//! found on color-balanced copies), warped, and both windows are
//! center-cropped to `W2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::simplest_color_balance;
use crate::error::{Error, Result};
use crate::raster::{round_half_up, Raster, Size};
use crate::registration::{register, warp_perspective, AlignParams, Homography, Point2};

/// Final patch geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSize {
    /// Square patches of this side.
    Square(usize),
    /// One patch covering the whole frame, with no local alignment.
    FullFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalAlignConfig {
    /// Resize target after the first crop (M x N).
    pub frame: Size,
    pub r1: f64,
    pub r2: f64,
    pub patch: PatchSize,
    /// Stride as a fraction of the window side.
    pub stride: f64,
    /// Windows whose corners move further than this fraction of the window
    /// side under the estimated homography are flagged.
    pub max_corner_shift: f64,
    /// Saturation per side for the color-balanced matching copies.
    pub balance_saturation: f64,
    pub align: AlignParams,
}

impl Default for LocalAlignConfig {
    fn default() -> Self {
        LocalAlignConfig::training()
    }
}

impl LocalAlignConfig {
    /// 1080x720 frame, 95% crops, 256 px patches, stride 65%.
    pub fn training() -> Self {
        LocalAlignConfig {
            frame: Size { width: 1080, height: 720 },
            r1: 0.95,
            r2: 0.95,
            patch: PatchSize::Square(256),
            stride: 0.65,
            max_corner_shift: 0.1,
            balance_saturation: 0.01,
            align: AlignParams::default(),
        }
    }

    /// 1072x720 frame, 80% second crop, stride 50%, patch side `w2`.
    pub fn evaluation(patch: PatchSize) -> Self {
        LocalAlignConfig {
            frame: Size { width: 1072, height: 720 },
            r2: 0.8,
            stride: 0.5,
            patch,
            ..LocalAlignConfig::training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.frame.width == 0 || self.frame.height == 0 {
            return Err(Error::param("frame size must be positive"));
        }
        if !unit(self.r1) || !unit(self.r2) {
            return Err(Error::param("r1 and r2 must lie in (0, 1]"));
        }
        if !(self.stride > 0.0 && self.stride <= self.r2) {
            return Err(Error::param(format!("stride {} must lie in (0, r2 = {}]", self.stride, self.r2)));
        }
        if !(self.max_corner_shift > 0.0) {
            return Err(Error::param("max_corner_shift must be positive"));
        }
        if !(self.balance_saturation >= 0.0 && self.balance_saturation < 0.5) {
            return Err(Error::param("balance_saturation must lie in [0, 0.5)"));
        }
        self.align.ransac.validate()?;
        if let PatchSize::Square(w2) = self.patch {
            if w2 == 0 {
                return Err(Error::param("patch side must be positive"));
            }
            let w1 = self.window_side();
            if round_half_up(w1 as f64 * self.r2) != w2 {
                return Err(Error::param(format!("window {w1} cropped by r2 = {} does not give {w2}", self.r2)));
            }
            if w1 > self.frame.width || w1 > self.frame.height {
                return Err(Error::param(format!("window {w1} exceeds frame {}", self.frame)));
            }
        }
        Ok(())
    }

    /// Window side W1.
    pub fn window_side(&self) -> usize {
        match self.patch {
            PatchSize::Square(w2) => round_half_up(w2 as f64 / self.r2),
            PatchSize::FullFrame => self.frame.width.max(self.frame.height),
        }
    }

    pub fn stride_px(&self) -> usize {
        round_half_up(self.stride * self.window_side() as f64).max(1)
    }

    pub fn overlap(&self) -> Result<f64> {
        overlap_fraction(self.stride, self.r2)
    }

    /// Patch size label used for directory names: the side, or `WxH`.
    pub fn size_label(&self) -> String {
        match self.patch {
            PatchSize::Square(w2) => w2.to_string(),
            PatchSize::FullFrame => self.frame.to_string(),
        }
    }

    pub fn patches_per_image(&self) -> Result<usize> {
        self.validate()?;
        match self.patch {
            PatchSize::FullFrame => Ok(1),
            PatchSize::Square(_) => Ok(compute_patch_grid(self.frame, self.window_side(), self.stride_px())?.len()),
        }
    }
}

/// Fraction shared by consecutive final patches, `1 - s / r2`.
pub fn overlap_fraction(s: f64, r2: f64) -> Result<f64> {
    if !(s > 0.0 && s <= r2 && r2 <= 1.0) {
        return Err(Error::param(format!("overlap needs 0 < s <= r2 <= 1, got s = {s}, r2 = {r2}")));
    }
    Ok(1.0 - s / r2)
}

/// Top-left corners `(x, y)` of every `w1` window that fits in `frame`,
/// row-major.
pub fn compute_patch_grid(frame: Size, w1: usize, stride_px: usize) -> Result<Vec<(usize, usize)>> {
    if w1 == 0 || w1 > frame.width || w1 > frame.height {
        return Err(Error::param(format!("window {w1} does not fit frame {frame}")));
    }
    if stride_px == 0 {
        return Err(Error::param("stride must be at least one pixel"));
    }
    let cols = (frame.width - w1) / stride_px + 1;
    let rows = (frame.height - w1) / stride_px + 1;
    Ok((0..rows).flat_map(|j| (0..cols).map(move |i| (i * stride_px, j * stride_px))).collect())
}

/// Cropped and resized frames plus color-balanced copies used only for
/// feature matching.
#[derive(Debug, Clone)]
pub struct Frames {
    pub gt: Raster,
    pub scan: Raster,
    pub gt_balanced: Raster,
    pub scan_balanced: Raster,
}

fn to_frame(img: &Raster, cfg: &LocalAlignConfig) -> Result<Raster> {
    let cropped = if cfg.r1 < 1.0 { img.center_crop_percent(cfg.r1)? } else { img.clone() };
    Ok(if cropped.size() == cfg.frame { cropped } else { cropped.resize_bicubic(cfg.frame) })
}

pub fn prepare_frames(gt: &Raster, scan: &Raster, cfg: &LocalAlignConfig) -> Result<Frames> {
    if gt.size() != scan.size() || gt.channels() != scan.channels() {
        return Err(Error::input(format!(
            "ground truth {}x{} and scan {}x{} differ",
            gt.size(),
            gt.channels(),
            scan.size(),
            scan.channels()
        )));
    }
    let (gt, scan) = (to_frame(gt, cfg)?, to_frame(scan, cfg)?);
    let s = cfg.balance_saturation;
    Ok(Frames {
        gt_balanced: simplest_color_balance(&gt, s, s)?,
        scan_balanced: simplest_color_balance(&scan, s, s)?,
        gt,
        scan,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub gt: Raster,
    pub scan: Raster,
    /// Window top-left corner in the frame.
    pub window_origin: (usize, usize),
    pub row: usize,
    pub col: usize,
    /// Scan-to-ground-truth homography in window coordinates.
    pub homography: Homography,
    pub inlier_count: usize,
    /// Alignment failed; the identity was used.
    pub flagged: bool,
}

/// The four `W1` windows at one origin.
pub struct Windows {
    pub gt: Raster,
    pub scan: Raster,
    pub gt_balanced: Raster,
    pub scan_balanced: Raster,
}

impl Frames {
    pub fn windows(&self, origin: (usize, usize), w1: usize) -> Result<Windows> {
        let cut = |r: &Raster| r.crop(origin.0, origin.1, w1, w1);
        Ok(Windows {
            gt: cut(&self.gt)?,
            scan: cut(&self.scan)?,
            gt_balanced: cut(&self.gt_balanced)?,
            scan_balanced: cut(&self.scan_balanced)?,
        })
    }

    /// Re-creates the patch pair stored for `origin` from its recorded
    /// homography.
    pub fn rederive(&self, origin: (usize, usize), h: &Homography, cfg: &LocalAlignConfig) -> Result<(Raster, Raster)> {
        match cfg.patch {
            PatchSize::FullFrame => Ok((self.gt.clone(), self.scan.clone())),
            PatchSize::Square(w2) => {
                let w1 = cfg.window_side();
                let w = self.windows(origin, w1)?;
                finish_patches(&w, h, w2)
            }
        }
    }
}

fn finish_patches(w: &Windows, h: &Homography, w2: usize) -> Result<(Raster, Raster)> {
    let target = Size::new(w2, w2)?;
    let warped = if h.is_identity() { w.scan.clone() } else { warp_perspective(&w.scan, h, w.scan.size()) };
    Ok((w.gt.center_crop_to(target)?, warped.center_crop_to(target)?))
}

fn corner_shift(h: &Homography, w1: usize) -> f64 {
    let e = w1 as f64 - 1.0;
    [(0.0, 0.0), (e, 0.0), (e, e), (0.0, e)]
        .iter()
        .map(|&(x, y)| {
            let p = Point2::new(x, y);
            h.apply(p).map(|q| q.distance(&p)).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

/// Aligns one window pair. Failures never surface as errors: the identity
/// is used instead and the pair is flagged.
pub fn align_patch(w: &Windows, origin: (usize, usize), cfg: &LocalAlignConfig) -> Result<PatchPair> {
    let PatchSize::Square(w2) = cfg.patch else {
        return Err(Error::param("full-frame patches are not locally aligned"));
    };
    let w1 = w.gt.width();
    let stride = cfg.stride_px();
    let fit = match register(&w.scan_balanced, &w.gt_balanced, &cfg.align) {
        Ok(f) if corner_shift(&f.homography, w1) <= cfg.max_corner_shift * w1 as f64 => Some(f),
        Ok(_) => {
            log::debug!("window at {origin:?}: homography moves corners too far, using identity");
            None
        }
        Err(e) => {
            log::debug!("window at {origin:?}: {e}, using identity");
            None
        }
    };
    let (homography, inlier_count, flagged) = match fit {
        Some(f) => {
            let n = f.inlier_count();
            (f.homography, n, false)
        }
        None => (Homography::identity(), 0, true),
    };
    let (gt, scan) = finish_patches(w, &homography, w2)?;
    Ok(PatchPair {
        gt,
        scan,
        window_origin: origin,
        row: origin.1 / stride,
        col: origin.0 / stride,
        homography,
        inlier_count,
        flagged,
    })
}

/// Full local alignment of one image pair; output follows grid order.
pub fn locally_align_pair(gt: &Raster, scan: &Raster, cfg: &LocalAlignConfig) -> Result<Vec<PatchPair>> {
    cfg.validate()?;
    let frames = prepare_frames(gt, scan, cfg)?;
    align_frames(&frames, cfg)
}

pub fn align_frames(frames: &Frames, cfg: &LocalAlignConfig) -> Result<Vec<PatchPair>> {
    if cfg.patch == PatchSize::FullFrame {
        return Ok(vec![PatchPair {
            gt: frames.gt.clone(),
            scan: frames.scan.clone(),
            window_origin: (0, 0),
            row: 0,
            col: 0,
            homography: Homography::identity(),
            inlier_count: 0,
            flagged: false,
        }]);
    }
    let w1 = cfg.window_side();
    let grid = compute_patch_grid(frames.gt.size(), w1, cfg.stride_px())?;
    grid.par_iter().map(|&origin| align_patch(&frames.windows(origin, w1)?, origin, cfg)).collect()
}

/// Same as [`locally_align_pair`] for sources without a scan: ground-truth
/// patches on the same grid.
pub fn ground_truth_patches(gt: &Raster, cfg: &LocalAlignConfig) -> Result<Vec<Raster>> {
    cfg.validate()?;
    let frame = to_frame(gt, cfg)?;
    let PatchSize::Square(w2) = cfg.patch else {
        return Ok(vec![frame]);
    };
    let w1 = cfg.window_side();
    let target = Size::new(w2, w2)?;
    compute_patch_grid(frame.size(), w1, cfg.stride_px())?
        .into_iter()
        .map(|(x, y)| frame.crop(x, y, w1, w1)?.center_crop_to(target))
        .collect()
}
