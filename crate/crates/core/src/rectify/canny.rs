use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, Plane};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    /// Hysteresis thresholds as fractions of the largest gradient magnitude.
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams { gaussian_sigma: 1.4, low_threshold: 0.1, high_threshold: 0.25 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0) {
            return Err(Error::param("canny gaussian_sigma must be non-negative"));
        }
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.low_threshold) || !in_unit(self.high_threshold) || self.low_threshold >= self.high_threshold {
            return Err(Error::param("canny thresholds must satisfy 0 < low < high < 1"));
        }
        Ok(())
    }
}

/// Binary edge mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        EdgeMap { width, height, edges: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.edges[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.edges[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|e| **e).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.edges.iter().any(|e| *e)
    }

    /// Edge pixel coordinates in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y))
            .collect()
    }

    /// Quarter turn clockwise: `(x, y)` moves to `(height - 1 - y, x)`.
    pub fn rotated_cw(&self) -> EdgeMap {
        let mut out = EdgeMap::empty(self.height, self.width);
        for (x, y) in self.points() {
            out.set(self.height - 1 - y, x, true);
        }
        out
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_fn(self.width, self.height, 1, |x, y, _| if self.get(x, y) { 1.0 } else { 0.0 }).expect("valid dimensions")
    }

    pub fn from_raster(img: &Raster) -> EdgeMap {
        let g = img.to_grayscale();
        EdgeMap { width: g.width(), height: g.height(), edges: g.samples().iter().map(|v| *v >= 0.5).collect() }
    }
}

fn sobel(p: &Plane) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (p.width, p.height);
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = |dx: isize, dy: isize| p.clamped(x + dx, y + dy);
            let i = y as usize * w + x as usize;
            gx[i] = (v(1, -1) + 2.0 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2.0 * v(-1, 0) + v(-1, 1));
            gy[i] = (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1));
        }
    }
    (gx, gy)
}

/// Neighbour offset along the gradient, quantized to four directions.
fn direction(gx: f32, gy: f32) -> (isize, isize) {
    let angle = gy.atan2(gx).to_degrees();
    let a = if angle < 0.0 { angle + 180.0 } else { angle };
    if !(22.5..157.5).contains(&a) {
        (1, 0)
    } else if a < 67.5 {
        (1, 1)
    } else if a < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Canny edge detector: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression and hysteresis with 8-connected linking. Color input is
/// reduced to luminance first.
///
/// Suppression keeps a pixel that is strictly above its backward neighbour
/// and at least its forward neighbour, so plateaus of equal magnitude across
/// a symmetric step leave a single pixel.
pub fn canny_edges(gray: &Raster, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    let (w, h) = (gray.width(), gray.height());
    let smooth = gaussian_blur(&Plane::from_raster(gray), params.gaussian_sigma);
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let max = mag.iter().copied().fold(0f32, f32::max);
    if max <= 1e-6 {
        return Ok(EdgeMap::empty(w, h));
    }
    let at = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    let low = (params.low_threshold * max as f64) as f32;
    let high = (params.high_threshold * max as f64) as f32;
    // 0 = none, 1 = weak, 2 = strong
    let mut class = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m < low {
                continue;
            }
            let (dx, dy) = direction(gx[i], gy[i]);
            let (xi, yi) = (x as isize, y as isize);
            if m > at(xi - dx, yi - dy) && m >= at(xi + dx, yi + dy) {
                class[i] = if m >= high { 2 } else { 1 };
            }
        }
    }

    let mut out = EdgeMap::empty(w, h);
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| class[i] == 2).collect();
    for &i in &queue {
        out.edges[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && !out.edges[j] {
                    out.edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}
