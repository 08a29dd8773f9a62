//! Difference-of-Gaussians keypoints and 128-bin gradient-orientation
//! descriptors.

use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use crate::filter::{gaussian_blur, Plane};
use crate::raster::Raster;

const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = DESCR_WIDTH * DESCR_WIDTH * DESCR_BINS;
const DESCR_SCALE_FACTOR: f32 = 3.0;
const DESCR_MAG_CLIP: f32 = 0.2;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_RADIUS_FACTOR: f32 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_PEAK_RATIO: f32 = 0.8;
const DETECT_BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const INPUT_BLUR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiftParams {
    pub scales_per_octave: usize,
    pub sigma: f64,
    pub contrast_threshold: f32,
    pub edge_ratio: f32,
    /// Keep only the strongest `max_features` keypoints.
    pub max_features: Option<usize>,
    /// Octaves stop once the smaller side would drop below this.
    pub min_octave_size: usize,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            scales_per_octave: 3,
            sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            max_features: Some(2000),
            min_octave_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Gaussian scale in input pixels.
    pub scale: f64,
    /// Dominant gradient orientation in radians, `[0, 2pi)`.
    pub orientation: f64,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: [f32; DESCRIPTOR_LEN],
}

impl Descriptor {
    pub fn from_values(values: [f32; DESCRIPTOR_LEN]) -> Self {
        Descriptor { values }
    }

    pub fn values(&self) -> &[f32; DESCRIPTOR_LEN] {
        &self.values
    }

    pub fn squared_distance(&self, other: &Descriptor) -> f32 {
        self.values.iter().zip(other.values.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn distance(&self, other: &Descriptor) -> f32 {
        self.squared_distance(other).sqrt()
    }
}

/// Keypoints with their descriptors; keypoints whose descriptor could not
/// be computed are omitted.
#[derive(Debug, Clone, Default)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

struct ScaleSpace {
    octaves: Vec<Octave>,
    params: SiftParams,
}

impl ScaleSpace {
    fn build(gray: &Raster, params: &SiftParams) -> Option<ScaleSpace> {
        let plane = Plane::from_raster(gray);
        let min_dim = plane.width.min(plane.height);
        if min_dim < 32 || params.scales_per_octave == 0 {
            return None;
        }
        let s = params.scales_per_octave;
        let mut n_octaves = 1;
        let mut dim = min_dim;
        while dim / 2 >= params.min_octave_size.max(2 * DETECT_BORDER + 3) {
            dim /= 2;
            n_octaves += 1;
        }

        let k = 2f64.powf(1.0 / s as f64);
        let increments: Vec<f64> = (1..s + 3)
            .map(|i| {
                let prev = params.sigma * k.powi(i as i32 - 1);
                let total = prev * k;
                (total * total - prev * prev).sqrt()
            })
            .collect();

        let base_blur = (params.sigma * params.sigma - INPUT_BLUR * INPUT_BLUR).max(0.01).sqrt();
        let mut base = gaussian_blur(&plane, base_blur);
        let mut octaves = Vec::with_capacity(n_octaves);
        for _ in 0..n_octaves {
            let mut gauss = Vec::with_capacity(s + 3);
            gauss.push(base);
            for inc in &increments {
                let next = gaussian_blur(gauss.last().expect("non-empty"), *inc);
                gauss.push(next);
            }
            let dog = gauss
                .windows(2)
                .map(|pair| Plane {
                    width: pair[0].width,
                    height: pair[0].height,
                    data: pair[1].data.iter().zip(&pair[0].data).map(|(a, b)| a - b).collect(),
                })
                .collect();
            base = gauss[s].decimate();
            octaves.push(Octave { gauss, dog });
        }
        Some(ScaleSpace { octaves, params: params.clone() })
    }

    /// Octave, layer and octave-relative sigma for a keypoint scale.
    fn locate(&self, scale: f64) -> (usize, usize, f32) {
        let s = self.params.scales_per_octave;
        let t = (scale / self.params.sigma).log2().max(0.0);
        let o = (t.floor() as usize).min(self.octaves.len() - 1);
        let layer = (((t - o as f64) * s as f64).round() as usize).min(s + 2);
        (o, layer, (scale / 2f64.powi(o as i32)) as f32)
    }

    fn detect(&self) -> Vec<Keypoint> {
        let s = self.params.scales_per_octave;
        let threshold = self.params.contrast_threshold;
        let pre_threshold = 0.5 * threshold;
        let mut out = Vec::new();
        for (o, oct) in self.octaves.iter().enumerate() {
            let (w, h) = (oct.dog[0].width, oct.dog[0].height);
            if w <= 2 * DETECT_BORDER || h <= 2 * DETECT_BORDER {
                continue;
            }
            for layer in 1..=s {
                let (prev, cur, next) = (&oct.dog[layer - 1], &oct.dog[layer], &oct.dog[layer + 1]);
                for y in DETECT_BORDER..h - DETECT_BORDER {
                    for x in DETECT_BORDER..w - DETECT_BORDER {
                        let v = cur.at(x, y);
                        if v.abs() <= pre_threshold || !is_extremum(v, x, y, prev, cur, next) {
                            continue;
                        }
                        if let Some(kp) = self.refine(o, layer, x, y) {
                            self.assign_orientations(o, kp, &mut out);
                        }
                    }
                }
            }
        }
        out
    }

    fn refine(&self, o: usize, layer: usize, x: usize, y: usize) -> Option<Refined> {
        let s = self.params.scales_per_octave;
        let oct = &self.octaves[o];
        let (w, h) = (oct.dog[0].width, oct.dog[0].height);
        let (mut xi, mut yi, mut li) = (x as isize, y as isize, layer as isize);
        let mut offset = [0f32; 3];
        let mut converged = false;
        for _ in 0..MAX_REFINE_STEPS {
            let (g, hess) = derivatives(oct, li as usize, xi as usize, yi as usize);
            offset = solve3(&hess, &g)?.map(|v| -v);
            if offset.iter().all(|v| v.abs() < 0.5) {
                converged = true;
                break;
            }
            if offset.iter().any(|v| v.abs() > 1e3) {
                return None;
            }
            xi += offset[0].round() as isize;
            yi += offset[1].round() as isize;
            li += offset[2].round() as isize;
            if li < 1
                || li > s as isize
                || xi < DETECT_BORDER as isize
                || xi >= (w - DETECT_BORDER) as isize
                || yi < DETECT_BORDER as isize
                || yi >= (h - DETECT_BORDER) as isize
            {
                return None;
            }
        }
        if !converged {
            return None;
        }
        let (xu, yu, lu) = (xi as usize, yi as usize, li as usize);
        let (g, hess) = derivatives(oct, lu, xu, yu);
        let value = oct.dog[lu].at(xu, yu) + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
        if value.abs() < self.params.contrast_threshold {
            return None;
        }
        let (dxx, dyy, dxy) = (hess[0][0], hess[1][1], hess[0][1]);
        let tr = dxx + dyy;
        let det = dxx * dyy - dxy * dxy;
        let r = self.params.edge_ratio;
        if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
            return None;
        }
        let sigma_oct = self.params.sigma as f32 * 2f32.powf((lu as f32 + offset[2]) / s as f32);
        Some(Refined {
            x: xu,
            y: yu,
            layer: lu,
            sub_x: xu as f32 + offset[0],
            sub_y: yu as f32 + offset[1],
            sigma_oct,
            response: value.abs(),
        })
    }

    fn assign_orientations(&self, o: usize, kp: Refined, out: &mut Vec<Keypoint>) {
        let img = &self.octaves[o].gauss[kp.layer];
        let sigma = ORI_SIGMA_FACTOR * kp.sigma_oct;
        let radius = (ORI_RADIUS_FACTOR * kp.sigma_oct).round() as isize;
        let mut hist = [0f32; ORI_BINS];
        let denom = -1.0 / (2.0 * sigma * sigma);
        for dy in -radius..=radius {
            let y = kp.y as isize + dy;
            if y <= 0 || y >= img.height as isize - 1 {
                continue;
            }
            for dx in -radius..=radius {
                let x = kp.x as isize + dx;
                if x <= 0 || x >= img.width as isize - 1 {
                    continue;
                }
                let (mag, ang) = gradient(img, x as usize, y as usize);
                let weight = ((dx * dx + dy * dy) as f32 * denom).exp();
                let bin = ((ang * ORI_BINS as f32 / (2.0 * PI)).round() as isize).rem_euclid(ORI_BINS as isize);
                hist[bin as usize] += weight * mag;
            }
        }
        let smoothed: [f32; ORI_BINS] = std::array::from_fn(|i| {
            let at = |d: isize| hist[(i as isize + d).rem_euclid(ORI_BINS as isize) as usize];
            (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0
        });
        let max = smoothed.iter().copied().fold(0f32, f32::max);
        if max <= 0.0 {
            return;
        }
        let scale_factor = 2f64.powi(o as i32);
        for i in 0..ORI_BINS {
            let l = smoothed[(i + ORI_BINS - 1) % ORI_BINS];
            let r = smoothed[(i + 1) % ORI_BINS];
            let c = smoothed[i];
            if c > l && c > r && c >= ORI_PEAK_RATIO * max {
                let shift = 0.5 * (l - r) / (l - 2.0 * c + r);
                let bin = (i as f32 + shift).rem_euclid(ORI_BINS as f32);
                let orientation = (bin * 2.0 * PI / ORI_BINS as f32) as f64;
                let x = kp.sub_x as f64 * scale_factor;
                let y = kp.sub_y as f64 * scale_factor;
                out.push(Keypoint {
                    x,
                    y,
                    scale: kp.sigma_oct as f64 * scale_factor,
                    orientation: orientation.rem_euclid(std::f64::consts::TAU),
                    response: kp.response as f64,
                });
            }
        }
    }

    fn describe(&self, kp: &Keypoint) -> Option<Descriptor> {
        let (o, layer, sigma_oct) = self.locate(kp.scale);
        let img = &self.octaves[o].gauss[layer];
        let f = 2f64.powi(o as i32);
        let (cx, cy) = ((kp.x / f) as f32, (kp.y / f) as f32);
        let d = DESCR_WIDTH as f32;
        let hist_width = DESCR_SCALE_FACTOR * sigma_oct;
        // the unrotated 4x4 grid must lie inside the image
        let support = hist_width * d * 0.5;
        if cx - support < 0.0
            || cy - support < 0.0
            || cx + support > (img.width - 1) as f32
            || cy + support > (img.height - 1) as f32
        {
            return None;
        }
        let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
        let (sin_t, cos_t) = (kp.orientation as f32).sin_cos();
        let exp_scale = -1.0 / (d * d * 0.5);
        let (px, py) = (cx.round() as isize, cy.round() as isize);
        let mut hist = [0f32; (DESCR_WIDTH + 2) * (DESCR_WIDTH + 2) * (DESCR_BINS + 2)];
        let idx = |r: usize, c: usize, o: usize| (r * (DESCR_WIDTH + 2) + c) * (DESCR_BINS + 2) + o;

        for i in -radius..=radius {
            for j in -radius..=radius {
                let c_rot = (j as f32 * cos_t + i as f32 * sin_t) / hist_width;
                let r_rot = (-(j as f32) * sin_t + i as f32 * cos_t) / hist_width;
                let rbin = r_rot + d / 2.0 - 0.5;
                let cbin = c_rot + d / 2.0 - 0.5;
                if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                    continue;
                }
                let (x, y) = (px + j, py + i);
                if x <= 0 || y <= 0 || x >= img.width as isize - 1 || y >= img.height as isize - 1 {
                    continue;
                }
                let (mag, ang) = gradient(img, x as usize, y as usize);
                let weight = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
                let mut obin = (ang - kp.orientation as f32) * DESCR_BINS as f32 / (2.0 * PI);
                obin = obin.rem_euclid(DESCR_BINS as f32);
                let v = mag * weight;

                let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
                let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
                let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize);
                for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                    for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                        for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                            hist[idx(r0 + ri, c0 + ci, o0 + oi)] += v * wr * wc * wo;
                        }
                    }
                }
            }
        }

        let mut values = [0f32; DESCRIPTOR_LEN];
        for r in 0..DESCR_WIDTH {
            for c in 0..DESCR_WIDTH {
                // orientation bins wrap around
                let base = (r * DESCR_WIDTH + c) * DESCR_BINS;
                for o in 0..DESCR_BINS {
                    values[base + o] = hist[idx(r + 1, c + 1, o)];
                }
                values[base] += hist[idx(r + 1, c + 1, DESCR_BINS)];
                values[base + 1] += hist[idx(r + 1, c + 1, DESCR_BINS + 1)];
            }
        }
        normalize(&mut values)?;
        for v in values.iter_mut() {
            *v = v.min(DESCR_MAG_CLIP);
        }
        normalize(&mut values)?;
        Some(Descriptor { values })
    }
}

struct Refined {
    x: usize,
    y: usize,
    layer: usize,
    sub_x: f32,
    sub_y: f32,
    sigma_oct: f32,
    response: f32,
}

fn normalize(v: &mut [f32]) -> Option<()> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return None;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Some(())
}

#[inline]
fn gradient(img: &Plane, x: usize, y: usize) -> (f32, f32) {
    let dx = img.at(x + 1, y) - img.at(x - 1, y);
    let dy = img.at(x, y + 1) - img.at(x, y - 1);
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
}

fn is_extremum(v: f32, x: usize, y: usize, prev: &Plane, cur: &Plane, next: &Plane) -> bool {
    let w = cur.width;
    let is_max = v > 0.0;
    for plane in [prev, cur, next] {
        for yy in y - 1..=y + 1 {
            let row = &plane.data[yy * w + x - 1..yy * w + x + 2];
            for (dx, &n) in row.iter().enumerate() {
                if std::ptr::eq(plane, cur) && yy == y && dx == 1 {
                    continue;
                }
                if (is_max && n >= v) || (!is_max && n <= v) {
                    return false;
                }
            }
        }
    }
    true
}

/// Gradient and Hessian of the DoG stack at `(x, y, layer)` in (x, y, scale) order.
fn derivatives(oct: &Octave, layer: usize, x: usize, y: usize) -> ([f32; 3], [[f32; 3]; 3]) {
    let (p, c, n) = (&oct.dog[layer - 1], &oct.dog[layer], &oct.dog[layer + 1]);
    let v = c.at(x, y);
    let dx = 0.5 * (c.at(x + 1, y) - c.at(x - 1, y));
    let dy = 0.5 * (c.at(x, y + 1) - c.at(x, y - 1));
    let ds = 0.5 * (n.at(x, y) - p.at(x, y));
    let dxx = c.at(x + 1, y) + c.at(x - 1, y) - 2.0 * v;
    let dyy = c.at(x, y + 1) + c.at(x, y - 1) - 2.0 * v;
    let dss = n.at(x, y) + p.at(x, y) - 2.0 * v;
    let dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
    let dxs = 0.25 * (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y));
    let dys = 0.25 * (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1));
    ([dx, dy, ds], [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
}

fn solve3(a: &[[f32; 3]; 3], b: &[f32; 3]) -> Option<[f32; 3]> {
    let m = nalgebra::Matrix3::from_fn(|r, c| a[r][c] as f64);
    let inv = m.try_inverse()?;
    let v = inv * nalgebra::Vector3::new(b[0] as f64, b[1] as f64, b[2] as f64);
    let out = [v[0] as f32, v[1] as f32, v[2] as f32];
    out.iter().all(|x| x.is_finite()).then_some(out)
}

fn sort_and_truncate(kps: &mut Vec<Keypoint>, max: Option<usize>) {
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.orientation.total_cmp(&b.orientation))
    });
    if let Some(m) = max {
        kps.truncate(m);
    }
}

/// DoG scale-space extrema with subpixel refinement, contrast and edge
/// rejection and orientation assignment, strongest first.
///
/// Images whose smaller side is under 32 pixels yield no keypoints.
pub fn detect_keypoints(gray: &Raster, params: &SiftParams) -> Vec<Keypoint> {
    let Some(space) = ScaleSpace::build(gray, params) else {
        return Vec::new();
    };
    let mut kps = space.detect();
    sort_and_truncate(&mut kps, params.max_features);
    kps
}

/// One entry per input keypoint; `None` where the support window leaves
/// the image.
pub fn compute_descriptors(gray: &Raster, keypoints: &[Keypoint], params: &SiftParams) -> Vec<Option<Descriptor>> {
    match ScaleSpace::build(gray, params) {
        Some(space) => keypoints.iter().map(|kp| space.describe(kp)).collect(),
        None => vec![None; keypoints.len()],
    }
}

/// Detection and description sharing one scale space.
pub fn detect_and_describe(img: &Raster, params: &SiftParams) -> Features {
    let gray = img.to_grayscale();
    let Some(space) = ScaleSpace::build(&gray, params) else {
        return Features::default();
    };
    let mut kps = space.detect();
    sort_and_truncate(&mut kps, params.max_features);
    let mut features = Features::default();
    for kp in kps {
        if let Some(d) = space.describe(&kp) {
            features.keypoints.push(kp);
            features.descriptors.push(d);
        }
    }
    features
}

/// One keypoint per line: `x y scale orientation response`.
pub fn dump_keypoints(kps: &[Keypoint]) -> String {
    kps.iter()
        .map(|k| format!("{:.3} {:.3} {:.4} {:.5} {:.6}\n", k.x, k.y, k.scale, k.orientation, k.response))
        .collect()
}
