//! Deterministic synthetic imagery: textures, displacement fields and
//! projective renderings of photos and checkerboards.
//!
//! Used by the test suites, the benchmarks and the CLI fixture generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::{Raster, Size};
use crate::registration::{estimate_homography_dlt, Homography, Point2};

/// Dead-leaves texture: overlapping discs and rectangles of random color
/// over a smooth background, in `[0.05, 0.95]`.
pub fn texture(width: usize, height: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = smooth_field(width, height, seed ^ 0x9e37_79b9);
    let mut data: Vec<f64> = base.samples().to_vec();
    let count = (width * height / 90).max(8);
    for _ in 0..count {
        // heavy-tailed radii: many small shapes, a few large ones
        let u: f64 = rng.gen_range(0.0..1.0);
        let r = 2.0 + 22.0 * u.powi(3);
        let cx = rng.gen_range(-r..width as f64 + r);
        let cy = rng.gen_range(-r..height as f64 + r);
        let color = [rng.gen_range(0.05..0.95f64), rng.gen_range(0.05..0.95f64), rng.gen_range(0.05..0.95f64)];
        let square = rng.gen_bool(0.3);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(width);
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if square { dx.abs() <= r * 0.8 && dy.abs() <= r * 0.8 } else { dx * dx + dy * dy <= r * r };
                if inside {
                    let i = (y * width + x) * 3;
                    data[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    Raster::from_vec(width, height, 3, data).expect("texture buffer sized by construction")
}

/// Smooth RGB field built from a few random low-frequency sinusoids.
pub fn smooth_field(width: usize, height: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 5]> = (0..12)
        .map(|_| {
            [
                rng.gen_range(0.0..3.0),                   // channel
                rng.gen_range(-0.08..0.08),                // fx
                rng.gen_range(-0.08..0.08),                // fy
                rng.gen_range(0.0..std::f64::consts::TAU), // phase
                rng.gen_range(0.03..0.12),                 // amplitude
            ]
        })
        .collect();
    Raster::from_fn(width, height, 3, |x, y, c| {
        let mut v = 0.5;
        for w in &waves {
            if w[0] as usize == c {
                v += w[4] * (w[1] * x as f64 + w[2] * y as f64 + w[3]).sin();
            }
        }
        v.clamp(0.0, 1.0)
    })
    .expect("finite samples")
}

/// Bilinear sample with clamped borders.
pub fn sample_bilinear(img: &Raster, x: f64, y: f64, c: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
    let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// `out(x, y) = img(x + dx, y + dy)` with `(dx, dy) = field(x, y)`.
pub fn displace(img: &Raster, field: impl Fn(f64, f64) -> (f64, f64)) -> Raster {
    Raster::from_fn(img.width(), img.height(), img.channels(), |x, y, c| {
        let (dx, dy) = field(x as f64, y as f64);
        sample_bilinear(img, x as f64 + dx, y as f64 + dy, c)
    })
    .expect("bilinear samples stay in range")
}

/// Smooth spatially varying displacement made of two sinusoids per axis;
/// each axis is bounded by `amplitude` pixels.
#[derive(Debug, Clone, Copy)]
pub struct SinusoidalWarp {
    pub amplitude: f64,
    pub wavelength: f64,
    phases: [f64; 4],
}

impl SinusoidalWarp {
    pub fn new(amplitude: f64, wavelength: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SinusoidalWarp {
            amplitude,
            wavelength,
            phases: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
        }
    }

    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let k = std::f64::consts::TAU / self.wavelength;
        let a = self.amplitude * 0.5;
        let dx = a * (k * x + self.phases[0]).sin() + a * (k * 0.7 * y + self.phases[1]).sin();
        let dy = a * (k * 0.8 * x + self.phases[2]).sin() + a * (k * y + self.phases[3]).sin();
        (dx, dy)
    }

    pub fn apply(&self, img: &Raster) -> Raster {
        displace(img, |x, y| self.displacement(x, y))
    }
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma`.
pub fn add_noise(img: &Raster, sigma: f64, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let data = img.samples().iter().map(|&v| v + normal.sample(&mut rng)).collect();
    Raster::from_vec(img.width(), img.height(), img.channels(), data).expect("finite samples")
}

/// Renders `size` by averaging `ss`x`ss` subsamples of `f(x, y)` per pixel,
/// where pixel centers sit at integer coordinates.
pub fn render(size: Size, ss: usize, f: impl Fn(f64, f64) -> [f64; 3]) -> Raster {
    let ss = ss.max(1);
    let inv = 1.0 / (ss * ss) as f64;
    let mut data = Vec::with_capacity(size.area() * 3);
    for y in 0..size.height {
        for x in 0..size.width {
            let mut acc = [0f64; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = x as f64 - 0.5 + (sx as f64 + 0.5) / ss as f64;
                    let py = y as f64 - 0.5 + (sy as f64 + 0.5) / ss as f64;
                    let v = f(px, py);
                    for c in 0..3 {
                        acc[c] += v[c];
                    }
                }
            }
            data.extend(acc.iter().map(|a| a * inv));
        }
    }
    Raster::from_vec(size.width, size.height, 3, data).expect("finite samples")
}

fn rect_corners(w: f64, h: f64) -> [Point2; 4] {
    [Point2::new(0.0, 0.0), Point2::new(w, 0.0), Point2::new(w, h), Point2::new(0.0, h)]
}

/// Homography taking the `w`x`h` rectangle `[0,w]x[0,h]` onto `quad` (TL, TR, BR, BL).
pub fn rect_to_quad(w: f64, h: f64, quad: &[Point2; 4]) -> Homography {
    estimate_homography_dlt(&rect_corners(w, h), quad)
        .expect("non-degenerate quad")
        .homography
}

/// A perspective view of a flat `cols`x`rows` checkerboard whose outer
/// corners land on `quad` (TL, TR, BR, BL) over a mid-gray background.
pub fn checkerboard_capture(cols: usize, rows: usize, quad: &[Point2; 4], size: Size) -> Raster {
    let to_board = rect_to_quad(cols as f64, rows as f64, quad).inverse();
    render(size, 4, |x, y| {
        let Ok(p) = to_board.apply(Point2::new(x, y)) else {
            return [0.5; 3];
        };
        if p.x < 0.0 || p.y < 0.0 || p.x >= cols as f64 || p.y >= rows as f64 {
            return [0.5; 3];
        }
        let v = if (p.x.floor() as usize + p.y.floor() as usize).is_multiple_of(2) { 0.9 } else { 0.1 };
        [v; 3]
    })
}

/// A printed photo lying on a white surface, photographed at an angle.
#[derive(Debug, Clone)]
pub struct PhotoCapture {
    pub capture: Raster,
    /// Photo outline in capture coordinates, TL, TR, BR, BL.
    pub corners: [Point2; 4],
    pub photo: Raster,
}

/// Random photo-on-white capture of `size` with a rotated, perspective
/// distorted photo covering roughly a third of the frame.
pub fn photo_on_white(size: Size, seed: u64) -> PhotoCapture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (size.width as f64, size.height as f64);
    let photo = texture(150, 100, seed.wrapping_mul(31).wrapping_add(7)).map(|v| 0.05 + 0.55 * v);
    let corners = loop {
        let pw = w * rng.gen_range(0.55..0.7);
        let ph = pw * 2.0 / 3.0;
        let angle = rng.gen_range(-0.5..0.5f64);
        let (s, c) = angle.sin_cos();
        let cx = w / 2.0 + rng.gen_range(-0.05..0.05) * w;
        let cy = h / 2.0 + rng.gen_range(-0.05..0.05) * h;
        let jitter = 0.06 * pw;
        let base = [(-pw / 2.0, -ph / 2.0), (pw / 2.0, -ph / 2.0), (pw / 2.0, ph / 2.0), (-pw / 2.0, ph / 2.0)];
        let pts: [Point2; 4] = std::array::from_fn(|i| {
            let (bx, by) = base[i];
            let (jx, jy) = (rng.gen_range(-jitter..jitter), rng.gen_range(-jitter..jitter));
            Point2::new(cx + c * bx - s * by + jx, cy + s * bx + c * by + jy)
        });
        let inside = pts.iter().all(|p| p.x > 4.0 && p.y > 4.0 && p.x < w - 5.0 && p.y < h - 5.0);
        if inside && quad_area(&pts) >= 0.25 * w * h {
            break pts;
        }
    };
    let (pw, ph) = (photo.width() as f64, photo.height() as f64);
    let to_photo = rect_to_quad(pw, ph, &corners).inverse();
    let capture = render(size, 3, |x, y| {
        let background = [0.93; 3];
        let Ok(p) = to_photo.apply(Point2::new(x, y)) else {
            return background;
        };
        if p.x < 0.0 || p.y < 0.0 || p.x > pw || p.y > ph {
            return background;
        }
        std::array::from_fn(|c| sample_bilinear(&photo, p.x - 0.5, p.y - 0.5, c))
    });
    PhotoCapture { capture, corners, photo }
}

/// Shoelace area of a simple polygon.
pub fn quad_area(p: &[Point2]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].x * p[(i + 1) % n].y - p[(i + 1) % n].x * p[i].y).sum::<f64>().abs() / 2.0
}

/// A globally aligned scan of `gt`: smooth local misalignment of up to
/// `amplitude` pixels plus a little blur and sensor noise.
pub fn misaligned_scan(gt: &Raster, amplitude: f64, seed: u64) -> Raster {
    let warp = SinusoidalWarp::new(amplitude, 900.0, seed);
    let moved = warp.apply(gt);
    let soft = crate::filter::blur_raster(&moved, 0.6);
    add_noise(&soft, 0.01, seed.wrapping_add(1))
}
