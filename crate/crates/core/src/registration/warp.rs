use rayon::prelude::*;

use super::homography::{Homography, Point2};
use crate::raster::{Raster, Size};

const SNAP: f64 = 1e-9;

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Inverse-mapping perspective warp with bilinear sampling.
///
/// `h` maps source coordinates to destination coordinates. Destination
/// pixels whose preimage falls outside the source are black.
pub fn warp_perspective(img: &Raster, h: &Homography, out: Size) -> Raster {
    let inv = h.inverse();
    let (sw, sh, c) = (img.width(), img.height(), img.channels());
    let src = img.samples();
    let max_x = (sw - 1) as f64;
    let max_y = (sh - 1) as f64;
    let mut data = vec![0f64; out.width * out.height * c];
    data.par_chunks_mut(out.width * c).enumerate().for_each(|(y, row)| {
        for x in 0..out.width {
            let Ok(p) = inv.apply(Point2::new(x as f64, y as f64)) else {
                continue;
            };
            let (sx, sy) = (snap(p.x), snap(p.y));
            if !(sx >= 0.0 && sy >= 0.0 && sx <= max_x && sy <= max_y) {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let x1 = (x0 + 1).min(sw - 1);
            let y1 = (y0 + 1).min(sh - 1);
            let px = &mut row[x * c..(x + 1) * c];
            for (ch, v) in px.iter_mut().enumerate() {
                let s = |xx: usize, yy: usize| src[(yy * sw + xx) * c + ch];
                let val = if fx == 0.0 && fy == 0.0 {
                    s(x0, y0)
                } else {
                    let top = s(x0, y0) * (1.0 - fx) + s(x1, y0) * fx;
                    let bottom = s(x0, y1) * (1.0 - fx) + s(x1, y1) * fx;
                    top * (1.0 - fy) + bottom * fy
                };
                *v = val.clamp(0.0, 1.0);
            }
        }
    });
    Raster::from_raw(out.width, out.height, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::synth;

    #[test]
    fn identity_is_exact() {
        let img = synth::texture(64, 48, 2);
        assert_eq!(warp_perspective(&img, &Homography::identity(), img.size()), img);
    }

    #[test]
    fn integer_translation_shifts_pixels() {
        let img = synth::texture(80, 60, 3);
        let out = warp_perspective(&img, &Homography::translation(10.0, 4.0), img.size());
        for y in 4..60 {
            for x in 10..80 {
                for c in 0..3 {
                    assert_eq!(out.get(x, y, c), img.get(x - 10, y - 4, c));
                }
            }
        }
        assert_eq!(out.get(3, 2, 0), 0.0);
    }

    #[test]
    fn round_trip_is_close_on_smooth_content() {
        let img = synth::smooth_field(200, 200, 4);
        let h = Homography::new([[1.02, 0.03, -4.0], [-0.02, 0.99, 3.0], [4e-5, -2e-5, 1.0]]).unwrap();
        let there = warp_perspective(&img, &h, img.size());
        let back = warp_perspective(&there, &h.inverse(), img.size());
        let crop = |r: &Raster| r.center_crop_percent(0.8).unwrap();
        let p = psnr(&crop(&img), &crop(&back)).unwrap();
        assert!(p > 35.0, "round-trip PSNR {p}");
    }
}
