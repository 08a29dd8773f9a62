//! PSNR, SSIM and MS-SSIM on `[0, 1]` data, plus the evaluation report.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) over the valid region,
//! `C1 = 0.01^2`, `C2 = 0.03^2`. Color inputs are scored per channel and
//! averaged. PSNR uses the mean squared error over all samples.

mod report;

pub use report::{
    discover_items, evaluate_sets, reference_fixtures, Aggregate, EvalItem, ItemScore, MetricReport, ReferenceFixture,
    ThreeSizeAverage, THREE_SIZES,
};

use crate::error::{Error, Result};
use crate::raster::Raster;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn check_same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if a.size() != b.size() || a.channels() != b.channels() {
        return Err(Error::input(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.size(),
            a.channels(),
            b.size(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for data range 1. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.samples().len() as f64;
    let mse = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| {
            let d = *x - *y;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Normalized 11-tap Gaussian window.
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[derive(Clone)]
struct Channel {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Channel {
    fn of(img: &Raster, c: usize) -> Channel {
        let data = img.channel(c).samples().to_vec();
        Channel { w: img.width(), h: img.height(), data }
    }

    fn product(&self, other: &Channel) -> Channel {
        Channel { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() }
    }

    /// Valid-region separable filtering with the SSIM window.
    fn filter_valid(&self, win: &[f64; SSIM_WINDOW]) -> Channel {
        let ow = self.w - SSIM_WINDOW + 1;
        let oh = self.h - SSIM_WINDOW + 1;
        let mut tmp = vec![0f64; ow * self.h];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = win.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
            }
        }
        let mut out = vec![0f64; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = win.iter().enumerate().map(|(k, kv)| kv * tmp[(y + k) * ow + x]).sum();
            }
        }
        Channel { w: ow, h: oh, data: out }
    }

    /// `[1,2,1]` binomial low-pass with clamped borders, then 2x2 mean pooling.
    fn downsample(&self) -> Channel {
        let (w, h) = (self.w, self.h);
        let at = |x: isize, y: isize| {
            self.data[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize]
        };
        let mut blurred = vec![0f64; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (dy, wy) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                    for (dx, wx) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                        acc += wy * wx * at(x + dx, y + dy);
                    }
                }
                blurred[y as usize * w + x as usize] = acc / 16.0;
            }
        }
        let (ow, oh) = (w / 2, h / 2);
        let mut out = vec![0f64; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                out[y * ow + x] = 0.25 * (blurred[i] + blurred[i + 1] + blurred[i + w] + blurred[i + w + 1]);
            }
        }
        Channel { w: ow, h: oh, data: out }
    }
}

/// Mean SSIM and mean contrast-structure term of one channel pair.
fn ssim_terms(a: &Channel, b: &Channel) -> (f64, f64) {
    let win = ssim_window();
    let mu_a = a.filter_valid(&win);
    let mu_b = b.filter_valid(&win);
    let e_aa = a.product(a).filter_valid(&win);
    let e_bb = b.product(b).filter_valid(&win);
    let e_ab = a.product(b).filter_valid(&win);
    let n = mu_a.data.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let var_a = e_aa.data[i] - ma * ma;
        let var_b = e_bb.data[i] - mb * mb;
        let cov = e_ab.data[i] - ma * mb;
        let cs = (2.0 * cov + C2) / (var_a + var_b + C2);
        let lum = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// Mean structural similarity; color images average their per-channel scores.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.width().min(a.height()) < SSIM_WINDOW {
        return Err(Error::input(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let c = a.channels();
    let total: f64 = (0..c).map(|ch| ssim_terms(&Channel::of(a, ch), &Channel::of(b, ch)).0).sum();
    Ok(total / c as f64)
}

/// Number of dyadic scales usable for a `w`x`h` input (at most 5).
pub fn ms_ssim_scale_count(w: usize, h: usize) -> usize {
    let (mut w, mut h) = (w, h);
    let mut n = 0;
    while n < MS_SSIM_WEIGHTS.len() && w.min(h) >= SSIM_WINDOW {
        n += 1;
        w /= 2;
        h /= 2;
    }
    n
}

/// MS-SSIM value together with the number of scales actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub scales: usize,
}

/// Multi-scale SSIM. Inputs too small for five scales use as many as fit,
/// with the leading weights renormalized to sum to one. Negative per-scale
/// terms are clamped to zero before exponentiation.
pub fn ms_ssim_detailed(a: &Raster, b: &Raster) -> Result<MsSsim> {
    check_same_shape(a, b)?;
    let scales = ms_ssim_scale_count(a.width(), a.height());
    if scales == 0 {
        return Err(Error::input(format!("MS-SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let c = a.channels();
    let mut total = 0.0;
    for ch in 0..c {
        let (mut ca, mut cb) = (Channel::of(a, ch), Channel::of(b, ch));
        let mut value = 1.0;
        for (j, w) in weights.iter().enumerate() {
            let (s, cs) = ssim_terms(&ca, &cb);
            let term = if j + 1 == scales { s } else { cs };
            value *= term.max(0.0).powf(w / wsum);
            if j + 1 < scales {
                ca = ca.downsample();
                cb = cb.downsample();
            }
        }
        total += value;
    }
    Ok(MsSsim { value: total / c as f64, scales })
}

pub fn ms_ssim(a: &Raster, b: &Raster) -> Result<f64> {
    ms_ssim_detailed(a, b).map(|m| m.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-window SSIM with explicit loops.
    fn brute_ssim(a: &Raster, b: &Raster) -> f64 {
        let win = ssim_window();
        let mut per_channel = 0.0;
        for c in 0..a.channels() {
            let (w, h) = (a.width(), a.height());
            let mut sum = 0.0;
            let mut n = 0.0;
            for y0 in 0..=h - SSIM_WINDOW {
                for x0 in 0..=w - SSIM_WINDOW {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for j in 0..SSIM_WINDOW {
                        for i in 0..SSIM_WINDOW {
                            let k = win[i] * win[j];
                            ma += k * a.get(x0 + i, y0 + j, c);
                            mb += k * b.get(x0 + i, y0 + j, c);
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for j in 0..SSIM_WINDOW {
                        for i in 0..SSIM_WINDOW {
                            let k = win[i] * win[j];
                            let da = a.get(x0 + i, y0 + j, c) - ma;
                            let db = b.get(x0 + i, y0 + j, c) - mb;
                            va += k * da * da;
                            vb += k * db * db;
                            cov += k * da * db;
                        }
                    }
                    sum += (2.0 * ma * mb + C1) * (2.0 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                    n += 1.0;
                }
            }
            per_channel += sum / n;
        }
        per_channel / a.channels() as f64
    }

    fn noise(w: usize, h: usize, c: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = synth::texture(32, 32, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let base = Raster::filled(16, 16, 3, 0.3).unwrap();
        let shifted = Raster::filled(16, 16, 3, 0.4).unwrap();
        assert!((psnr(&base, &shifted).unwrap() - 20.0).abs() < 1e-5);
        let zero = Raster::filled(8, 8, 1, 0.0).unwrap();
        let one = Raster::filled(8, 8, 1, 1.0).unwrap();
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        assert!(psnr(&zero, &base).is_err());
    }

    #[test]
    fn psnr_symmetric_and_transform_invariant() {
        let a = synth::texture(40, 30, 2);
        let b = synth::texture(40, 30, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let ta = a.flip_rotate(true, false, 270).unwrap();
        let tb = b.flip_rotate(true, false, 270).unwrap();
        assert!((psnr(&ta, &tb).unwrap() - psnr(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_brute_force() {
        for seed in 0..5 {
            let a = noise(24, 20, 3, seed);
            let b = noise(24, 20, 3, seed + 100);
            assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-8);
        }
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = synth::texture(64, 64, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let flat = Raster::filled(20, 20, 1, 0.7).unwrap();
        assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-9);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.2);
        assert!(ssim(&Raster::filled(10, 30, 1, 0.1).unwrap(), &Raster::filled(10, 30, 1, 0.1).unwrap()).is_err());
    }

    #[test]
    fn ssim_constant_shift_closed_form() {
        // b = a + 0.5: structure/contrast term is exactly 1, luminance alone drops
        let a = synth::texture(48, 40, 6).to_grayscale().map(|v| v * 0.5);
        let b = a.map(|v| v + 0.5);
        let win = ssim_window();
        let mut sum = 0.0;
        let mut n = 0.0;
        for y0 in 0..=a.height() - SSIM_WINDOW {
            for x0 in 0..=a.width() - SSIM_WINDOW {
                let mut ma = 0.0;
                let mut mb = 0.0;
                for j in 0..SSIM_WINDOW {
                    for i in 0..SSIM_WINDOW {
                        ma += win[i] * win[j] * a.get(x0 + i, y0 + j, 0);
                        mb += win[i] * win[j] * b.get(x0 + i, y0 + j, 0);
                    }
                }
                sum += (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
                n += 1.0;
            }
        }
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.95);
        assert!((s - sum / n).abs() < 1e-6);
    }

    #[test]
    fn ms_ssim_identity_noise_and_monotonicity() {
        let a = synth::texture(192, 192, 8);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let n = noise(192, 192, 3, 9);
        assert!(ms_ssim(&a, &n).unwrap() < 0.2);
        let scores: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&s| ms_ssim(&a, &synth::add_noise(&a, s, 42)).unwrap())
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
        assert_eq!(ms_ssim_detailed(&a, &n).unwrap().scales, 5);
    }

    #[test]
    fn ms_ssim_symmetry_and_small_inputs() {
        let a = synth::texture(64, 50, 10);
        let b = synth::add_noise(&a, 0.05, 1);
        let ab = ms_ssim_detailed(&a, &b).unwrap();
        let ba = ms_ssim_detailed(&b, &a).unwrap();
        assert!((ab.value - ba.value).abs() < 1e-12);
        // 50 -> 25 -> 12 -> 6: three scales fit
        assert_eq!(ab.scales, 3);
        assert_eq!(ms_ssim_scale_count(176, 176), 5);
        assert_eq!(ms_ssim_scale_count(175, 300), 4);
        assert!(ms_ssim(&Raster::filled(10, 10, 1, 0.0).unwrap(), &Raster::filled(10, 10, 1, 0.0).unwrap()).is_err());
    }
}
