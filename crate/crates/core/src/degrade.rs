//! Color balance, color style transfer and degradation-domain simulation.
//!
//! Style transfer matches per-channel mean and standard deviation in the
//! decorrelated l-alpha-beta space (logarithmic LMS cone responses).

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::blur_raster;
use crate::io;
use crate::local_align::PatchPair;
use crate::raster::{Raster, Rotation};
use crate::store::{PatchStore, StoreEntry};
use crate::synth::add_noise;

/// Nearest-rank quantile of an unsorted slice: the `ceil(p n)`-th smallest
/// value (the smallest for `p = 0`).
fn nearest_rank(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    *values.select_nth_unstable_by(rank - 1, f64::total_cmp).1
}

/// Simplest color balance: per channel, clip to the `s_low` and `1 - s_high`
/// quantiles and stretch that range to `[0, 1]`. Channels whose quantiles
/// coincide are left unchanged.
pub fn simplest_color_balance(img: &Raster, s_low: f64, s_high: f64) -> Result<Raster> {
    if !(s_low >= 0.0 && s_high >= 0.0 && s_low + s_high < 1.0) {
        return Err(Error::param("color balance saturation must satisfy s_low + s_high < 1"));
    }
    let c = img.channels();
    let mut ranges = Vec::with_capacity(c);
    for ch in 0..c {
        let mut v: Vec<f64> = img.samples().iter().skip(ch).step_by(c).copied().collect();
        let lo = nearest_rank(&mut v, s_low);
        let hi = nearest_rank(&mut v, 1.0 - s_high);
        ranges.push((lo, hi));
    }
    let data = img
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = ranges[i % c];
            if hi - lo <= 1e-12 {
                v
            } else {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        })
        .collect();
    Raster::from_vec(img.width(), img.height(), c, data)
}

const LMS_FLOOR: f64 = 1e-6;

struct LabSpace {
    rgb_to_lms: Matrix3<f64>,
    lms_to_rgb: Matrix3<f64>,
    log_to_lab: Matrix3<f64>,
    lab_to_log: Matrix3<f64>,
}

fn lab_space() -> &'static LabSpace {
    static SPACE: OnceLock<LabSpace> = OnceLock::new();
    SPACE.get_or_init(|| {
        let rgb_to_lms = Matrix3::new(0.3811, 0.5783, 0.0402, 0.1967, 0.7244, 0.0782, 0.0241, 0.1288, 0.8444);
        let scale = Matrix3::from_diagonal(&nalgebra::Vector3::new(
            1.0 / 3f64.sqrt(),
            1.0 / 6f64.sqrt(),
            1.0 / 2f64.sqrt(),
        ));
        let log_to_lab = scale * Matrix3::new(1.0, 1.0, 1.0, 1.0, 1.0, -2.0, 1.0, -1.0, 0.0);
        LabSpace {
            lms_to_rgb: rgb_to_lms.try_inverse().expect("LMS basis is invertible"),
            lab_to_log: log_to_lab.try_inverse().expect("lab basis is invertible"),
            rgb_to_lms,
            log_to_lab,
        }
    })
}

fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let s = lab_space();
    let lms = s.rgb_to_lms * nalgebra::Vector3::from(rgb);
    let log = lms.map(|v| v.max(LMS_FLOOR).log10());
    (s.log_to_lab * log).into()
}

fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let s = lab_space();
    let lms = (s.lab_to_log * nalgebra::Vector3::from(lab)).map(|v| 10f64.powf(v));
    (s.lms_to_rgb * lms).into()
}

fn pixels(img: &Raster) -> Result<impl Iterator<Item = [f64; 3]> + '_> {
    if img.channels() != 3 {
        return Err(Error::input("color statistics need a 3-channel raster"));
    }
    Ok(img.samples().chunks_exact(3).map(|p| [p[0], p[1], p[2]]))
}

/// Per-channel mean and standard deviation in l-alpha-beta space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ColorStats {
    pub fn of(img: &Raster) -> Result<ColorStats> {
        let lab: Vec<[f64; 3]> = pixels(img)?.map(rgb_to_lab).collect();
        let n = lab.len() as f64;
        let mean: [f64; 3] = std::array::from_fn(|c| lab.iter().map(|p| p[c]).sum::<f64>() / n);
        let std = std::array::from_fn(|c| (lab.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt());
        Ok(ColorStats { mean, std })
    }
}

/// Moves `content`'s l-alpha-beta statistics onto `style`. Channels with
/// (near) zero spread in the content only receive the mean shift.
pub fn transfer_color_style(content: &Raster, style: &ColorStats) -> Result<Raster> {
    let own = ColorStats::of(content)?;
    let gain: [f64; 3] = std::array::from_fn(|c| if own.std[c] < 1e-6 { 1.0 } else { style.std[c] / own.std[c] });
    let data: Vec<f64> = pixels(content)?
        .flat_map(|p| {
            let lab = rgb_to_lab(p);
            let moved = std::array::from_fn(|c| (lab[c] - own.mean[c]) * gain[c] + style.mean[c]);
            lab_to_rgb(moved).map(|v| v.clamp(0.0, 1.0))
        })
        .collect();
    Raster::from_vec(content.width(), content.height(), 3, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStyle {
    pub name: String,
    #[serde(flatten)]
    pub stats: ColorStats,
}

/// Ordered set of reference color styles.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleLibrary {
    pub styles: Vec<NamedStyle>,
}

impl StyleLibrary {
    /// Statistics of every image in `dir`, ordered by file name.
    pub fn from_dir(dir: &Path) -> Result<StyleLibrary> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "ppm" | "pnm")))
            .collect();
        paths.sort();
        let styles = paths
            .par_iter()
            .map(|p| {
                let img = io::load(p)?.to_rgb();
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(NamedStyle { name, stats: ColorStats::of(&img)? })
            })
            .collect::<Result<Vec<_>>>()?;
        StyleLibrary::new(styles)
    }

    pub fn from_json(path: &Path) -> Result<StyleLibrary> {
        let text = fs::read_to_string(path)?;
        let lib: StyleLibrary = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        StyleLibrary::new(lib.styles)
    }

    pub fn new(styles: Vec<NamedStyle>) -> Result<StyleLibrary> {
        if styles.is_empty() {
            return Err(Error::input("style library is empty"));
        }
        if styles.iter().any(|s| s.stats.std.iter().any(|v| !(*v >= 0.0))) {
            return Err(Error::input("style standard deviations must be non-negative"));
        }
        Ok(StyleLibrary { styles })
    }

    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }
}

/// Optional device-variation extras applied after the color transfer. Both
/// are off by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceNoise {
    /// Gaussian blur sigma, at most 1 px.
    pub blur_sigma: f64,
    /// Additive Gaussian noise sigma, at most 0.01.
    pub noise_sigma: f64,
}

impl DeviceNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blur_sigma) || !(0.0..=0.01).contains(&self.noise_sigma) {
            return Err(Error::param("device blur must lie in [0, 1] and noise in [0, 0.01]"));
        }
        Ok(())
    }
}

/// Stable 64-bit mix of a seed with a string and an index (FNV-1a followed
/// by a splitmix64 finalizer), independent of platform and toolchain.
pub fn tuple_seed(seed: u64, key: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()).chain(&index.to_le_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// For every scanned entry, picks `k` distinct styles and emits one new
/// entry per style with the scan restyled and the ground truth untouched.
/// Entries without a scan are skipped.
///
/// Style choice and noise are seeded per (seed, entry id, style) tuple, so
/// the result does not depend on thread count. Output samples are quantized
/// to 8 bits like every stored patch.
pub fn simulate_domains(
    store: &PatchStore,
    styles: &StyleLibrary,
    k: usize,
    seed: u64,
    extras: &DeviceNoise,
) -> Result<PatchStore> {
    extras.validate()?;
    if k == 0 || k > styles.len() {
        return Err(Error::param(format!("k = {k} must lie in 1..={}", styles.len())));
    }
    let tuples: Vec<(&StoreEntry, usize)> = store
        .entries
        .iter()
        .filter(|e| e.scan.is_some())
        .flat_map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(tuple_seed(seed, &e.id, u64::MAX));
            let mut picks = sample(&mut rng, styles.len(), k).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(move |s| (e, s))
        })
        .collect();
    let entries = tuples
        .par_iter()
        .map(|&(e, s)| {
            let style = &styles.styles[s];
            let scan = e.scan.as_ref().expect("filtered to scanned entries");
            let mut out = transfer_color_style(&scan.to_rgb(), &style.stats)?;
            if extras.blur_sigma > 0.0 {
                out = blur_raster(&out, extras.blur_sigma);
            }
            if extras.noise_sigma > 0.0 {
                out = add_noise(&out, extras.noise_sigma, tuple_seed(seed, &e.id, s as u64));
            }
            Ok(StoreEntry {
                id: format!("{}_s{s:03}", e.id),
                domain: format!("sim-{}", style.name),
                style: Some(style.name.clone()),
                scan: Some(out.quantized()),
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchStore { size_label: store.size_label.clone(), entries })
}

/// One of the sixteen flip/rotation combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip_h: bool,
    pub flip_v: bool,
    pub rotation: Rotation,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation { flip_h: false, flip_v: false, rotation: Rotation::R0 };

    /// Uniform draw over the sixteen combinations.
    pub fn sample(rng: &mut impl Rng) -> Augmentation {
        let code: usize = rng.gen_range(0..16);
        Augmentation { flip_h: code & 1 != 0, flip_v: code & 2 != 0, rotation: Rotation::ALL[code >> 2] }
    }

    pub fn from_seed(seed: u64) -> Augmentation {
        Augmentation::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn apply(&self, img: &Raster) -> Raster {
        img.transformed(self.flip_h, self.flip_v, self.rotation)
    }
}

/// Applies one random flip/rotation to both patches of `p`.
pub fn augment_pair(p: &PatchPair, seed: u64) -> PatchPair {
    let a = Augmentation::from_seed(seed);
    PatchPair { gt: a.apply(&p.gt), scan: a.apply(&p.scan), ..p.clone() }
}
