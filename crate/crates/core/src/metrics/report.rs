//! Evaluation over patch stores: per-item scores, per (domain, size) means and
//! the three-size average.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ms_ssim_detailed, psnr};
use crate::error::{Error, Result};
use crate::io;
use crate::store::{StoreIndex, INDEX_FILE};

/// Sizes averaged for the headline score.
pub const THREE_SIZES: [&str; 3] = ["176", "256", "384"];

const NOTES: &[&str] = &[
    "metrics computed on RGB samples in [0, 1]",
    "PSNR: data range 1, MSE over all samples; identical images report inf",
    "SSIM family: 11x11 Gaussian window (sigma 1.5), scored per channel and averaged",
    "LPIPS is not computed",
];

/// One prediction to score against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub size: String,
    pub domain: String,
    pub gt_path: PathBuf,
    pub pred_path: PathBuf,
}

mod psnr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub size: String,
    pub domain: String,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Scales used by MS-SSIM; fewer than five on small inputs.
    pub ms_ssim_scales: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    /// Arithmetic mean; infinite when any item is.
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub psnr_infinite: usize,
    pub ms_ssim: f64,
}

impl Aggregate {
    fn of(scores: &[&ItemScore]) -> Aggregate {
        let n = scores.len() as f64;
        Aggregate {
            count: scores.len(),
            psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
            psnr_infinite: scores.iter().filter(|s| s.psnr.is_infinite()).count(),
            ms_ssim: scores.iter().map(|s| s.ms_ssim).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeSizeAverage {
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ms_ssim: f64,
}

/// A published score kept for labelling only; it cannot be reproduced
/// without the physical scans and fully trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub method: String,
    pub domain: String,
    pub size: String,
    pub psnr: f64,
    pub lpips: f64,
    pub ms_ssim: f64,
    pub reproducible: bool,
}

pub fn reference_fixtures() -> Vec<ReferenceFixture> {
    let row = |method: &str, domain: &str, size: &str, psnr, lpips, ms_ssim| ReferenceFixture {
        method: method.into(),
        domain: domain.into(),
        size: size.into(),
        psnr,
        lpips,
        ms_ssim,
        reproducible: false,
    };
    vec![
        row("1D-DPScan", "iphone-xr", "256", 25.26, 0.1242, 0.9446),
        row("G-DPScan", "all", "average", 23.17, 0.1719, 0.9228),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub notes: Vec<String>,
    pub items: Vec<ItemScore>,
    /// Ids whose prediction file was absent; excluded from every mean.
    pub missing: Vec<String>,
    /// domain -> size -> aggregate
    pub aggregates: BTreeMap<String, BTreeMap<String, Aggregate>>,
    /// Mean of the per-size means, only for domains scored at all three sizes.
    pub three_size_average: BTreeMap<String, ThreeSizeAverage>,
    pub reference_fixtures: Vec<ReferenceFixture>,
}

impl MetricReport {
    pub fn from_scores(items: Vec<ItemScore>, missing: Vec<String>) -> MetricReport {
        let mut groups: BTreeMap<String, BTreeMap<String, Vec<&ItemScore>>> = BTreeMap::new();
        for s in &items {
            groups.entry(s.domain.clone()).or_default().entry(s.size.clone()).or_default().push(s);
        }
        let aggregates: BTreeMap<String, BTreeMap<String, Aggregate>> = groups
            .into_iter()
            .map(|(d, by_size)| (d, by_size.into_iter().map(|(sz, v)| (sz, Aggregate::of(&v))).collect()))
            .collect();
        let three_size_average = aggregates
            .iter()
            .filter_map(|(d, by_size)| {
                let aggs: Option<Vec<&Aggregate>> = THREE_SIZES.iter().map(|s| by_size.get(*s)).collect();
                let aggs = aggs?;
                Some((
                    d.clone(),
                    ThreeSizeAverage {
                        psnr: aggs.iter().map(|a| a.psnr).sum::<f64>() / 3.0,
                        ms_ssim: aggs.iter().map(|a| a.ms_ssim).sum::<f64>() / 3.0,
                    },
                ))
            })
            .collect();
        MetricReport {
            notes: NOTES.iter().map(|s| s.to_string()).collect(),
            items,
            missing,
            aggregates,
            three_size_average,
            reference_fixtures: reference_fixtures(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// Text table: one row per domain, PSNR / MS-SSIM per size, then the
    /// three-size average.
    pub fn to_table(&self) -> String {
        let mut sizes: Vec<&String> = self.aggregates.values().flat_map(|m| m.keys()).collect();
        sizes.sort_by_key(|s| (s.parse::<u64>().map_or(u64::MAX, |v| v), s.to_string()));
        sizes.dedup();
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "domain");
        for s in &sizes {
            let _ = write!(out, " | {:>17}", s);
        }
        let _ = writeln!(out, " | {:>17}", "average");
        let cell = |p: f64, m: f64| format!("{:>7} / {:.4}", if p.is_infinite() { "inf".into() } else { format!("{p:.2}") }, m);
        for (domain, by_size) in &self.aggregates {
            let _ = write!(out, "{:<16}", domain);
            for s in &sizes {
                let text = by_size.get(*s).map_or("-".to_string(), |a| cell(a.psnr, a.ms_ssim));
                let _ = write!(out, " | {:>17}", text);
            }
            let avg = self.three_size_average.get(domain).map_or("-".to_string(), |a| cell(a.psnr, a.ms_ssim));
            let _ = writeln!(out, " | {:>17}", avg);
        }
        if !self.missing.is_empty() {
            let _ = writeln!(out, "missing outputs: {}", self.missing.len());
        }
        out
    }
}

/// Scores every item in parallel. Items whose prediction is absent are
/// listed in `missing`; any other failure aborts the evaluation.
pub fn evaluate_sets(items: &[EvalItem]) -> Result<MetricReport> {
    let results: Vec<Result<Option<ItemScore>>> = items
        .par_iter()
        .map(|it| {
            if !it.pred_path.is_file() {
                return Ok(None);
            }
            let gt = io::load(&it.gt_path)?;
            let pred = io::load(&it.pred_path)?;
            let ms = ms_ssim_detailed(&pred, &gt)?;
            Ok(Some(ItemScore {
                id: it.id.clone(),
                size: it.size.clone(),
                domain: it.domain.clone(),
                psnr: psnr(&pred, &gt)?,
                ms_ssim: ms.value,
                ms_ssim_scales: ms.scales,
                lpips: None,
            }))
        })
        .collect();
    let mut scores = Vec::new();
    let mut missing = Vec::new();
    for (it, r) in items.iter().zip(results) {
        match r? {
            Some(s) => scores.push(s),
            None => missing.push(it.id.clone()),
        }
    }
    Ok(MetricReport::from_scores(scores, missing))
}

fn collect_files(dir: &Path, found: &mut Vec<PathBuf>, name_filter: &dyn Fn(&Path) -> bool) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, found, name_filter)?;
        } else if name_filter(&p) {
            found.push(p);
        }
    }
    Ok(())
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "ppm" | "pgm" | "pnm"))
}

/// Builds the item list for `gt_root`.
///
/// Directories holding a store index contribute one item per indexed patch,
/// labelled with the store's size and each patch's domain. Otherwise every
/// image under `gt_root` is an item in domain `default`, sized by its
/// dimensions. Predictions are looked up under `pred_root` at the same
/// relative path; with no `pred_root` the store's own scan patches are
/// scored, which gives the unrestored baseline.
pub fn discover_items(gt_root: &Path, pred_root: Option<&Path>) -> Result<Vec<EvalItem>> {
    let mut indexes = Vec::new();
    collect_files(gt_root, &mut indexes, &|p| p.file_name().is_some_and(|n| n == INDEX_FILE))?;
    let rel = |p: &Path| p.strip_prefix(gt_root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let mut items = Vec::new();
    if !indexes.is_empty() {
        for index_path in indexes {
            let dir = index_path.parent().unwrap_or(gt_root);
            let index = StoreIndex::read(&index_path)?;
            for r in index.entries {
                let gt_path = dir.join(&r.gt_file);
                let pred_path = match pred_root {
                    Some(root) => root.join(rel(&gt_path)),
                    None => match &r.scan_file {
                        Some(f) => dir.join(f),
                        None => continue,
                    },
                };
                items.push(EvalItem { id: r.id, size: index.size.clone(), domain: r.domain, gt_path, pred_path });
            }
        }
        return Ok(items);
    }
    let pred_root = pred_root.ok_or_else(|| Error::input("ground-truth directory has no store index; a prediction directory is required"))?;
    let mut images = Vec::new();
    collect_files(gt_root, &mut images, &is_image)?;
    for gt_path in images {
        let r = rel(&gt_path);
        let (w, h) = image::image_dimensions(&gt_path)
            .map_err(|e| Error::Codec { path: gt_path.clone(), message: e.to_string() })?;
        let size = if w == h { w.to_string() } else { format!("{w}x{h}") };
        let id = r.with_extension("").to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/");
        items.push(EvalItem { id, size, domain: "default".into(), pred_path: pred_root.join(&r), gt_path });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use crate::synth;

    fn score(domain: &str, size: &str, psnr: f64, ms: f64) -> ItemScore {
        ItemScore { id: format!("{domain}-{size}-{psnr}"), size: size.into(), domain: domain.into(), psnr, ms_ssim: ms, ms_ssim_scales: 5, lpips: None }
    }

    #[test]
    fn aggregates_are_plain_means() {
        let items = vec![
            score("a", "176", 20.0, 0.8),
            score("a", "176", 30.0, 0.9),
            score("a", "256", 24.0, 0.85),
            score("a", "384", 27.0, 0.95),
            score("b", "176", 10.0, 0.5),
        ];
        let r = MetricReport::from_scores(items, vec![]);
        let a176 = &r.aggregates["a"]["176"];
        assert_eq!(a176.count, 2);
        assert!((a176.psnr - 25.0).abs() < 1e-12);
        assert!((a176.ms_ssim - 0.85).abs() < 1e-12);
        let avg = &r.three_size_average["a"];
        assert!((avg.psnr - (25.0 + 24.0 + 27.0) / 3.0).abs() < 1e-12);
        assert!((avg.ms_ssim - (0.85 + 0.85 + 0.95) / 3.0).abs() < 1e-12);
        assert!(!r.three_size_average.contains_key("b"));
        assert!(r.to_table().contains("25.00 / 0.8500"));
    }

    #[test]
    fn infinite_psnr_serializes_as_text() {
        let r = MetricReport::from_scores(vec![score("a", "176", f64::INFINITY, 1.0)], vec![]);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":\"inf\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.aggregates["a"]["176"].psnr_infinite, 1);
    }

    #[test]
    fn fixtures_are_labels_only() {
        let f = reference_fixtures();
        assert!(f.iter().all(|x| !x.reproducible));
        let dp = f.iter().find(|x| x.method == "1D-DPScan").unwrap();
        assert_eq!((dp.psnr, dp.ms_ssim), (25.26, 0.9446));
    }

    #[test]
    fn plain_directories_and_missing_outputs() {
        let gt = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let img: Raster = synth::texture(40, 40, 1).quantized();
        for name in ["x.png", "y.png"] {
            io::save(&img, gt.path().join("sub").join(name)).unwrap();
        }
        io::save(&img, pred.path().join("sub").join("x.png")).unwrap();
        let items = discover_items(gt.path(), Some(pred.path())).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].id, "sub/x");
        assert_eq!(items[0].size, "40");
        let r = evaluate_sets(&items).unwrap();
        assert_eq!(r.missing, vec!["sub/y".to_string()]);
        assert_eq!(r.items.len(), 1);
        assert!(r.items[0].psnr.is_infinite());
        assert!((r.items[0].ms_ssim - 1.0).abs() < 1e-9);
        assert!(!r.is_complete());
    }
}
