//! Manifest-driven construction of training and evaluation patch stores.
//!
//! Stores are laid out as `out/{size}/{domain}/{split}/` with flat patch
//! files and one index per leaf. Patch files are written as each source
//! finishes; indexes are written last, so a failed build leaves none.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io;
use crate::local_align::{align_frames, ground_truth_patches, prepare_frames, LocalAlignConfig, PatchPair, PatchSize};
use crate::raster::Raster;
use crate::registration::Homography;
use crate::store::{write_entry_files, write_index, IndexRecord, StoreEntry};

/// Domain label for patches of sources that have no scan.
pub const GT_ONLY_DOMAIN: &str = "gt-only";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub gt_path: PathBuf,
    /// Globally aligned scan per domain, same size as the ground truth.
    #[serde(default)]
    pub scans: BTreeMap<String, PathBuf>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub domains: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub config: Value,
    /// Relative paths resolve against this directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() || e.id.contains(['/', '\\']) {
                return Err(Error::input(format!("manifest id '{}' is not a valid file stem", e.id)));
            }
            if !ids.insert(&e.id) {
                return Err(Error::input(format!("duplicate manifest id '{}'", e.id)));
            }
            if let Some(d) = e.scans.keys().find(|d| !self.domains.contains(d)) {
                return Err(Error::input(format!("entry '{}' uses undeclared domain '{d}'", e.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    /// Every referenced file of `role` entries that does not exist.
    pub fn missing_inputs(&self, role: Role) -> Vec<String> {
        let mut missing = Vec::new();
        for e in self.with_role(role) {
            for (label, p) in std::iter::once(("gt".to_string(), &e.gt_path)).chain(e.scans.iter().map(|(d, p)| (d.clone(), p))) {
                let full = self.resolve(p);
                if !full.is_file() {
                    missing.push(format!("{} ({label}): {}", e.id, full.display()));
                }
            }
        }
        missing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { val_fraction: 0.4, test_fraction: 0.6, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.val_fraction) && (0.0..=1.0).contains(&self.test_fraction);
        if !ok || (self.val_fraction + self.test_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::param("split fractions must lie in [0, 1] and sum to 1"));
        }
        Ok(())
    }

    /// Assigns whole sources to val or test: ids are sorted, shuffled with
    /// the seed, and the first `round(val_fraction * n)` go to val. The
    /// result does not depend on input order.
    pub fn assign<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, Split>> {
        self.validate()?;
        let mut ids: Vec<&str> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let n_val = (self.val_fraction * ids.len() as f64).round() as usize;
        Ok(ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id.to_owned(), if i < n_val { Split::Val } else { Split::Test }))
            .collect())
    }
}

/// Overrides the first center crop for subsequent builds.
pub fn set_first_crop(cfg: &mut LocalAlignConfig, r1: f64) -> Result<()> {
    if !(r1 > 0.0 && r1 <= 1.0) {
        return Err(Error::param(format!("r1 = {r1} must lie in (0, 1]")));
    }
    cfg.r1 = r1;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOptions {
    /// Leave out patches whose local alignment failed.
    pub drop_flagged: bool,
    /// Stored verbatim in every index for reproducibility.
    pub config_snapshot: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct LeafKey {
    size: String,
    domain: String,
    split: Split,
}

impl LeafKey {
    fn dir(&self, out: &Path) -> PathBuf {
        out.join(&self.size).join(&self.domain).join(self.split.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafSummary {
    pub dir: PathBuf,
    pub size: String,
    pub domain: String,
    pub split: Split,
    pub patches: usize,
    pub flagged: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct BuildReport {
    pub leaves: Vec<LeafSummary>,
}

impl BuildReport {
    pub fn total_patches(&self) -> usize {
        self.leaves.iter().map(|l| l.patches).sum()
    }

    pub fn leaf(&self, size: &str, domain: &str, split: Split) -> Option<&LeafSummary> {
        self.leaves.iter().find(|l| l.size == size && l.domain == domain && l.split == split)
    }
}

/// Store entry for a patch pair; samples are quantized to 8 bits so the
/// saved store reloads bit-exactly.
pub fn entry_from_pair(source_id: &str, domain: &str, p: &PatchPair) -> StoreEntry {
    StoreEntry {
        id: StoreEntry::patch_id(source_id, p.row, p.col),
        source_id: source_id.to_owned(),
        domain: domain.to_owned(),
        row: p.row,
        col: p.col,
        window_origin: p.window_origin,
        homography: p.homography,
        inlier_count: p.inlier_count,
        flagged: p.flagged,
        style: None,
        gt: p.gt.quantized(),
        scan: Some(p.scan.quantized()),
    }
}

fn load_rgb(m: &Manifest, p: &Path) -> Result<Raster> {
    Ok(io::load(m.resolve(p))?.to_rgb())
}

struct Job<'a> {
    entry: &'a ManifestEntry,
    domain: Option<&'a str>,
    split: Split,
}

/// One patch destined for a leaf; `None` when dropped as flagged.
type Produced = (LeafKey, Option<IndexRecord>, bool);

fn run_job(m: &Manifest, job: &Job, configs: &[LocalAlignConfig], out: &Path, opts: &BuildOptions) -> Result<Vec<Produced>> {
    let gt = load_rgb(m, &job.entry.gt_path)?;
    let id = job.entry.id.as_str();
    let mut produced = Vec::new();
    match job.domain {
        Some(domain) => {
            let scan = load_rgb(m, &job.entry.scans[domain])?;
            // every size shares the first crop and resize
            let frames = prepare_frames(&gt, &scan, &configs[0])?;
            for cfg in configs {
                let key = LeafKey { size: cfg.size_label(), domain: domain.to_owned(), split: job.split };
                let dir = key.dir(out);
                fs::create_dir_all(&dir)?;
                for p in align_frames(&frames, cfg)? {
                    if p.flagged && opts.drop_flagged {
                        produced.push((key.clone(), None, true));
                        continue;
                    }
                    let rec = write_entry_files(&entry_from_pair(id, domain, &p), &dir)?;
                    produced.push((key.clone(), Some(rec), p.flagged));
                }
            }
        }
        None => {
            for cfg in configs {
                let key = LeafKey { size: cfg.size_label(), domain: GT_ONLY_DOMAIN.to_owned(), split: job.split };
                let dir = key.dir(out);
                fs::create_dir_all(&dir)?;
                let cols = grid_columns(cfg);
                for (k, patch) in ground_truth_patches(&gt, cfg)?.into_iter().enumerate() {
                    let (row, col) = (k / cols, k % cols);
                    let stride = cfg.stride_px();
                    let origin = if cfg.patch == PatchSize::FullFrame { (0, 0) } else { (col * stride, row * stride) };
                    let e = StoreEntry {
                        id: StoreEntry::patch_id(id, row, col),
                        source_id: id.to_owned(),
                        domain: GT_ONLY_DOMAIN.to_owned(),
                        row,
                        col,
                        window_origin: origin,
                        homography: Homography::identity(),
                        inlier_count: 0,
                        flagged: false,
                        style: None,
                        gt: patch.quantized(),
                        scan: None,
                    };
                    produced.push((key.clone(), Some(write_entry_files(&e, &dir)?), false));
                }
            }
        }
    }
    Ok(produced)
}

fn grid_columns(cfg: &LocalAlignConfig) -> usize {
    match cfg.patch {
        PatchSize::FullFrame => 1,
        PatchSize::Square(_) => (cfg.frame.width - cfg.window_side()) / cfg.stride_px() + 1,
    }
}

fn build(
    m: &Manifest,
    jobs: Vec<Job>,
    configs: &[LocalAlignConfig],
    leaves: Vec<LeafKey>,
    out: &Path,
    opts: &BuildOptions,
) -> Result<BuildReport> {
    let produced: Vec<Vec<Produced>> =
        jobs.par_iter().map(|j| run_job(m, j, configs, out, opts)).collect::<Result<Vec<_>>>()?;
    let mut grouped: BTreeMap<LeafKey, (Vec<IndexRecord>, usize, usize)> =
        leaves.into_iter().map(|k| (k, (Vec::new(), 0, 0))).collect();
    for (key, rec, flagged) in produced.into_iter().flatten() {
        let slot = grouped.entry(key).or_default();
        match rec {
            Some(r) => {
                slot.1 += flagged as usize;
                slot.0.push(r);
            }
            None => slot.2 += 1,
        }
    }
    let by_label: BTreeMap<String, &LocalAlignConfig> = configs.iter().map(|c| (c.size_label(), c)).collect();
    let mut report = BuildReport::default();
    for (key, (records, flagged, dropped)) in grouped {
        let dir = key.dir(out);
        let snapshot = json!({ "pipeline": opts.config_snapshot, "local_align": by_label.get(&key.size) });
        report.leaves.push(LeafSummary {
            dir: dir.clone(),
            size: key.size.clone(),
            domain: key.domain.clone(),
            split: key.split,
            patches: records.len(),
            flagged,
            dropped,
        });
        write_index(&dir, &key.size, &snapshot, records)?;
    }
    Ok(report)
}

fn domains_in(m: &Manifest, role: Role) -> Vec<String> {
    let mut d = m.domains.clone();
    if m.with_role(role).any(|e| e.scans.is_empty()) {
        d.push(GT_ONLY_DOMAIN.to_owned());
    }
    d
}

fn jobs_for(m: &Manifest, role: Role, split_of: impl Fn(&str) -> Split) -> Vec<Job<'_>> {
    m.with_role(role)
        .flat_map(|e| {
            let split = split_of(&e.id);
            let scanned: Vec<Job> = e.scans.keys().map(|d| Job { entry: e, domain: Some(d.as_str()), split }).collect();
            if scanned.is_empty() {
                vec![Job { entry: e, domain: None, split }]
            } else {
                scanned
            }
        })
        .collect()
}

/// Locally aligned training patches for every `train` entry and scan
/// domain; entries without scans give ground-truth-only patches.
pub fn build_training_set(m: &Manifest, cfg: &LocalAlignConfig, out: &Path, opts: &BuildOptions) -> Result<BuildReport> {
    cfg.validate()?;
    let missing = m.missing_inputs(Role::Train);
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let leaves = domains_in(m, Role::Train)
        .into_iter()
        .map(|domain| LeafKey { size: cfg.size_label(), domain, split: Split::Train })
        .collect();
    build(m, jobs_for(m, Role::Train, |_| Split::Train), std::slice::from_ref(cfg), leaves, out, opts)
}

/// Evaluation stores for every size in `sizes`, split 40/60 by source.
/// `base` supplies the frame, crops and stride; only the patch size varies.
pub fn build_eval_sets(
    m: &Manifest,
    sizes: &[PatchSize],
    base: &LocalAlignConfig,
    split: &SplitSpec,
    out: &Path,
    opts: &BuildOptions,
) -> Result<BuildReport> {
    if sizes.is_empty() {
        return Err(Error::param("no evaluation sizes requested"));
    }
    let configs: Vec<LocalAlignConfig> = sizes.iter().map(|&patch| LocalAlignConfig { patch, ..base.clone() }).collect();
    for c in &configs {
        c.validate()?;
    }
    let missing = m.missing_inputs(Role::Eval);
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let assignment = split.assign(m.with_role(Role::Eval).map(|e| e.id.as_str()))?;
    let mut leaves = Vec::new();
    for c in &configs {
        for domain in domains_in(m, Role::Eval) {
            for s in [Split::Val, Split::Test] {
                leaves.push(LeafKey { size: c.size_label(), domain: domain.clone(), split: s });
            }
        }
    }
    let jobs = jobs_for(m, Role::Eval, |id| assignment[id]);
    build(m, jobs, &configs, leaves, out, opts)
}

/// Recomputes one stored patch pair from its sources and index record,
/// quantized the same way as at build time.
pub fn rederive_patch(m: &Manifest, cfg: &LocalAlignConfig, rec: &IndexRecord) -> Result<(Raster, Option<Raster>)> {
    let entry = m
        .entries
        .iter()
        .find(|e| e.id == rec.source_id)
        .ok_or_else(|| Error::Index { record: rec.id.clone(), message: format!("unknown source '{}'", rec.source_id) })?;
    let gt = load_rgb(m, &entry.gt_path)?;
    let origin = (rec.window_origin[0], rec.window_origin[1]);
    match entry.scans.get(&rec.domain) {
        Some(p) => {
            let scan = load_rgb(m, p)?;
            let frames = prepare_frames(&gt, &scan, cfg)?;
            let (g, s) = frames.rederive(origin, &rec.homography, cfg)?;
            Ok((g.quantized(), Some(s.quantized())))
        }
        None => {
            let cols = grid_columns(cfg);
            let patches = ground_truth_patches(&gt, cfg)?;
            let k = rec.row * cols + rec.col;
            let g = patches.get(k).ok_or_else(|| Error::Index { record: rec.id.clone(), message: "outside the grid".into() })?;
            Ok((g.quantized(), None))
        }
    }
}
