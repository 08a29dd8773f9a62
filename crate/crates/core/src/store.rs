//! Patch stores: ground-truth/scan patch pairs with provenance, persisted as
//! PNG files plus one `index.json` per directory.
//!
//! Files are named `{id}_gt.png` and `{id}_scan.png`, where `id` is
//! `{source}_{row}_{col}` for extracted patches.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io;
use crate::raster::Raster;
use crate::registration::Homography;

pub const INDEX_FILE: &str = "index.json";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub id: String,
    pub source_id: String,
    pub domain: String,
    pub row: usize,
    pub col: usize,
    /// Top-left corner of the sliding window in the resized frame.
    pub window_origin: (usize, usize),
    /// Scan-to-ground-truth homography in window coordinates.
    pub homography: Homography,
    pub inlier_count: usize,
    /// Local alignment failed and the identity was used.
    pub flagged: bool,
    /// Simulated degradation style, when the scan was synthesized.
    pub style: Option<String>,
    pub gt: Raster,
    /// Absent for unscanned (ground-truth only) sources.
    pub scan: Option<Raster>,
}

impl StoreEntry {
    pub fn patch_id(source_id: &str, row: usize, col: usize) -> String {
        format!("{source_id}_{row}_{col}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchStore {
    /// Patch size label such as `256` or `1072x720`.
    pub size_label: String,
    pub entries: Vec<StoreEntry>,
}

impl PatchStore {
    pub fn new(size_label: impl Into<String>) -> Self {
        PatchStore { size_label: size_label.into(), entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub id: String,
    pub source_id: String,
    pub domain: String,
    pub row: usize,
    pub col: usize,
    pub window_origin: [usize; 2],
    pub homography: Homography,
    pub inlier_count: usize,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    pub gt_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub version: u32,
    pub size: String,
    #[serde(default)]
    pub config: Value,
    pub entries: Vec<IndexRecord>,
}

impl StoreIndex {
    /// Parses an index file, naming the offending record on failure.
    pub fn read(path: &Path) -> Result<StoreIndex> {
        let text = fs::read_to_string(path)?;
        let root: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let field = |name: &str| {
            root.get(name).cloned().ok_or_else(|| Error::Index { record: "index".into(), message: format!("missing '{name}'") })
        };
        let version: u32 = serde_json::from_value(field("version")?)
            .map_err(|e| Error::Index { record: "index".into(), message: format!("version: {e}") })?;
        if version != INDEX_VERSION {
            return Err(Error::Index { record: "index".into(), message: format!("unsupported version {version}") });
        }
        let size: String = serde_json::from_value(field("size")?)
            .map_err(|e| Error::Index { record: "index".into(), message: format!("size: {e}") })?;
        let config = root.get("config").cloned().unwrap_or(Value::Null);
        let Value::Array(raw) = field("entries")? else {
            return Err(Error::Index { record: "index".into(), message: "'entries' is not an array".into() });
        };
        let mut entries = Vec::with_capacity(raw.len());
        for (i, v) in raw.into_iter().enumerate() {
            let name = v.get("id").and_then(Value::as_str).map(str::to_owned).unwrap_or_else(|| format!("#{i}"));
            let rec: IndexRecord =
                serde_json::from_value(v).map_err(|e| Error::Index { record: name, message: e.to_string() })?;
            entries.push(rec);
        }
        Ok(StoreIndex { version, size, config, entries })
    }
}

fn record_of(e: &StoreEntry) -> IndexRecord {
    IndexRecord {
        id: e.id.clone(),
        source_id: e.source_id.clone(),
        domain: e.domain.clone(),
        row: e.row,
        col: e.col,
        window_origin: [e.window_origin.0, e.window_origin.1],
        homography: e.homography,
        inlier_count: e.inlier_count,
        flagged: e.flagged,
        style: e.style.clone(),
        gt_file: format!("{}_gt.png", e.id),
        scan_file: e.scan.as_ref().map(|_| format!("{}_scan.png", e.id)),
    }
}

/// Writes the patch files of one entry and returns its index record.
pub fn write_entry_files(e: &StoreEntry, dir: &Path) -> Result<IndexRecord> {
    let r = record_of(e);
    io::save(&e.gt, dir.join(&r.gt_file))?;
    if let (Some(scan), Some(file)) = (&e.scan, &r.scan_file) {
        io::save(scan, dir.join(file))?;
    }
    Ok(r)
}

/// Writes `index.json` for patch files already in `dir`. The index goes to
/// a temporary file first and is renamed into place, so an interrupted
/// build never leaves an index behind.
pub fn write_index(dir: &Path, size_label: &str, config: &Value, records: Vec<IndexRecord>) -> Result<()> {
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Index { record: r.id.clone(), message: "duplicate patch id".into() });
        }
    }
    fs::create_dir_all(dir)?;
    let index = StoreIndex { version: INDEX_VERSION, size: size_label.to_owned(), config: config.clone(), entries: records };
    let tmp = dir.join(format!("{INDEX_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&index)?)?;
    fs::rename(&tmp, dir.join(INDEX_FILE))?;
    Ok(())
}

/// Writes every patch and then the index.
///
/// Samples are stored as 8-bit PNG; stores built from quantized patches
/// round-trip bit-exactly.
pub fn save_store(store: &PatchStore, dir: &Path, config: &Value) -> Result<()> {
    let mut seen = HashSet::new();
    for e in &store.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Index { record: e.id.clone(), message: "duplicate patch id".into() });
        }
    }
    fs::create_dir_all(dir)?;
    let records = store.entries.iter().map(|e| write_entry_files(e, dir)).collect::<Result<Vec<_>>>()?;
    write_index(dir, &store.size_label, config, records)
}

/// Loads a store saved by [`save_store`], returning its config snapshot too.
pub fn load_store(dir: &Path) -> Result<(PatchStore, Value)> {
    let index = StoreIndex::read(&dir.join(INDEX_FILE))?;
    let resolve = |id: &str, file: &str| -> Result<PathBuf> {
        let p = dir.join(file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Index { record: id.to_owned(), message: format!("dangling file reference '{file}'") })
        }
    };
    let mut entries = Vec::with_capacity(index.entries.len());
    for r in index.entries {
        let gt = io::load(resolve(&r.id, &r.gt_file)?)?;
        let scan = match &r.scan_file {
            Some(f) => Some(io::load(resolve(&r.id, f)?)?),
            None => None,
        };
        entries.push(StoreEntry {
            id: r.id,
            source_id: r.source_id,
            domain: r.domain,
            row: r.row,
            col: r.col,
            window_origin: (r.window_origin[0], r.window_origin[1]),
            homography: r.homography,
            inlier_count: r.inlier_count,
            flagged: r.flagged,
            style: r.style,
            gt,
            scan,
        });
    }
    Ok((PatchStore { size_label: index.size, entries }, index.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn entry(source: &str, row: usize, col: usize, with_scan: bool) -> StoreEntry {
        let gt = synth::texture(16, 16, (row * 10 + col) as u64).quantized();
        StoreEntry {
            id: StoreEntry::patch_id(source, row, col),
            source_id: source.into(),
            domain: "iphone-xr".into(),
            row,
            col,
            window_origin: (col * 8, row * 8),
            homography: Homography::translation(0.5, -0.25),
            inlier_count: 12,
            flagged: false,
            style: None,
            scan: with_scan.then(|| gt.map(|v| v * 0.9).quantized()),
            gt,
        }
    }

    #[test]
    fn save_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = PatchStore {
            size_label: "16".into(),
            entries: vec![entry("0001", 0, 0, true), entry("0001", 0, 1, true), entry("f0007", 1, 0, false)],
        };
        let cfg = serde_json::json!({"seed": 3});
        save_store(&store, dir.path(), &cfg).unwrap();
        assert!(dir.path().join("0001_0_1_gt.png").is_file());
        assert!(dir.path().join("0001_0_1_scan.png").is_file());
        let (back, cfg_back) = load_store(dir.path()).unwrap();
        assert_eq!(back, store);
        assert_eq!(cfg_back, cfg);
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = PatchStore::new("256");
        save_store(&store, dir.path(), &Value::Null).unwrap();
        assert_eq!(load_store(dir.path()).unwrap().0, store);
    }

    #[test]
    fn dangling_reference_names_the_patch() {
        let dir = tempfile::tempdir().unwrap();
        let store = PatchStore { size_label: "16".into(), entries: vec![entry("a", 0, 0, true), entry("a", 0, 1, true)] };
        save_store(&store, dir.path(), &Value::Null).unwrap();
        fs::remove_file(dir.path().join("a_0_1_scan.png")).unwrap();
        match load_store(dir.path()) {
            Err(Error::Index { record, .. }) => assert_eq!(record, "a_0_1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupted_record_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = PatchStore { size_label: "16".into(), entries: vec![entry("a", 0, 0, true)] };
        save_store(&store, dir.path(), &Value::Null).unwrap();
        let p = dir.path().join(INDEX_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"inlier_count\": 12", "\"inlier_count\": \"many\"");
        fs::write(&p, text).unwrap();
        match load_store(dir.path()) {
            Err(Error::Index { record, message }) => {
                assert_eq!(record, "a_0_0");
                assert!(message.contains("inlier_count") || message.contains("invalid type"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "{ not json").unwrap();
        assert!(matches!(load_store(dir.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = PatchStore { size_label: "16".into(), entries: vec![entry("a", 0, 0, true), entry("a", 0, 0, true)] };
        assert!(save_store(&store, dir.path(), &Value::Null).is_err());
        assert!(!dir.path().join(INDEX_FILE).exists());
    }
}
