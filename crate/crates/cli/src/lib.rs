//! Command-line front end for the scanforge pipeline.
//!
//! Exit codes: 0 success, 1 invalid usage, configuration or inputs,
//! 2 processing failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};

use scanforge::config::{PipelineConfig, SEED_ENV};
use scanforge::dataset::{self, BuildOptions, Manifest};
use scanforge::degrade::{simulate_domains, StyleLibrary};
use scanforge::local_align::{locally_align_pair, LocalAlignConfig, PatchSize};
use scanforge::metrics::{discover_items, evaluate_sets};
use scanforge::rectify::{global_align, load_quad_overrides, rectify_capture};
use scanforge::store::{load_store, save_store, PatchStore};
use scanforge::{io, Error};

pub const SNAPSHOT_FILE: &str = "config_snapshot.json";

#[derive(Debug, Parser)]
#[command(name = "scanforge", version, about = "Photo-scan rectification, alignment and patch dataset tools")]
struct Cli {
    /// TOML configuration, or a config_snapshot.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write a machine-readable run summary here.
    #[arg(long, global = true)]
    log_json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect the photo outline in captures and warp it top-down.
    Rectify(RectifyArgs),
    /// Globally register scans onto their ground truth.
    Align(AlignArgs),
    /// Cut locally aligned patch pairs from aligned scan/ground-truth images.
    Extract(ExtractArgs),
    /// Add simulated capture domains to a patch store.
    Simulate(SimulateArgs),
    /// Build patch datasets from a manifest.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Score predictions against ground truth.
    Metrics(MetricsArgs),
    /// Print the resolved configuration and derived geometry.
    Info,
}

#[derive(Debug, Args)]
struct RectifyArgs {
    /// Directory of captures.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON corner annotations that replace detection.
    #[arg(long)]
    overrides: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Directory of rectified scans.
    #[arg(long)]
    scans: PathBuf,
    /// Directory of ground-truth images with matching file stems.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Ground-truth image, or a directory of them.
    #[arg(long)]
    gt: PathBuf,
    /// Aligned scan, or a directory with matching file stems.
    #[arg(long)]
    scan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    mode: Mode,
    /// Patch side, or `full` for the single resized frame.
    #[arg(long)]
    size: Option<String>,
    /// Source id when extracting a single pair; defaults to the file stem.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "scan")]
    domain: String,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Patch store directory holding index.json.
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference images whose color statistics become styles.
    #[arg(long, group = "styles", required_unless_present = "styles_json")]
    styles_dir: Option<PathBuf>,
    /// Precomputed style statistics.
    #[arg(long, group = "styles")]
    styles_json: Option<PathBuf>,
    /// Styles per input pair.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    Build(BuildArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    /// First center-crop fraction.
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    drop_flagged: bool,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Ground-truth patch store tree or image directory.
    #[arg(long)]
    gt: PathBuf,
    /// Predictions at the same relative paths; omit to score a store's scans.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
    /// Some items failed; outputs for the rest were written.
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Partial(_) => 2,
            Failure::Core(e) => match e {
                Error::InvalidParameter(_)
                | Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::InvalidAnnotation { .. }
                | Error::MissingInputs(_) => 1,
                _ => 2,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Partial(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type CmdResult = Result<Value, Failure>;

/// Runs one command line (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let name = command_name(&cli.command);
    let mut seed = None;
    let outcome = prepare(&cli).and_then(|(cfg, pool)| {
        seed = cfg.seed;
        pool.install(|| dispatch(&cli.command, &cfg))
    });
    let code = match &outcome {
        Ok(_) => 0,
        Err(f) => {
            eprintln!("scanforge {name}: {}", f.message());
            f.exit_code()
        }
    };
    if let Some(path) = &cli.log_json {
        let mut summary = json!({ "command": name, "exit_code": code, "seed": seed });
        match outcome {
            Ok(v) => summary["summary"] = v,
            Err(f) => summary["error"] = Value::String(f.message()),
        }
        if let Err(e) = write_json(path, &summary) {
            eprintln!("scanforge: cannot write {}: {e}", path.display());
            return code.max(2);
        }
    }
    code
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Rectify(_) => "rectify",
        Command::Align(_) => "align",
        Command::Extract(_) => "extract",
        Command::Simulate(_) => "simulate",
        Command::Dataset { .. } => "dataset build",
        Command::Metrics(_) => "metrics",
        Command::Info => "info",
    }
}

fn prepare(cli: &Cli) -> Result<(PipelineConfig, rayon::ThreadPool), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    cfg.resolve_seed(cli.seed, env.as_deref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))?;
    Ok((cfg, pool))
}

fn dispatch(cmd: &Command, cfg: &PipelineConfig) -> CmdResult {
    match cmd {
        Command::Rectify(a) => cmd_rectify(a, cfg),
        Command::Align(a) => cmd_align(a, cfg),
        Command::Extract(a) => cmd_extract(a, cfg),
        Command::Simulate(a) => cmd_simulate(a, cfg),
        Command::Dataset { action: DatasetCommand::Build(a) } => cmd_dataset_build(a, cfg),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Info => {
            let d = cfg.describe()?;
            println!("{}", serde_json::to_string_pretty(&d).map_err(Error::from)?);
            Ok(d)
        }
    }
}

fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(v).expect("json values serialize"))
}

/// Records everything that determines a run's outputs next to them.
fn write_snapshot(dir: &Path, command: &str, args: Value, cfg: &PipelineConfig) -> Result<(), Failure> {
    let snap = json!({ "command": command, "args": args, "seed": cfg.seed(), "config": cfg });
    write_json(&dir.join(SNAPSHOT_FILE), &snap)?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !dir.is_dir() {
        return Err(Error::MissingInputs(vec![path_str(dir)]).into());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm" | "pnm"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Pairs every image in `a` with the same-stem image in `b`.
fn pair_by_stem(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, Failure> {
    let others: std::collections::BTreeMap<String, PathBuf> =
        list_images(b)?.into_iter().map(|p| (stem(&p), p)).collect();
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for p in list_images(a)? {
        let id = stem(&p);
        match others.get(&id) {
            Some(q) => pairs.push((id, p, q.clone())),
            None => missing.push(format!("{id}: no match in {}", b.display())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing).into());
    }
    Ok(pairs)
}

fn partial_failure(what: &str, failed: &[String]) -> CmdResult {
    Err(Failure::Partial(format!("{} {what} failed: {}", failed.len(), failed.join(", "))))
}

fn cmd_rectify(a: &RectifyArgs, cfg: &PipelineConfig) -> CmdResult {
    let overrides = match &a.overrides {
        Some(p) => load_quad_overrides(p)?,
        None => Default::default(),
    };
    let captures = list_images(&a.input)?;
    fs::create_dir_all(&a.out)?;
    let records: Vec<(String, Value)> = captures
        .par_iter()
        .map(|p| {
            let id = stem(p);
            let result = io::load(p).and_then(|img| {
                let r = rectify_capture(&img.to_rgb(), overrides.get(&id).copied(), &cfg.rectify.canny, cfg.rectify.output)?;
                io::save(&r.image, a.out.join(format!("{id}.png")))?;
                Ok(r)
            });
            let rec = match result {
                Ok(r) => {
                    info!("rectify {id}: {:?} quad", r.source);
                    json!({ "id": id, "status": "ok", "source": r.source, "quad": r.quad, "homography": r.homography })
                }
                Err(e) => {
                    warn!("rectify {id}: {e}");
                    json!({ "id": id, "status": "failed", "error": e.to_string() })
                }
            };
            (id, rec)
        })
        .collect();
    let failed: Vec<String> = records.iter().filter(|(_, r)| r["status"] == "failed").map(|(id, _)| id.clone()).collect();
    let audit: Vec<Value> = records.into_iter().map(|(_, r)| r).collect();
    write_json(&a.out.join("rectify_audit.json"), &Value::Array(audit))?;
    let args = json!({ "input": path_str(&a.input), "out": path_str(&a.out), "overrides": a.overrides.as_deref().map(path_str) });
    write_snapshot(&a.out, "rectify", args, cfg)?;
    if !failed.is_empty() {
        return partial_failure("captures", &failed);
    }
    Ok(json!({ "rectified": captures.len() }))
}

fn cmd_align(a: &AlignArgs, cfg: &PipelineConfig) -> CmdResult {
    let pairs = pair_by_stem(&a.scans, &a.gt)?;
    fs::create_dir_all(&a.out)?;
    let records: Vec<Value> = pairs
        .par_iter()
        .map(|(id, scan_path, gt_path)| {
            let result = io::load(scan_path).and_then(|scan| {
                let gt = io::load(gt_path)?.to_rgb();
                let g = global_align(&scan.to_rgb(), &gt, &cfg.align)?;
                io::save(&g.aligned, a.out.join(format!("{id}.png")))?;
                Ok(g)
            });
            match result {
                Ok(g) => {
                    info!("align {id}: {} inliers", g.inliers);
                    json!({ "id": id, "status": "ok", "homography": g.homography, "inliers": g.inliers })
                }
                Err(e) => {
                    warn!("align {id}: {e}");
                    json!({ "id": id, "status": "failed", "error": e.to_string() })
                }
            }
        })
        .collect();
    let failed: Vec<String> =
        records.iter().filter(|r| r["status"] == "failed").map(|r| r["id"].as_str().unwrap_or("").to_owned()).collect();
    write_json(&a.out.join("align_audit.json"), &Value::Array(records))?;
    let args = json!({ "scans": path_str(&a.scans), "gt": path_str(&a.gt), "out": path_str(&a.out) });
    write_snapshot(&a.out, "align", args, cfg)?;
    if !failed.is_empty() {
        return partial_failure("pairs", &failed);
    }
    Ok(json!({ "aligned": pairs.len() }))
}

fn parse_size(s: &str) -> Result<PatchSize, Failure> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(PatchSize::FullFrame);
    }
    s.parse::<usize>()
        .map(PatchSize::Square)
        .map_err(|_| Failure::Usage(format!("--size '{s}' is neither a patch side nor 'full'")))
}

fn extract_config(a: &ExtractArgs, cfg: &PipelineConfig) -> Result<LocalAlignConfig, Failure> {
    let base = match a.mode {
        Mode::Train => cfg.train.clone(),
        Mode::Eval => cfg.eval.base.clone(),
    };
    let la = match &a.size {
        Some(s) => LocalAlignConfig { patch: parse_size(s)?, ..base },
        None => base,
    };
    la.validate()?;
    Ok(la)
}

fn cmd_extract(a: &ExtractArgs, cfg: &PipelineConfig) -> CmdResult {
    let la = extract_config(a, cfg)?;
    let pairs = if a.gt.is_dir() {
        pair_by_stem(&a.gt, &a.scan)?
    } else {
        let missing: Vec<String> = [&a.gt, &a.scan].into_iter().filter(|p| !p.is_file()).map(|p| path_str(p)).collect();
        if !missing.is_empty() {
            return Err(Error::MissingInputs(missing).into());
        }
        vec![(a.id.clone().unwrap_or_else(|| stem(&a.gt)), a.gt.clone(), a.scan.clone())]
    };
    let per_source = pairs
        .par_iter()
        .map(|(id, gt_path, scan_path)| {
            let gt = io::load(gt_path)?.to_rgb();
            let scan = io::load(scan_path)?.to_rgb();
            let patches = locally_align_pair(&gt, &scan, &la)?;
            let flagged = patches.iter().filter(|p| p.flagged).count();
            info!("extract {id}: {} patches, {flagged} flagged", patches.len());
            Ok(patches.iter().map(|p| dataset::entry_from_pair(id, &a.domain, p)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let store = PatchStore { size_label: la.size_label(), entries: per_source.into_iter().flatten().collect() };
    let flagged = store.entries.iter().filter(|e| e.flagged).count();
    let snapshot = json!({ "pipeline": cfg, "local_align": la });
    save_store(&store, &a.out, &snapshot)?;
    let args = json!({
        "gt": path_str(&a.gt), "scan": path_str(&a.scan), "out": path_str(&a.out),
        "mode": format!("{:?}", a.mode).to_lowercase(), "size": a.size, "id": a.id, "domain": a.domain,
    });
    write_snapshot(&a.out, "extract", args, cfg)?;
    Ok(json!({ "sources": pairs.len(), "patches": store.len(), "flagged": flagged, "size": store.size_label }))
}

fn cmd_simulate(a: &SimulateArgs, cfg: &PipelineConfig) -> CmdResult {
    let styles = match (&a.styles_dir, &a.styles_json) {
        (Some(d), _) => StyleLibrary::from_dir(d)?,
        (None, Some(j)) => StyleLibrary::from_json(j)?,
        (None, None) => return Err(Failure::Usage("one of --styles-dir or --styles-json is required".into())),
    };
    let (store, _) = load_store(&a.store)?;
    let k = a.k.unwrap_or(cfg.simulate.k);
    let out = simulate_domains(&store, &styles, k, cfg.seed(), &cfg.simulate.noise)?;
    info!("simulate: {} pairs x {k} styles -> {}", store.len(), out.len());
    save_store(&out, &a.out, &json!({ "pipeline": cfg, "k": k }))?;
    let args = json!({
        "store": path_str(&a.store), "out": path_str(&a.out), "k": k,
        "styles_dir": a.styles_dir.as_deref().map(path_str), "styles_json": a.styles_json.as_deref().map(path_str),
    });
    write_snapshot(&a.out, "simulate", args, cfg)?;
    Ok(json!({ "input": store.len(), "output": out.len(), "k": k }))
}

fn cmd_dataset_build(a: &BuildArgs, cfg: &PipelineConfig) -> CmdResult {
    let manifest = Manifest::load(&a.manifest)?;
    let mut cfg = cfg.clone();
    if let Some(r1) = a.r1 {
        dataset::set_first_crop(&mut cfg.train, r1)?;
        dataset::set_first_crop(&mut cfg.eval.base, r1)?;
        cfg.validate()?;
    }
    let opts = BuildOptions { drop_flagged: a.drop_flagged, config_snapshot: serde_json::to_value(&cfg).map_err(Error::from)? };
    let report = match a.mode {
        Mode::Train => dataset::build_training_set(&manifest, &cfg.train, &a.out, &opts)?,
        Mode::Eval => dataset::build_eval_sets(&manifest, &cfg.eval.sizes, &cfg.eval.base, &cfg.eval.split, &a.out, &opts)?,
    };
    for l in &report.leaves {
        info!("dataset {}/{}/{}: {} patches, {} flagged", l.size, l.domain, l.split.as_str(), l.patches, l.flagged);
    }
    let args = json!({
        "manifest": path_str(&a.manifest), "mode": format!("{:?}", a.mode).to_lowercase(),
        "out": path_str(&a.out), "r1": a.r1, "drop_flagged": a.drop_flagged,
    });
    write_snapshot(&a.out, "dataset build", args, &cfg)?;
    Ok(json!({ "patches": report.total_patches(), "leaves": report.leaves }))
}

fn cmd_metrics(a: &MetricsArgs) -> CmdResult {
    if !a.gt.is_dir() {
        return Err(Error::MissingInputs(vec![path_str(&a.gt)]).into());
    }
    let items = discover_items(&a.gt, a.pred.as_deref())?;
    let report = evaluate_sets(&items)?;
    println!("{}", report.to_table());
    let value = serde_json::to_value(&report).map_err(Error::from)?;
    if let Some(out) = &a.out {
        write_json(out, &value)?;
    }
    if !report.is_complete() {
        return Err(Failure::Partial(format!("{} predictions missing", report.missing.len())));
    }
    Ok(json!({ "items": report.items.len(), "aggregates": value["aggregates"] }))
}
