//! Top-level pipeline configuration, read from TOML.
//!
//! One seed drives every random choice: RANSAC sampling in each alignment
//! stage, the val/test split and domain simulation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::SplitSpec;
use crate::degrade::DeviceNoise;
use crate::error::{Error, Result};
use crate::local_align::{overlap_fraction, LocalAlignConfig, PatchSize};
use crate::raster::Size;
use crate::rectify::CannyParams;
use crate::registration::AlignParams;

/// Environment variable consulted when neither a flag nor the config file
/// sets the seed.
pub const SEED_ENV: &str = "SCANFORGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RectifyConfig {
    pub canny: CannyParams,
    /// Top-down output size.
    pub output: Size,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig { canny: CannyParams::default(), output: Size { width: 1080, height: 720 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Frame, crops and stride; `patch` is replaced by each entry of `sizes`.
    pub base: LocalAlignConfig,
    pub sizes: Vec<PatchSize>,
    pub split: SplitSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            base: LocalAlignConfig::evaluation(PatchSize::Square(256)),
            sizes: vec![
                PatchSize::Square(176),
                PatchSize::Square(256),
                PatchSize::Square(384),
                PatchSize::Square(576),
                PatchSize::FullFrame,
            ],
            split: SplitSpec::default(),
        }
    }
}

impl EvalConfig {
    pub fn for_size(&self, patch: PatchSize) -> LocalAlignConfig {
        LocalAlignConfig { patch, ..self.base.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Styles drawn per input pair.
    pub k: usize,
    pub noise: DeviceNoise,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { k: 100, noise: DeviceNoise::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// `None` defers to the command line or the environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rectify: RectifyConfig,
    /// Global scan-to-ground-truth registration.
    pub align: AlignParams,
    pub train: LocalAlignConfig,
    pub eval: EvalConfig,
    pub simulate: SimulateConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::Parse { path: origin.to_path_buf(), line, column, message: e.message().to_owned() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file, or a JSON run snapshot whose `config` member holds
    /// a resolved configuration.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let parse_err = |e: serde_json::Error| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            };
            let mut v: Value = serde_json::from_str(&text).map_err(parse_err)?;
            if let Some(inner) = v.get_mut("config") {
                v = inner.take();
            }
            let cfg: PipelineConfig = serde_json::from_value(v).map_err(parse_err)?;
            cfg.validate()?;
            return Ok(cfg);
        }
        PipelineConfig::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.rectify.canny.validate()?;
        if self.rectify.output.width == 0 || self.rectify.output.height == 0 {
            return Err(Error::param("rectify output size must be positive"));
        }
        self.align.ransac.validate()?;
        self.train.validate()?;
        if self.eval.sizes.is_empty() {
            return Err(Error::param("eval.sizes is empty"));
        }
        for &s in &self.eval.sizes {
            self.eval.for_size(s).validate()?;
        }
        self.eval.split.validate()?;
        if self.simulate.k == 0 {
            return Err(Error::param("simulate.k must be positive"));
        }
        self.simulate.noise.validate()
    }

    /// Fixes the seed (flag, then file, then environment, then 0) and copies
    /// it into every seeded stage.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
        let env_seed = match env {
            Some(s) => Some(s.trim().parse::<u64>().map_err(|_| Error::param(format!("{SEED_ENV}='{s}' is not a u64")))?),
            None => None,
        };
        let seed = flag.or(self.seed).or(env_seed).unwrap_or(0);
        self.seed = Some(seed);
        self.align.ransac.seed = seed;
        self.train.align.ransac.seed = seed;
        self.eval.base.align.ransac.seed = seed;
        self.eval.split.seed = seed;
        Ok(seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Resolved settings plus the derived window side, stride in pixels,
    /// overlap and patch count of every local-alignment configuration.
    pub fn describe(&self) -> Result<Value> {
        let derived = |c: &LocalAlignConfig| -> Result<Value> {
            Ok(serde_json::json!({
                "size": c.size_label(),
                "window_side": c.window_side(),
                "stride_px": c.stride_px(),
                "overlap": overlap_fraction(c.stride, c.r2)?,
                "patches_per_image": c.patches_per_image()?,
            }))
        };
        let eval = self.eval.sizes.iter().map(|&s| derived(&self.eval.for_size(s))).collect::<Result<Vec<_>>>()?;
        Ok(serde_json::json!({
            "config": self,
            "derived": { "train": derived(&self.train)?, "eval": eval },
        }))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.patches_per_image().unwrap(), 15);
        let counts: Vec<usize> = cfg.eval.sizes.iter().map(|&s| cfg.eval.for_size(s).patches_per_image().unwrap()).collect();
        assert_eq!(counts, [40, 15, 6, 1, 1]);
        assert_eq!(cfg.simulate.k, 100);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text, Path::new("c.toml")).unwrap(), cfg);
        let partial = "seed = 7\n[train]\nr1 = 0.85\n[eval]\nsizes = [{ square = 256 }, \"full_frame\"]\n";
        let p = PipelineConfig::from_toml_str(partial, Path::new("c.toml")).unwrap();
        assert_eq!((p.seed, p.train.r1, p.eval.sizes.len()), (Some(7), 0.85, 2));
        assert_eq!(p.train.r2, 0.95);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        match PipelineConfig::from_toml_str("seed = 1\n\n[train]\nwindow = 3\n", Path::new("c.toml")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let bad = "[train]\npatch = { square = 800 }\n";
        assert!(matches!(PipelineConfig::from_toml_str(bad, Path::new("c.toml")), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn seed_precedence() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.clone().resolve_seed(None, None).unwrap(), 0);
        assert_eq!(c.clone().resolve_seed(None, Some("9")).unwrap(), 9);
        c.seed = Some(4);
        assert_eq!(c.clone().resolve_seed(None, Some("9")).unwrap(), 4);
        assert_eq!(c.resolve_seed(Some(2), Some("9")).unwrap(), 2);
        assert_eq!((c.train.align.ransac.seed, c.eval.split.seed, c.align.ransac.seed), (2, 2, 2));
        assert!(PipelineConfig::default().resolve_seed(None, Some("x")).is_err());
    }

    #[test]
    fn describe_reports_derived_geometry() {
        let d = PipelineConfig::default().describe().unwrap();
        assert_eq!(d["derived"]["train"]["window_side"], 269);
        assert_eq!(d["derived"]["train"]["stride_px"], 175);
        assert_eq!(d["derived"]["eval"][0]["window_side"], 220);
    }
}
