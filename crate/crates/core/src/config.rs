//! Run configuration and manifests.
//!
//! A configuration file is flat TOML with dotted keys:
//!
//! ```toml
//! paths.input_image = "photo.png"
//! schedule.iterations = 50
//! seed = 3
//! ```
//!
//! Every key can be overridden with `key=value` pairs (the command line's
//! `--set`), which win over the file. Relative paths in a file are taken
//! relative to that file. `UVREFINE_WEIGHTS` overrides `paths.weights_bundle`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::weights::sha256_hex;
use crate::features::{LayerSelection, WeightsSource};
use crate::geometry::{MorphologyParams, StyleParams, DEFAULT_VISIBILITY_THRESHOLD};
use crate::losses::LossWeights;
use crate::pyramid::DEFAULT_BASE_RESOLUTION;
use crate::refine::{default_boundary_margin, LossTerms, RefineOptions, StageSchedule};

pub const WEIGHTS_ENV: &str = "UVREFINE_WEIGHTS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input_image: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub pose: Option<PathBuf>,
    pub content_texture: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub weights_bundle: Option<PathBuf>,
}

/// Used when no bundle path is configured: deterministic random filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub sha256: Option<String>,
    pub seed: u64,
    pub width_divisor: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            sha256: None,
            seed: 0,
            width_divisor: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub stages: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub scales: Vec<usize>,
    pub scale_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = StageSchedule::default();
        Self {
            stages: s.num_stages,
            iterations: s.iterations,
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            scales: s.scales,
            scale_decay: s.scale_decay,
            alpha: s.initial.alpha,
            beta: s.initial.beta,
            gamma: s.initial.gamma,
        }
    }
}

/// Mask cleanup radii are given at 512 texels and scaled to the resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub visibility_threshold: f64,
    pub open_radius: usize,
    pub close_radius: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            visibility_threshold: DEFAULT_VISIBILITY_THRESHOLD,
            open_radius: 3,
            close_radius: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub content_points: usize,
    pub style_points: usize,
    pub base_resolution: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let o = RefineOptions::default();
        Self {
            content_points: o.content_points,
            style_points: o.style_points,
            base_resolution: DEFAULT_BASE_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagsConfig {
    pub normalize_render_loss: bool,
    /// Defaults to four texels at 512, scaled.
    pub boundary_margin_px: Option<usize>,
}

impl Default for FlagsConfig {
    fn default() -> Self {
        Self {
            normalize_render_loss: true,
            boundary_margin_px: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Side of the refined texture.
    pub resolution: usize,
    /// Comma-separated layer ids; empty for the default selection.
    pub layers: String,
    pub paths: PathsConfig,
    pub weights: WeightsConfig,
    pub schedule: ScheduleConfig,
    pub geometry: GeometryConfig,
    pub sampling: SamplingConfig,
    pub flags: FlagsConfig,
    pub terms: LossTerms,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 512,
            layers: String::new(),
            paths: PathsConfig::default(),
            weights: WeightsConfig::default(),
            schedule: ScheduleConfig::default(),
            geometry: GeometryConfig::default(),
            sampling: SamplingConfig::default(),
            flags: FlagsConfig::default(),
            terms: LossTerms::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses the right-hand side of `key=value`: a TOML value if it is one,
/// a bare string otherwise.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut t = table;
    for p in parents {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Builds a configuration from file text (relative paths resolved
    /// against `base_dir`), the environment override and `key=value`
    /// overrides, in increasing precedence.
    pub fn build(text: &str, base_dir: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        if let (Some(base), Some(toml::Value::Table(paths))) = (base_dir, table.get_mut("paths")) {
            for (_, v) in paths.iter_mut() {
                if let Some(s) = v.as_str().filter(|s| Path::new(s).is_relative()) {
                    *v = toml::Value::String(base.join(s).to_string_lossy().into_owned());
                }
            }
        }
        if let Ok(w) = std::env::var(WEIGHTS_ENV) {
            if !w.is_empty() {
                set_dotted(&mut table, "paths.weights_bundle", toml::Value::String(w))?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::MissingArtifact(p.to_path_buf()),
                    _ => Error::io(p, e),
                })?;
                Self::build(&text, p.parent(), overrides)
            }
            None => Self::build("", None, overrides),
        }
    }

    /// Type-level checks; path existence is checked per command by
    /// [`RunConfig::require`].
    pub fn validate(&self) -> Result<()> {
        crate::geometry::check_texture_resolution(self.resolution)?;
        self.refine_options()?;
        if !(0.0..=1.0).contains(&self.geometry.visibility_threshold) {
            return Err(Error::Config("geometry.visibility_threshold must lie in [0, 1]".into()));
        }
        if self.paths.weights_bundle.is_none() && self.weights.width_divisor == 0 {
            return Err(Error::Config("weights.width_divisor must be at least 1".into()));
        }
        let top = self.schedule.scales.last().copied().unwrap_or(0);
        if top != self.resolution {
            return Err(Error::Config(format!(
                "the last schedule scale ({top}) must equal resolution ({})",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StageSchedule {
        let s = &self.schedule;
        StageSchedule {
            num_stages: s.stages,
            initial: LossWeights {
                alpha: s.alpha,
                beta: s.beta,
                gamma: s.gamma,
            },
            scales: s.scales.clone(),
            iterations: s.iterations,
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            scale_decay: s.scale_decay,
        }
    }

    pub fn refine_options(&self) -> Result<RefineOptions> {
        let schedule = self.schedule();
        schedule.validate()?;
        Ok(RefineOptions {
            schedule,
            content_points: self.sampling.content_points,
            style_points: self.sampling.style_points,
            base_resolution: self.sampling.base_resolution,
            normalize_render_loss: self.flags.normalize_render_loss,
            boundary_margin: self
                .flags
                .boundary_margin_px
                .unwrap_or_else(|| default_boundary_margin(self.resolution)),
            seed: self.seed,
            terms: self.terms,
        })
    }

    pub fn style_params(&self) -> StyleParams {
        let g = &self.geometry;
        StyleParams {
            threshold: g.visibility_threshold,
            morphology: MorphologyParams::scaled(g.open_radius, g.close_radius, self.resolution),
        }
    }

    pub fn layer_selection(&self) -> LayerSelection {
        if self.layers.trim().is_empty() {
            LayerSelection::default()
        } else {
            LayerSelection::parse(&self.layers)
        }
    }

    pub fn weights_source(&self) -> WeightsSource {
        match &self.paths.weights_bundle {
            Some(path) => WeightsSource::File {
                path: path.clone(),
                sha256: self.weights.sha256.clone(),
            },
            None => WeightsSource::Seeded {
                seed: self.weights.seed,
                width_divisor: self.weights.width_divisor,
            },
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Returns the named path, failing if it is unset or does not exist.
    pub fn require(&self, name: &str) -> Result<&Path> {
        let p = match name {
            "input_image" => &self.paths.input_image,
            "mesh" => &self.paths.mesh,
            "pose" => &self.paths.pose,
            "content_texture" => &self.paths.content_texture,
            "weights_bundle" => &self.paths.weights_bundle,
            _ => return Err(Error::Config(format!("unknown path `{name}`"))),
        };
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{name} is not set")))?;
        if !p.exists() {
            return Err(Error::MissingArtifact(p.to_path_buf()));
        }
        Ok(p)
    }

    /// Canonical text form; parsing it back yields the same configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

/// Everything needed to reproduce a run: written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub weights_checksum: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config.sha256(),
            seed: config.seed,
            weights_checksum: None,
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
