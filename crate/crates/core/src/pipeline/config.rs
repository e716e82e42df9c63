use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::instruction::DEFAULT_ATTRIBUTE_PROBABILITY;
use crate::mask_ops::{DEFAULT_DILATION_KERNEL, DEFAULT_MIN_MATCH_IOU};
use crate::relations::DEFAULT_RELATION_THRESHOLD;
use crate::selection::SizeThresholds;

/// `build` configuration, read from a TOML file.
///
/// Relative paths are resolved against the directory holding the config
/// file. Manifest entries keep `images_dir` as written so that the manifest
/// does not depend on where the config lives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    pub annotations: PathBuf,
    pub images_dir: PathBuf,
    #[serde(default = "default_extension")]
    pub image_extension: String,
    pub output_dir: PathBuf,
    /// Registry file; the built-in registry when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    /// Retained-predicate cache. Created when missing.
    #[serde(default)]
    pub retained_predicates: Option<PathBuf>,
    /// JSON object mapping image id to `"train"` or `"test"`.
    #[serde(default)]
    pub split_map: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_extension() -> String {
    "png".into()
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    pub min_match_iou: f64,
    pub relation_frequency: f64,
    pub attribute_probability: f64,
    pub dilation_kernel: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        let size = SizeThresholds::default();
        Self {
            min_area_frac: size.min_area_frac,
            max_area_frac: size.max_area_frac,
            min_match_iou: DEFAULT_MIN_MATCH_IOU,
            relation_frequency: DEFAULT_RELATION_THRESHOLD,
            attribute_probability: DEFAULT_ATTRIBUTE_PROBABILITY,
            dilation_kernel: DEFAULT_DILATION_KERNEL,
        }
    }
}

impl Thresholds {
    pub fn size(&self) -> SizeThresholds {
        SizeThresholds {
            min_area_frac: self.min_area_frac,
            max_area_frac: self.max_area_frac,
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ForgeError::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("min_area_frac", self.min_area_frac)?;
        unit("max_area_frac", self.max_area_frac)?;
        unit("min_match_iou", self.min_match_iou)?;
        unit("relation_frequency", self.relation_frequency)?;
        unit("attribute_probability", self.attribute_probability)?;
        if self.min_area_frac > self.max_area_frac {
            return Err(ForgeError::Config("min_area_frac exceeds max_area_frac".into()));
        }
        if self.dilation_kernel == 0 || self.dilation_kernel.is_multiple_of(2) {
            return Err(ForgeError::Config(format!(
                "dilation_kernel = {} must be odd and positive",
                self.dilation_kernel
            )));
        }
        Ok(())
    }
}

/// External program invocation. Arguments may contain `{source}`, `{mask}`,
/// `{output}`, `{image_id}` and `{object_id}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskProviderSpec {
    #[default]
    Mock,
    /// `<path>/<image_id>.json` candidate manifests.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RefinerSpec {
    #[default]
    None,
    /// Pre-computed `<path>/<image_id>/<object_id>.png`.
    Directory { path: PathBuf },
    Command {
        #[serde(flatten)]
        command: CommandSpec,
        #[serde(default)]
        serialize: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InpainterSpec {
    #[default]
    Mock,
    /// Pre-computed `<path>/<image_id>/<object_id>.png`.
    Directory { path: PathBuf },
    Command {
        #[serde(flatten)]
        command: CommandSpec,
        #[serde(default)]
        serialize: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub masks: MaskProviderSpec,
    pub refiner: RefinerSpec,
    pub inpainter: InpainterSpec,
}

impl BuildConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: BuildConfig = toml::from_str(text).map_err(|e| ForgeError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(ForgeError::Config("workers must be at least 1".into()));
        }
        if self.image_extension.is_empty() || self.image_extension.contains(['/', '.']) {
            return Err(ForgeError::Config(format!(
                "invalid image_extension '{}'",
                self.image_extension
            )));
        }
        self.thresholds.validate()
    }

    /// Resolve a config-relative path.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}
