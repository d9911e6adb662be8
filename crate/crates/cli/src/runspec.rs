//! JSON run specification: model, training recipe, optional HRF plan, data
//! source and output directory. Everything is checked before any work
//! starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use reparam_core::model::{registry, ModelConfig, ModelSpec, ModuleSelector, Structure};
use reparam_core::numcore::Activation;
use reparam_core::reparam::{HrfPlan, MAX_DEPTH};
use reparam_core::trainkit::{
    load_feature_manifest, load_wav_tree, stratified_split, synth_dataset, Splits, SyntheticTask, TrainConfig,
    DEFAULT_CLASSES, DEFAULT_FRAMES, DEFAULT_NOISE, CALIBRATED_PER_CLASS,
};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Lightweight,
    Original,
}

/// Family plus either a preset structure or explicit overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: String,
    #[serde(default)]
    pub preset: Preset,
    pub n_layer: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ffn: Option<usize>,
    pub n_heads: Option<usize>,
    pub activation: Option<Activation>,
    pub input_dim: Option<usize>,
    pub attention_window: Option<usize>,
    pub conv_kernel: Option<usize>,
}

impl ModelSection {
    pub fn resolve(&self, n_classes: usize) -> Result<ModelConfig> {
        let family = registry().get(&self.family)?;
        let base = match self.preset {
            Preset::Lightweight => family.lightweight(),
            Preset::Original => family.original(),
        };
        let structure = Structure::new(
            self.n_layer.unwrap_or(base.n_layer),
            self.d_model.unwrap_or(base.d_model),
            self.d_ffn.unwrap_or(base.d_ffn),
        );
        let mut c = ModelConfig::with_structure(family.name(), structure, n_classes)?;
        if let Some(v) = self.n_heads {
            c.n_heads = v;
        }
        if let Some(v) = self.activation {
            c.activation = v;
        }
        if let Some(v) = self.input_dim {
            c.input_dim = v;
        }
        if let Some(v) = self.attention_window {
            c.attention_window = v;
        }
        if let Some(v) = self.conv_kernel {
            c.conv_kernel = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_classes")]
        n_classes: usize,
        #[serde(default = "default_per_class")]
        samples_per_class: usize,
        #[serde(default = "default_noise")]
        noise_level: f64,
        #[serde(default = "default_frames")]
        frames: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Manifest of `path,label` lines pointing at feature CSVs.
    FeatureCsv {
        manifest: PathBuf,
        n_classes: usize,
        #[serde(default)]
        split_seed: u64,
    },
    /// One sub-directory of 16 kHz mono WAVs per class.
    WavDir {
        path: PathBuf,
        #[serde(default = "default_seconds")]
        seconds: f64,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_classes() -> usize {
    DEFAULT_CLASSES
}
fn default_per_class() -> usize {
    CALIBRATED_PER_CLASS
}
fn default_noise() -> f64 {
    DEFAULT_NOISE
}
fn default_frames() -> usize {
    DEFAULT_FRAMES
}
fn default_seconds() -> f64 {
    5.0
}

impl DataSource {
    fn n_classes(&self) -> Result<usize> {
        match self {
            DataSource::Synthetic { n_classes, .. } | DataSource::FeatureCsv { n_classes, .. } => Ok(*n_classes),
            DataSource::WavDir { path, .. } => {
                let n = fs::read_dir(path)
                    .map_err(|e| CliError::usage(format!("data.path {}: {e}", path.display())))?
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().is_dir())
                    .count();
                Ok(n)
            }
        }
    }

    fn synthetic_task(&self) -> Option<Result<SyntheticTask>> {
        match self {
            DataSource::Synthetic {
                n_classes,
                samples_per_class,
                noise_level,
                frames,
                ..
            } => Some(
                SyntheticTask::new(*n_classes, *samples_per_class)
                    .map(|t| t.with_noise(*noise_level).with_frames(*frames))
                    .and_then(|t| t.validate().map(|_| t))
                    .map_err(CliError::from),
            ),
            _ => None,
        }
    }

    pub fn load(&self) -> Result<Splits> {
        match self {
            DataSource::Synthetic { seed, .. } => {
                let task = self.synthetic_task().expect("synthetic source")?;
                Ok(synth_dataset(&task, *seed)?)
            }
            DataSource::FeatureCsv {
                manifest,
                n_classes,
                split_seed,
            } => Ok(stratified_split(load_feature_manifest(manifest, *n_classes)?, *split_seed)),
            DataSource::WavDir {
                path,
                seconds,
                split_seed,
            } => {
                let (data, names) = load_wav_tree(path, *seconds)?;
                log::info!("classes: {}", names.join(", "));
                Ok(stratified_split(data, *split_seed))
            }
        }
    }
}

/// Raw, as written by the user.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunSpec {
    model: ModelSection,
    #[serde(default)]
    train: Value,
    #[serde(default)]
    hrf: Option<HrfPlan>,
    data: DataSource,
    #[serde(default)]
    out: Option<PathBuf>,
}

/// Validated run specification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub hrf: Option<HrfPlan>,
    pub data: DataSource,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawRunSpec = serde_json::from_str(text).map_err(|e| CliError::usage(format!("run spec: {e}")))?;
        let n_classes = raw.data.n_classes()?;
        let model = raw
            .model
            .resolve(n_classes)
            .map_err(|e| CliError::usage(format!("model: {e}")))?;

        let lr_given = raw.train.get("lr0").is_some();
        let train_value = if raw.train.is_null() { Value::Object(Default::default()) } else { raw.train };
        let mut train: TrainConfig =
            serde_json::from_value(train_value).map_err(|e| CliError::usage(format!("train: {e}")))?;
        if !lr_given {
            train.lr0 = registry().get(&model.family)?.default_lr(model.structure());
        }

        let spec = Self {
            model,
            train,
            hrf: raw.hrf.filter(|p| !p.is_empty()),
            data: raw.data,
            out: raw.out,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| CliError::usage(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::usage(format!("train: {e}")))?;
        if let Some(plan) = &self.hrf {
            validate_plan(&self.model, plan)?;
        }
        if let Some(task) = self.data.synthetic_task() {
            task.map_err(|e| CliError::usage(format!("data: {e}")))?;
        }
        match &self.data {
            DataSource::FeatureCsv { manifest, .. } if !manifest.is_file() => {
                return Err(CliError::usage(format!("data.manifest {} does not exist", manifest.display())));
            }
            DataSource::WavDir { seconds, .. } if !(*seconds > 0.0) => {
                return Err(CliError::usage(format!("data.seconds must be > 0, got {seconds}")));
            }
            _ => {}
        }
        if self.model.n_classes < 2 {
            return Err(CliError::usage("data must have at least 2 classes"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.model.clone(), self.hrf.clone())
    }

    pub fn selectors(&self) -> Vec<ModuleSelector> {
        self.hrf
            .as_ref()
            .map(|p| p.selectors.iter().copied().collect())
            .unwrap_or_default()
    }
}

pub fn validate_plan(model: &ModelConfig, plan: &HrfPlan) -> Result<()> {
    if plan.ratio == 0 {
        return Err(CliError::usage("hrf.ratio must be >= 1"));
    }
    if !(1..=MAX_DEPTH).contains(&plan.depth) {
        return Err(CliError::usage(format!("hrf.depth must be in 1..={MAX_DEPTH}, got {}", plan.depth)));
    }
    let selectors: Vec<ModuleSelector> = plan.selectors.iter().copied().collect();
    registry()
        .get(&model.family)?
        .resolve(&selectors)
        .map_err(|e| CliError::usage(format!("hrf.selectors: {e}")))?;
    Ok(())
}
