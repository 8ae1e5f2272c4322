use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::numkit::AdamConfig;
use crate::synthgen::Dataset;
use crate::textcf::TextVariant;
use crate::videocf::VideoVariant;

/// Files a run reads or writes. Unset inputs fall back to built-in
/// resources; unset outputs are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub swap_table: Option<PathBuf>,
    pub bboxes: Option<PathBuf>,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_dir: Option<PathBuf>,
}

/// Model hyperparameters that are not fixed by the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub d: usize,
    pub heads: usize,
    pub n_video_layers: usize,
    pub n_text_layers: usize,
    pub patch_size: usize,
    pub text_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d: m.d,
            heads: m.heads,
            n_video_layers: m.n_video_layers,
            n_text_layers: m.n_text_layers,
            patch_size: m.patch_size,
            text_len: m.text_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub text_variant: TextVariant,
    pub video_variant: VideoVariant,
    /// Pixel value written into removed regions.
    pub fill: f64,
    /// Draw augmentation choices once per sample instead of once per epoch.
    pub freeze_augmentation: bool,
    /// Start stage 2 with fresh optimizer moments.
    pub reset_optimizer: bool,
    pub model: ModelShape,
    pub paths: RunPaths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            epochs: 35,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            weights: LossWeights::default(),
            text_variant: TextVariant::MaskThenSwap,
            video_variant: VideoVariant::Center,
            fill: 0.0,
            freeze_augmentation: false,
            reset_optimizer: true,
            model: ModelShape::default(),
            paths: RunPaths::default(),
        }
    }
}

impl TrainConfig {
    /// Stage-2 defaults: five epochs on top of a stage-1 checkpoint.
    pub fn stage2(checkpoint_in: PathBuf) -> Self {
        let mut c = Self {
            stage: 2,
            epochs: 5,
            ..Self::default()
        };
        c.paths.checkpoint_in = Some(checkpoint_in);
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply `key=value` overrides; nested keys use dots (`weights.alpha`).
    /// Values parse as JSON when they can, else as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[(S, S)]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            let (key, raw) = (key.as_ref(), raw.as_ref());
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {} is not a section", parts[..i].join("."))))?;
                node = obj
                    .get_mut(*part)
                    .ok_or_else(|| Error::Config(format!("unknown configuration key {key:?}")))?;
            }
            *node = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.stage, 1 | 2) {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return bad(format!("fill must lie in [0, 1], got {}", self.fill));
        }
        self.weights.validate()?;
        if self.stage == 2 && self.paths.checkpoint_in.is_none() {
            return bad("stage 2 needs a stage-1 checkpoint (paths.checkpoint_in)".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Full model configuration for `ds`: data-dependent sizes come from the
    /// dataset, the initialization seed from `self.seed`.
    pub fn model_config(&self, ds: &Dataset) -> ModelConfig {
        let w = &ds.meta.world;
        ModelConfig {
            d: self.model.d,
            heads: self.model.heads,
            n_video_layers: self.model.n_video_layers,
            n_text_layers: self.model.n_text_layers,
            n_frames: w.frames,
            channels: w.channels,
            height: w.height,
            width: w.width,
            patch_size: self.model.patch_size,
            text_len: self.model.text_len,
            token_vocab_size: ds.meta.vocab.len(),
            answer_set_size: ds.meta.answers.len(),
            seed: self.seed,
        }
    }
}
