//! The JSON run configuration: one file drives dataset location and
//! preprocessing, model topology, training hyperparameters and Grad-CAM
//! rendering. Every key has a default; `docs/config.md` lists them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use brainseg_core::dataset::{Modality, SliceWindow};
use brainseg_core::explain::{GradCamConfig, GradCamTarget};
use brainseg_core::model::ModelConfig;

use crate::error::{Error, Result};
use crate::train::{LossKind, TrainConfig};

fn default_modalities() -> Vec<String> {
    vec!["flair".to_string(), "t1ce".to_string()]
}

fn default_split_ratios() -> [f64; 3] {
    [0.70, 0.15, 0.15]
}

fn default_exclusions() -> Vec<String> {
    vec!["BraTS20_Training_355".to_string()]
}

fn default_slice_start() -> usize {
    22
}

fn default_slice_count() -> usize {
    100
}

fn default_image_size() -> usize {
    128
}

fn default_num_classes() -> usize {
    4
}

fn default_depth() -> usize {
    4
}

fn default_base_filters() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_learning_rate() -> f64 {
    1e-4
}

fn default_batch_size() -> usize {
    16
}

fn default_max_epochs() -> usize {
    50
}

fn default_loss() -> LossKind {
    LossKind::Combined
}

fn default_early_stop_patience() -> usize {
    10
}

fn default_plateau_factor() -> f64 {
    0.2
}

fn default_plateau_patience() -> usize {
    5
}

fn default_min_lr() -> f64 {
    1e-7
}

fn default_gradcam_sigma() -> f64 {
    2.0
}

fn default_gradcam_alpha() -> f64 {
    0.4
}

/// Everything a run needs, deserialized from one JSON file. Unknown keys are
/// rejected so typos surface as validation errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding one subdirectory per case.
    pub data_root: PathBuf,
    /// Directory receiving history, weights and the resolved config.
    pub output_dir: PathBuf,
    /// Input channels in order; subset of {"flair", "t1ce"}.
    #[serde(default = "default_modalities")]
    pub modalities: Vec<String>,
    /// Train/validation/test fractions; must sum to 1.
    #[serde(default = "default_split_ratios")]
    pub split_ratios: [f64; 3],
    /// Case ids removed before splitting.
    #[serde(default = "default_exclusions")]
    pub exclusions: Vec<String>,
    /// First axial slice taken from each volume.
    #[serde(default = "default_slice_start")]
    pub slice_start: usize,
    /// Number of axial slices taken per volume.
    #[serde(default = "default_slice_count")]
    pub slice_count: usize,
    /// Square side length slices are resized to.
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    /// Encoder levels.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Channels of the first encoder level; doubles per level.
    #[serde(default = "default_base_filters")]
    pub base_filters: usize,
    /// False bypasses the attention gates (plain U-Net ablation).
    #[serde(default = "default_true")]
    pub attention_enabled: bool,
    /// Master seed: the model initializer uses `seed`, the dataset split
    /// `seed + 1`, the batch shuffler `seed + 2`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_early_stop_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "default_plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_min_lr")]
    pub min_lr: f64,
    /// False writes zero in the history's seconds column so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Gaussian smoothing width for heatmaps, in heatmap pixels.
    #[serde(default = "default_gradcam_sigma")]
    pub gradcam_sigma: f64,
    /// Heatmap opacity in the overlay blend.
    #[serde(default = "default_gradcam_alpha")]
    pub gradcam_alpha: f64,
    /// True restricts the Grad-CAM score to pixels predicted as the target.
    #[serde(default)]
    pub gradcam_masked_score: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::validation("modalities must be nonempty"));
        }
        for m in &self.modalities {
            if m != "flair" && m != "t1ce" {
                return Err(Error::validation(format!(
                    "unknown modality {m:?}; expected \"flair\" or \"t1ce\""
                )));
            }
        }
        if self.modalities.len() > 2 {
            return Err(Error::validation("modalities lists more than two entries"));
        }
        if self.modalities.len() == 2 && self.modalities[0] == self.modalities[1] {
            return Err(Error::validation(format!(
                "modality {:?} is listed twice",
                self.modalities[0]
            )));
        }
        let ratio_sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|&r| r < 0.0) || (ratio_sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split_ratios {:?} must be non-negative and sum to 1",
                self.split_ratios
            )));
        }
        if self.num_classes != 4 {
            return Err(Error::validation(format!(
                "num_classes {} is unsupported; masks are one-hot over 4 classes",
                self.num_classes
            )));
        }
        if self.depth < 1 {
            return Err(Error::validation("depth must be at least 1"));
        }
        if self.base_filters < 1 {
            return Err(Error::validation("base_filters must be at least 1"));
        }
        let divisor = 1usize << self.depth;
        if self.image_size < 2 || self.image_size % divisor != 0 {
            return Err(Error::validation(format!(
                "image_size {} must be a multiple of 2^depth = {divisor}",
                self.image_size
            )));
        }
        if self.slice_count < 1 {
            return Err(Error::validation("slice_count must be at least 1"));
        }
        self.train_config().validate()?;
        self.gradcam_config(None).validate().map_err(Error::Core)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            in_channels: self.modalities.len(),
            num_classes: self.num_classes,
            depth: self.depth,
            base_filters: self.base_filters,
            attention_enabled: self.attention_enabled,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            loss: self.loss,
            early_stop_patience: self.early_stop_patience,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
            min_lr: self.min_lr,
            seed: self.seed.wrapping_add(2),
            record_wall_time: self.record_wall_time,
        }
    }

    /// Grad-CAM settings; `class` narrows the target to one label.
    pub fn gradcam_config(&self, class: Option<usize>) -> GradCamConfig {
        GradCamConfig {
            target: match class {
                Some(c) => GradCamTarget::Class(c),
                None => GradCamTarget::CombinedTumor,
            },
            masked_score: self.gradcam_masked_score,
            sigma: self.gradcam_sigma,
            alpha: self.gradcam_alpha,
        }
    }

    pub fn modality_list(&self) -> Vec<Modality> {
        self.modalities
            .iter()
            .map(|m| if m == "flair" { Modality::Flair } else { Modality::T1ce })
            .collect()
    }

    pub fn slice_window(&self) -> SliceWindow {
        SliceWindow { start: self.slice_start, count: self.slice_count }
    }

    /// Seed for the dataset split shuffle.
    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Writes the fully resolved config (every key explicit) as pretty JSON.
pub fn save_config(config: &RunConfig, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{"data_root": "/data", "output_dir": "/out"}"#.to_string()
    }

    fn parse(json: &str) -> RunConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn defaults_match_the_documented_values() {
        let c = parse(&minimal_json());
        assert_eq!(c.modalities, vec!["flair", "t1ce"]);
        assert_eq!(c.split_ratios, [0.70, 0.15, 0.15]);
        assert_eq!(c.exclusions, vec!["BraTS20_Training_355"]);
        assert_eq!(c.slice_start, 22);
        assert_eq!(c.slice_count, 100);
        assert_eq!(c.image_size, 128);
        assert_eq!(c.num_classes, 4);
        assert_eq!(c.depth, 4);
        assert_eq!(c.base_filters, 8);
        assert!(c.attention_enabled);
        assert_eq!(c.seed, 0);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.max_epochs, 50);
        assert_eq!(c.loss, LossKind::Combined);
        assert_eq!(c.early_stop_patience, 10);
        assert_eq!(c.plateau_factor, 0.2);
        assert_eq!(c.plateau_patience, 5);
        assert_eq!(c.min_lr, 1e-7);
        assert!(!c.record_wall_time);
        assert_eq!(c.gradcam_sigma, 2.0);
        assert_eq!(c.gradcam_alpha, 0.4);
        assert!(!c.gradcam_masked_score);
        c.validate().unwrap();
    }

    #[test]
    fn derived_seeds_are_offset_from_the_master_seed() {
        let mut c = parse(&minimal_json());
        c.seed = 40;
        assert_eq!(c.model_config().seed, 40);
        assert_eq!(c.split_seed(), 41);
        assert_eq!(c.train_config().seed, 42);
    }

    #[test]
    fn in_channels_follows_the_modality_list() {
        let mut c = parse(&minimal_json());
        assert_eq!(c.model_config().in_channels, 2);
        c.modalities = vec!["flair".to_string()];
        assert_eq!(c.model_config().in_channels, 1);
        assert_eq!(c.modality_list(), vec![Modality::Flair]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{"data_root": "/d", "output_dir": "/o", "learning_rte": 1.0}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut c = parse(&minimal_json());
        c.modalities = vec![];
        assert!(c.validate().is_err());

        let mut c = parse(&minimal_json());
        c.modalities = vec!["t2".to_string()];
        assert!(c.validate().is_err());

        let mut c = parse(&minimal_json());
        c.modalities = vec!["flair".to_string(), "flair".to_string()];
        assert!(c.validate().is_err());

        let mut c = parse(&minimal_json());
        c.split_ratios = [0.5, 0.5, 0.5];
        assert!(c.validate().is_err());

        let mut c = parse(&minimal_json());
        c.num_classes = 3;
        assert!(c.validate().is_err());

        let mut c = parse(&minimal_json());
        c.image_size = 100;
        assert!(c.validate().is_err(), "100 is not a multiple of 16");

        let mut c = parse(&minimal_json());
        c.plateau_factor = 1.0;
        assert!(c.validate().is_err());

        let mut c = parse(&minimal_json());
        c.gradcam_alpha = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_selector_parses_both_objectives() {
        let json = r#"{"data_root": "/d", "output_dir": "/o", "loss": "categorical_dice"}"#;
        assert_eq!(parse(json).loss, LossKind::CategoricalDice);
        let json = r#"{"data_root": "/d", "output_dir": "/o", "loss": "combined"}"#;
        assert_eq!(parse(json).loss, LossKind::Combined);
    }

    #[test]
    fn resolved_roundtrip_preserves_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut c = parse(&minimal_json());
        c.seed = 7;
        c.base_filters = 4;
        save_config(&c, &path).unwrap();
        let back = load_config(&path).unwrap();
        let a = serde_json::to_string(&c).unwrap();
        let b = serde_json::to_string(&back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{not json").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("config.json"));
        assert_eq!(err.exit_code(), crate::error::EXIT_VALIDATION);
    }
}
