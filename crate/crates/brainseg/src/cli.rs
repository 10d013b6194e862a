//! Command-line surface: phantom generation, training, evaluation and
//! Grad-CAM explanation, all driven by one JSON config file. Exit codes:
//! 0 success, 2 usage or validation failure, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;

use brainseg_core::dataset::{case_to_samples, split_dataset, SliceSample};
use brainseg_core::explain::{
    colorize, gaussian_smooth, gradcam, grayscale_to_rgb, normalize_heatmap, overlay,
    resize_heatmap,
};
use brainseg_core::model::{AttentionUNet, ModelConfig};
use brainseg_core::Tensor;

use crate::config::{load_config, save_config, RunConfig};
use crate::data::{case_exists, discover_cases, load_case, write_phantom_dataset};
use crate::error::{Error, Result};
use crate::ppm::{compose_row, write_heatmap_csv, write_ppm};
use crate::train::{evaluate, train, write_history_csv};
use crate::weights::{load_weights, save_weights};

/// Volume extents as `X,Y,Z`.
#[derive(Debug, Clone, Copy)]
pub struct Dims(pub usize, pub usize, pub usize);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("expected X,Y,Z, got {s:?}"));
        }
        let parse = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("bad extent {p:?}"));
        Ok(Dims(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
    }
}

#[derive(Parser)]
#[command(
    name = "brainseg",
    version,
    about = "Attention U-Net brain tumor segmentation: train, evaluate, explain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset of nested ellipsoidal lesions.
    GenPhantom {
        /// Directory receiving one subdirectory per case.
        #[arg(long)]
        out: PathBuf,
        /// Number of cases.
        #[arg(long)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Volume extents as X,Y,Z.
        #[arg(long)]
        dims: Dims,
    },
    /// Train a model as described by the config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score saved weights on one dataset split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// One of train, val, test.
        #[arg(long)]
        split: String,
    },
    /// Render Grad-CAM heatmaps for one slice of one case.
    Explain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Case id under the data root.
        #[arg(long)]
        case: String,
        /// Axial slice index within the volume.
        #[arg(long)]
        slice: usize,
        /// Target class 0..=3; omitted means all tumor classes combined.
        #[arg(long)]
        class: Option<usize>,
        /// Directory receiving the rendered files.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenPhantom { out, cases, seed, dims } => cmd_gen_phantom(&out, cases, seed, dims),
        Command::Train { config } => cmd_train(&config),
        Command::Evaluate { config, weights, split } => cmd_evaluate(&config, &weights, &split),
        Command::Explain { config, weights, case, slice, class, out } => {
            cmd_explain(&config, &weights, &case, slice, class, &out)
        }
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn ensure_writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::validation(format!("cannot create directory {}: {e}", dir.display()))
    })?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")
        .map_err(|e| Error::validation(format!("directory {} is not writable: {e}", dir.display())))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub fn cmd_gen_phantom(out: &Path, cases: usize, seed: u64, dims: Dims) -> Result<()> {
    let Dims(x, y, z) = dims;
    // Generation validates extents and case count before any file exists.
    let records =
        brainseg_core::phantom::generate_phantom(seed, cases, (x, y, z)).map_err(Error::Core)?;
    drop(records);
    ensure_writable_dir(out)?;
    let ids = write_phantom_dataset(out, seed, cases, (x, y, z))?;
    for id in &ids {
        println!("{id} {x}x{y}x{z} {}", out.join(id).display());
    }
    Ok(())
}

fn load_split_samples(config: &RunConfig, ids: &[String]) -> Result<Vec<SliceSample>> {
    let modalities = config.modality_list();
    let window = config.slice_window();
    let out = (config.image_size, config.image_size);
    let mut samples = Vec::new();
    for id in ids {
        let case = load_case(&config.data_root, id)?;
        samples.extend(case_to_samples(&case, &modalities, window, out).map_err(Error::Core)?);
    }
    Ok(samples)
}

fn split_ids(config: &RunConfig) -> Result<brainseg_core::dataset::DatasetSplit> {
    let ids = discover_cases(&config.data_root)?;
    if ids.is_empty() {
        return Err(Error::validation(format!(
            "data root {} contains no cases",
            config.data_root.display()
        )));
    }
    let [r_train, r_val, r_test] = config.split_ratios;
    split_dataset(&ids, &config.exclusions, (r_train, r_val, r_test), config.split_seed())
        .map_err(Error::Core)
}

pub fn cmd_train(config_path: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    let split = split_ids(&config)?;
    if split.train.is_empty() {
        return Err(Error::validation("the training split has no cases"));
    }
    if split.validation.is_empty() {
        return Err(Error::validation("the validation split has no cases"));
    }
    let train_samples = load_split_samples(&config, &split.train)?;
    let val_samples = load_split_samples(&config, &split.validation)?;
    let model = AttentionUNet::<f32>::new(config.model_config()).map_err(Error::Core)?;

    ensure_writable_dir(&config.output_dir)?;
    save_config(&config, &config.output_dir.join("config.resolved.json"))?;
    let best_path = config.output_dir.join("best.weights");

    let output = train(
        model,
        train_samples,
        &val_samples,
        &config.train_config(),
        |r| {
            println!(
                "epoch {:>4}  train_loss {:.6}  val_loss {:.6}  train_dice {:.6}  val_dice {:.6}  lr {:.3e}",
                r.epoch, r.train_loss, r.val_loss, r.train_dice, r.val_dice, r.lr
            );
        },
        |best| save_weights(best, &best_path),
    )?;

    save_weights(&output.model, &config.output_dir.join("final.weights"))?;
    write_history_csv(&output.history, &config.output_dir.join("history.csv"))?;
    Ok(())
}

fn check_weights_compatible(config: &RunConfig, model_config: &ModelConfig) -> Result<()> {
    let expected = config.model_config();
    let matches = model_config.in_channels == expected.in_channels
        && model_config.num_classes == expected.num_classes
        && model_config.depth == expected.depth
        && model_config.base_filters == expected.base_filters
        && model_config.attention_enabled == expected.attention_enabled;
    if !matches {
        return Err(Error::validation(format!(
            "weights topology (in_channels {}, num_classes {}, depth {}, base_filters {}, \
             attention {}) does not match the config ({}, {}, {}, {}, {})",
            model_config.in_channels,
            model_config.num_classes,
            model_config.depth,
            model_config.base_filters,
            model_config.attention_enabled,
            expected.in_channels,
            expected.num_classes,
            expected.depth,
            expected.base_filters,
            expected.attention_enabled,
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    dice: f64,
    mean_iou: f64,
    categorical_accuracy: f64,
    sensitivity: f64,
    specificity: f64,
    per_class_dice: &'a [f64],
}

pub fn cmd_evaluate(config_path: &Path, weights_path: &Path, split_name: &str) -> Result<()> {
    let config = load_config(config_path)?;
    let model = load_weights(weights_path)?;
    check_weights_compatible(&config, model.config())?;
    let split = split_ids(&config)?;
    let ids = match split_name {
        "train" => &split.train,
        "val" => &split.validation,
        "test" => &split.test,
        other => {
            return Err(Error::validation(format!(
                "--split must be train, val or test, got {other:?}"
            )));
        }
    };
    if ids.is_empty() {
        return Err(Error::validation(format!("the {split_name} split has no cases")));
    }
    let samples = load_split_samples(&config, ids)?;
    let report = evaluate(&model, &samples, config.batch_size)?;

    println!("split {split_name}: {} cases, {} slices", ids.len(), samples.len());
    println!("dice                 {:.6}", report.dice);
    println!("mean_iou             {:.6}", report.mean_iou);
    println!("categorical_accuracy {:.6}", report.categorical_accuracy);
    println!("sensitivity          {:.6}", report.sensitivity);
    println!("specificity          {:.6}", report.specificity);
    let classes: Vec<String> = report.per_class_dice.iter().map(|d| format!("{d:.6}")).collect();
    println!("per_class_dice       [{}]", classes.join(", "));

    let json = MetricsJson {
        dice: report.dice,
        mean_iou: report.mean_iou,
        categorical_accuracy: report.categorical_accuracy,
        sensitivity: report.sensitivity,
        specificity: report.specificity,
        per_class_dice: &report.per_class_dice,
    };
    println!("{}", serde_json::to_string(&json).expect("metrics serialize"));
    Ok(())
}

/// Name of the activation layer attributed by Grad-CAM: the last 3x3
/// convolution before the class head.
pub const TARGET_LAYER: &str = "dec0.conv2";

#[derive(Serialize)]
struct ExplainMetadata<'a> {
    target_layer: &'a str,
    class: serde_json::Value,
    sigma: f64,
    alpha: f64,
    masked_score: bool,
    case: &'a str,
    slice: usize,
}

pub fn cmd_explain(
    config_path: &Path,
    weights_path: &Path,
    case_id: &str,
    slice: usize,
    class: Option<usize>,
    out: &Path,
) -> Result<()> {
    let config = load_config(config_path)?;
    if let Some(c) = class {
        if c >= config.num_classes {
            return Err(Error::validation(format!(
                "--class {c} is out of range; classes are 0..={}",
                config.num_classes - 1
            )));
        }
    }
    let model = load_weights(weights_path)?;
    check_weights_compatible(&config, model.config())?;
    if !case_exists(&config.data_root, case_id) {
        return Err(Error::validation(format!(
            "case {case_id:?} not found under {}",
            config.data_root.display()
        )));
    }
    let case = load_case(&config.data_root, case_id)?;
    let depth = case.flair.dims.2;
    let window = config.slice_window();
    let last = window.start + window.count - 1;
    if slice < window.start || slice > last || slice >= depth {
        return Err(Error::validation(format!(
            "--slice {slice} is outside the usable window {}..={} of case {case_id} (depth {depth})",
            window.start,
            last.min(depth.saturating_sub(1)),
        )));
    }
    let samples =
        case_to_samples(&case, &config.modality_list(), window, (config.image_size, config.image_size))
            .map_err(Error::Core)?;
    let sample = &samples[slice - window.start];

    // Grad-CAM runs in double precision.
    let (c, h, w) = {
        let s = sample.image.shape();
        (s[0], s[1], s[2])
    };
    let input =
        Tensor::<f32>::new(&[1, c, h, w], sample.image.data().to_vec()).map_err(Error::Core)?;
    let input64 = input.cast::<f64>();
    let model64 = model.cast::<f64>();
    let gc = config.gradcam_config(class);
    let raw = gradcam(&model64, &input64, &gc).map_err(Error::Core)?;
    let normalized = normalize_heatmap(&raw);
    let resized =
        resize_heatmap(&normalized, (config.image_size, config.image_size)).map_err(Error::Core)?;
    let smoothed = gaussian_smooth(&resized, gc.sigma).map_err(Error::Core)?;

    // Gray base image: FLAIR when present, else the first channel.
    let gray_channel =
        config.modalities.iter().position(|m| m == "flair").unwrap_or(0);
    let plane = h * w;
    let gray: Vec<f64> = sample.image.data()[gray_channel * plane..(gray_channel + 1) * plane]
        .iter()
        .map(|&v| v as f64)
        .collect();
    let original = grayscale_to_rgb(&gray, (h, w)).map_err(Error::Core)?;
    let heat_img = colorize(&smoothed).map_err(Error::Core)?;
    let blended = overlay(&gray, (h, w), &smoothed, gc.alpha).map_err(Error::Core)?;
    let triptych = compose_row(&[&original, &heat_img, &blended])?;

    ensure_writable_dir(out)?;
    write_ppm(&original, &out.join("original.ppm"))?;
    write_ppm(&heat_img, &out.join("heatmap.ppm"))?;
    write_ppm(&blended, &out.join("overlay.ppm"))?;
    write_ppm(&triptych, &out.join("triptych.ppm"))?;
    write_heatmap_csv(&smoothed, &out.join("heatmap.csv"))?;
    write_metadata(
        &out.join("metadata.json"),
        &ExplainMetadata {
            target_layer: TARGET_LAYER,
            class: match class {
                Some(c) => serde_json::json!(c),
                None => serde_json::json!("combined"),
            },
            sigma: gc.sigma,
            alpha: gc.alpha,
            masked_score: gc.masked_score,
            case: case_id,
            slice,
        },
    )?;
    println!("wrote 6 files to {}", out.display());
    Ok(())
}

fn write_metadata(path: &Path, metadata: &ExplainMetadata) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(metadata).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse_the_three_extent_grammar() {
        let Dims(x, y, z) = "48, 40,12".parse::<Dims>().unwrap();
        assert_eq!((x, y, z), (48, 40, 12));
        assert!("8,8".parse::<Dims>().is_err());
        assert!("a,b,c".parse::<Dims>().is_err());
    }

    #[test]
    fn metrics_json_keys_are_exactly_the_contract_set() {
        let json = serde_json::to_string(&MetricsJson {
            dice: 1.0,
            mean_iou: 1.0,
            categorical_accuracy: 1.0,
            sensitivity: 1.0,
            specificity: 1.0,
            per_class_dice: &[1.0, 1.0, 1.0, 1.0],
        })
        .unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
        let mut expected = vec![
            "categorical_accuracy",
            "dice",
            "mean_iou",
            "per_class_dice",
            "sensitivity",
            "specificity",
        ];
        expected.sort();
        let mut got: Vec<&str> = keys.iter().map(|k| k.as_str()).collect();
        got.sort();
        assert_eq!(got, expected);
    }
}
