//! `segment-train` and `segment-infer`.

use std::fs;
use std::path::Path;

use bilevel_core::segmentation::data::{synthetic_dataset, SyntheticSpec};
use bilevel_core::segmentation::io::{load_dataset, PnmImage};
use bilevel_core::segmentation::train::predict;
use bilevel_core::segmentation::{mean_iou, pixel_accuracy, train as train_model, LinearUnaryModel, Sample, TrainConfig};
use bilevel_core::upper::{AdamConfig, IpianoConfig, Optimizer};
use bilevel_core::SimpleFunction64;

use crate::config::{key, unhashed, KeySpec, Settings};
use crate::output::{num, OutDir};
use crate::{worker_threads, CliError, Status};

macro_rules! data_keys {
    ($($extra:expr),* $(,)?) => {
        &[
            key("manifest", ""),
            key("labels", "3"),
            key("gamma", "10"),
            key("size", "32x32"),
            key("images", "4"),
            key("noiseless", "2"),
            key("noise", "0.1"),
            key("seed", "7"),
            key("n_inner", "100"),
            unhashed("out", "."),
            $($extra),*
        ]
    };
}

pub const TRAIN_KEYS: &[KeySpec] = data_keys![
    key("iterations", "200"),
    key("optimizer", "adam"),
    key("rate", "1e-3"),
    key("beta", "0.8"),
    key("record_time", "true"),
    unhashed("threads", "auto"),
];

pub const INFER_KEYS: &[KeySpec] = data_keys![key("theta_file", "")];

struct Dataset {
    samples: Vec<Sample<f64>>,
    noiseless: Vec<bool>,
}

fn dataset(s: &Settings) -> Result<Dataset, CliError> {
    let labels: usize = s.get("labels")?;
    let gamma: f64 = s.get("gamma")?;
    if let Some(manifest) = s.path("manifest") {
        let samples = load_dataset(&manifest, labels, gamma)?;
        if samples.is_empty() {
            return Err(CliError::Usage(format!("{}: no samples listed", manifest.display())));
        }
        let noiseless = vec![false; samples.len()];
        return Ok(Dataset { samples, noiseless });
    }
    let (nx, ny) = s.size("size")?;
    let spec = SyntheticSpec {
        nx,
        ny,
        labels,
        images: s.get("images")?,
        noiseless: s.get("noiseless")?,
        noise: s.get("noise")?,
        seed: s.get("seed")?,
    };
    let images = synthetic_dataset::<f64>(&spec)?;
    let noiseless = images.iter().map(|i| i.noiseless).collect();
    let samples = images
        .into_iter()
        .map(|i| Sample::new(i.features, i.gt, labels, gamma))
        .collect::<Result<_, _>>()?;
    Ok(Dataset { samples, noiseless })
}

fn model_for(data: &Dataset, labels: usize) -> Result<LinearUnaryModel, CliError> {
    let channels = data.samples[0].features.channels;
    if let Some(s) = data.samples.iter().find(|s| s.features.channels != channels) {
        return Err(CliError::Usage(format!(
            "images mix {channels} and {} channels",
            s.features.channels
        )));
    }
    Ok(LinearUnaryModel::new(labels, channels)?)
}

fn optimizer(s: &Settings) -> Result<Optimizer<f64>, CliError> {
    let rate: f64 = s.get("rate")?;
    Ok(match s.str("optimizer") {
        "adam" => Optimizer::Adam(AdamConfig::with_rate(rate)),
        "gd" => Optimizer::GradientDescent { rate },
        "ipiano" => Optimizer::IPiano {
            config: IpianoConfig {
                alpha: rate,
                beta: s.get("beta")?,
            },
            ell: SimpleFunction64::Zero,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown optimizer '{other}' (expected adam, gd or ipiano)"
            )))
        }
    })
}

pub fn train(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    let data = dataset(s)?;
    let labels: usize = s.get("labels")?;
    let model = model_for(&data, labels)?;
    let config = TrainConfig {
        n_inner: s.get("n_inner")?,
        iterations: s.get("iterations")?,
        optimizer: optimizer(s)?,
        gamma: s.get("gamma")?,
        threads: worker_threads(s)?,
    };
    let record_time = s.bool("record_time")?;
    let result = train_model(&model, &data.samples, model.zero_params(), &config)?;

    let mut log = out.csv("train_log.csv", &["iter", "loss", "pixel_acc", "mean_iou", "seconds"])?;
    for r in &result.log {
        let secs = if record_time { r.seconds } else { 0.0 };
        log.row(&[r.iter.to_string(), num(r.loss), num(r.pixel_acc), num(r.mean_iou), num(secs)])?;
    }
    log.close()?;
    let mut theta = out.csv("theta.csv", &["index", "value"])?;
    for (i, v) in result.theta.iter().enumerate() {
        theta.row(&[i.to_string(), num(*v)])?;
    }
    theta.close()?;

    let first = result.log.first().map_or(f64::NAN, |r| r.loss);
    let last = result.final_eval.loss;
    println!(
        "{} images, {} iterations: loss {first:.6} -> {last:.6}, pixel accuracy {:.2}%, mean IoU {:.4}",
        data.samples.len(),
        config.iterations,
        100.0 * result.final_eval.pixel_acc,
        result.final_eval.mean_iou
    );
    Ok(Status::Ok)
}

/// Reads `index,value` rows written by `segment-train`.
fn read_theta(path: &Path, expected: usize) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut theta = Vec::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let at = || format!("{}:{}", path.display(), i + 1);
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            if line != "index,value" {
                return Err(CliError::Usage(format!("{}: expected header 'index,value'", at())));
            }
            header = true;
            continue;
        }
        let (idx, v) = line
            .split_once(',')
            .ok_or_else(|| CliError::Usage(format!("{}: expected 'index,value'", at())))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{}: bad index '{idx}'", at())))?;
        if idx != theta.len() {
            return Err(CliError::Usage(format!("{}: expected index {}, got {idx}", at(), theta.len())));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{}: bad value '{v}'", at())))?;
        theta.push(v);
    }
    if theta.len() != expected {
        return Err(CliError::Usage(format!(
            "{}: {} parameters, the model needs {expected}",
            path.display(),
            theta.len()
        )));
    }
    Ok(theta)
}

pub fn infer(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    let path = s
        .path("theta_file")
        .ok_or_else(|| CliError::Usage("segment-infer needs theta_file".into()))?;
    let data = dataset(s)?;
    let labels: usize = s.get("labels")?;
    let model = model_for(&data, labels)?;
    let theta = read_theta(&path, model.param_dim())?;
    let n_inner: usize = s.get("n_inner")?;
    let preds = predict(&model, &theta, &data.samples, n_inner)?;

    let mut csv = out.csv("infer.csv", &["image", "noiseless", "pixel_acc", "mean_iou"])?;
    let (mut all_p, mut all_g) = (Vec::new(), Vec::new());
    for (i, (p, sample)) in preds.iter().zip(&data.samples).enumerate() {
        csv.row(&[
            i.to_string(),
            data.noiseless[i].to_string(),
            num(pixel_accuracy(p, &sample.gt)),
            num(mean_iou(p, &sample.gt, labels)),
        ])?;
        let name = format!("pred_{i}.pgm");
        PnmImage::from_labels(sample.features.grid, p)?.write(&out.path(&name))?;
        all_p.extend_from_slice(p);
        all_g.extend_from_slice(&sample.gt);
    }
    csv.close()?;
    println!(
        "{} images: pixel accuracy {:.2}%, mean IoU {:.4}",
        preds.len(),
        100.0 * pixel_accuracy(&all_p, &all_g),
        mean_iou(&all_p, &all_g, labels)
    );
    Ok(Status::Ok)
}
