use std::time::Instant;

use chrono::Utc;
use image::DynamicImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::{self, ConfusionMatrix, MetricsReport, RegressionPairs, Task};

use super::data::{augment, image_to_pixels, normalize, Target, TensorDataset};
use super::network::{BackboneSpec, Network};
use super::optim::{Adam, OneCycle};
use super::{Augmentation, EpochLog, ModelCheckpoint, ModelError, TargetScale, TrainConfig};

/// Model output for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    /// Predicted log monthly consumption.
    Value(f64),
    /// Probability of extreme poverty and the label thresholded at 0.5.
    Class { probability: f64, label: u8 },
}

impl Prediction {
    /// `[P(label 0), P(label 1)]` for classification outputs.
    pub fn probabilities(&self) -> Option<[f64; 2]> {
        match self {
            Prediction::Class { probability, .. } => Some([1.0 - probability, *probability]),
            Prediction::Value(_) => None,
        }
    }
}

fn softmax2(logits: &[f32]) -> [f64; 2] {
    let (a, b) = (logits[0] as f64, logits[1] as f64);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

fn decode(task: Task, out: &[f32], scale: Option<TargetScale>) -> Prediction {
    match task {
        Task::Regression => {
            let s = scale.unwrap_or(TargetScale { mean: 0.0, std: 1.0 });
            Prediction::Value(out[0] as f64 * s.std + s.mean)
        }
        Task::Classification => {
            let p = softmax2(out)[1];
            Prediction::Class {
                probability: p,
                label: u8::from(p >= 0.5),
            }
        }
    }
}

/// Per-sample loss in reporting units, and its gradient w.r.t. the raw outputs.
fn loss_and_grad(out: &[f32], target: Target, scale: Option<TargetScale>) -> (f64, Vec<f32>) {
    match target {
        Target::Value(t) => {
            let s = scale.expect("regression runs carry a target scale");
            let diff = out[0] as f64 - (t - s.mean) / s.std;
            (diff * diff * s.std * s.std, vec![(2.0 * diff) as f32])
        }
        Target::Class(y) => {
            let p = softmax2(out);
            let loss = -p[y as usize].max(1e-12).ln();
            let grad = (0..2).map(|k| (p[k] - f64::from(k == y as usize)) as f32).collect();
            (loss, grad)
        }
    }
}

struct Evaluation {
    loss: f64,
    predictions: Vec<Prediction>,
}

fn run_eval(net: &Network, task: Task, data: &TensorDataset, scale: Option<TargetScale>) -> Evaluation {
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for ex in &data.examples {
        let out = net.predict(&normalize(&ex.pixels, data.input_px));
        loss += loss_and_grad(&out, ex.target, scale).0;
        predictions.push(decode(task, &out, scale));
    }
    Evaluation {
        loss: loss / data.len().max(1) as f64,
        predictions,
    }
}

fn report_from(
    task: Task,
    data: &TensorDataset,
    predictions: &[Prediction],
    beta: f64,
) -> Result<MetricsReport, ModelError> {
    match task {
        Task::Regression => {
            let preds = predictions
                .iter()
                .map(|p| match p {
                    Prediction::Value(v) => *v,
                    Prediction::Class { .. } => unreachable!("regression model"),
                })
                .collect();
            Ok(MetricsReport::regression(RegressionPairs::new(preds, data.values())?))
        }
        Task::Classification => {
            let labels: Vec<u8> = predictions
                .iter()
                .map(|p| match p {
                    Prediction::Class { label, .. } => *label,
                    Prediction::Value(_) => unreachable!("classification model"),
                })
                .collect();
            let cm: ConfusionMatrix = metrics::confusion(&data.classes(), &labels)?;
            Ok(MetricsReport::classification(cm, beta))
        }
    }
}

fn check_data(
    task: Task,
    train: &TensorDataset,
    valid: &TensorDataset,
    config: &TrainConfig,
) -> Result<(), ModelError> {
    if train.is_empty() || valid.is_empty() {
        return Err(ModelError::Data("train and validation sets must be non-empty".into()));
    }
    for (name, d) in [("train", train), ("valid", valid)] {
        if d.input_px != config.input_px {
            return Err(ModelError::Data(format!(
                "{name} set is {} px but the config expects {}",
                d.input_px, config.input_px
            )));
        }
        for (i, ex) in d.examples.iter().enumerate() {
            match (task, ex.target) {
                (Task::Regression, Target::Value(v)) if v.is_finite() => {}
                (Task::Classification, Target::Class(0 | 1)) => {}
                _ => {
                    return Err(ModelError::Data(format!(
                        "{name} example {i} has target {:?}",
                        ex.target
                    )))
                }
            }
        }
        if task == Task::Classification {
            let classes = d.classes();
            if !(classes.contains(&0) && classes.contains(&1)) {
                return Err(ModelError::Data(format!("{name} set contains a single class")));
            }
        }
    }
    Ok(())
}

/// Better-than comparison for checkpoint selection; `None` never wins.
fn improves(task: Task, candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(c), Some(b)) => match task {
            Task::Regression => c < b,
            Task::Classification => c > b,
        },
    }
}

fn train(
    task: Task,
    train: &TensorDataset,
    valid: &TensorDataset,
    config: &TrainConfig,
    beta: f64,
) -> Result<(ModelCheckpoint, Vec<EpochLog>), ModelError> {
    config.validate()?;
    if config.task != task {
        return Err(ModelError::Config(format!(
            "config task is {}, expected {task}",
            config.task
        )));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(ModelError::Config(format!("beta must be positive, got {beta}")));
    }
    check_data(task, train, valid, config)?;

    let spec = BackboneSpec::from_id(&config.backbone_id)?;
    let mut net = Network::new(spec, ModelCheckpoint::outputs(task), config.seed);
    if let Some(path) = &config.pretrained {
        let mut source = ModelCheckpoint::load(path)?.network()?;
        net.load_backbone(&mut source)?;
        log::info!("initialised backbone from {}", path.display());
    }

    let scale = match task {
        Task::Regression => {
            let v = train.values();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            Some(TargetScale {
                mean,
                std: if var > 1e-12 { var.sqrt() } else { 1.0 },
            })
        }
        Task::Classification => None,
    };

    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let schedule = OneCycle::new(config.learning_rate, steps_per_epoch * config.epochs);
    let mut opt = Adam::new(config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let select_metric = match task {
        Task::Regression => "rmse",
        Task::Classification => "fbeta_score",
    };

    let mut logs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Option<f64>, Vec<f32>)> = None;
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            net.zero_grad();
            for &i in batch {
                let ex = &train.examples[i];
                let pixels = match config.augmentation {
                    Augmentation::None => None,
                    Augmentation::StandardFlipsCrops => Some(augment(&ex.pixels, train.input_px, &mut rng)),
                };
                let x = normalize(pixels.as_deref().unwrap_or(&ex.pixels), train.input_px);
                let (out, trace) = net.forward(&x);
                let (loss, dout) = loss_and_grad(&out, ex.target, scale);
                total += loss;
                net.backward(&trace, &dout);
            }
            opt.step(net.params_mut(), schedule.lr(step), 1.0 / batch.len() as f32);
            step += 1;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(ModelError::NonFinite {
                epoch,
                diagnostics: format!(
                    "train loss {train_loss}, lr {:.3e}",
                    schedule.lr(step.saturating_sub(1))
                ),
            });
        }
        let eval = run_eval(&net, task, valid, scale);
        if !eval.loss.is_finite() {
            return Err(ModelError::NonFinite {
                epoch,
                diagnostics: format!("valid loss {}", eval.loss),
            });
        }
        let report = report_from(task, valid, &eval.predictions, beta)?;
        let log = EpochLog {
            epoch,
            train_loss,
            valid_loss: eval.loss,
            metric_values: report.metrics,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.6} valid_loss {:.6} {select_metric} {:?}",
            log.train_loss,
            log.valid_loss,
            log.metric_values[select_metric]
        );
        let score = log.metric_values[select_metric];
        if best.is_none() || improves(task, score, best.as_ref().unwrap().1) {
            best = Some((epoch, score, net.weights()));
        }
        logs.push(log);
    }

    let (best_epoch, _, weights) = best.expect("at least one epoch ran");
    Ok((
        ModelCheckpoint {
            task,
            config: config.clone(),
            best_epoch,
            created_at: Utc::now(),
            target_scale: scale,
            beta,
            weights,
        },
        logs,
    ))
}

/// Fits a log-consumption regressor; keeps the epoch with the lowest
/// validation RMSE.
pub fn train_regressor(
    train_set: &TensorDataset,
    valid_set: &TensorDataset,
    config: &TrainConfig,
) -> Result<(ModelCheckpoint, Vec<EpochLog>), ModelError> {
    train(Task::Regression, train_set, valid_set, config, metrics::DEFAULT_BETA)
}

/// Fits an extreme-poverty classifier; keeps the epoch with the highest
/// validation F-beta.
pub fn train_classifier(
    train_set: &TensorDataset,
    valid_set: &TensorDataset,
    config: &TrainConfig,
    beta: f64,
) -> Result<(ModelCheckpoint, Vec<EpochLog>), ModelError> {
    train(Task::Classification, train_set, valid_set, config, beta)
}

/// Predicts for arbitrary images, resizing them to the model input size.
pub fn predict(checkpoint: &ModelCheckpoint, images: &[DynamicImage]) -> Result<Vec<Prediction>, ModelError> {
    let net = checkpoint.network()?;
    let px = checkpoint.config.input_px;
    Ok(images
        .iter()
        .map(|img| {
            let out = net.predict(&normalize(&image_to_pixels(img, px), px));
            decode(checkpoint.task, &out, checkpoint.target_scale)
        })
        .collect())
}

/// Like [`predict`], but fails unless the checkpoint solves `task`.
pub fn predict_for_task(
    checkpoint: &ModelCheckpoint,
    images: &[DynamicImage],
    task: Task,
) -> Result<Vec<Prediction>, ModelError> {
    if checkpoint.task != task {
        return Err(ModelError::TaskMismatch {
            requested: task,
            actual: checkpoint.task,
        });
    }
    predict(checkpoint, images)
}

pub fn predict_dataset(checkpoint: &ModelCheckpoint, data: &TensorDataset) -> Result<Vec<Prediction>, ModelError> {
    if data.input_px != checkpoint.config.input_px {
        return Err(ModelError::Data("dataset and checkpoint input sizes differ".into()));
    }
    let net = checkpoint.network()?;
    Ok(run_eval(&net, checkpoint.task, data, checkpoint.target_scale).predictions)
}

/// Metrics of a checkpoint on a validation set.
pub fn evaluate(checkpoint: &ModelCheckpoint, valid: &TensorDataset) -> Result<MetricsReport, ModelError> {
    if valid.is_empty() {
        return Err(ModelError::Data("validation set is empty".into()));
    }
    let predictions = predict_dataset(checkpoint, valid)?;
    report_from(checkpoint.task, valid, &predictions, checkpoint.beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_loss_gradient() {
        let (loss, g) = loss_and_grad(&[0.0, 0.0], Target::Class(1), None);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g, vec![0.5, -0.5]);
    }

    #[test]
    fn regression_loss_is_in_target_units() {
        let scale = Some(TargetScale { mean: 5.0, std: 2.0 });
        // Raw output 0.5 decodes to 6.0; target 7.0 → squared error 1.0.
        let (loss, g) = loss_and_grad(&[0.5], Target::Value(7.0), scale);
        assert!((loss - 1.0).abs() < 1e-12);
        assert!((g[0] - (-1.0)).abs() < 1e-6);
        assert_eq!(decode(Task::Regression, &[0.5], scale), Prediction::Value(6.0));
    }

    #[test]
    fn selection_ordering() {
        assert!(improves(Task::Regression, Some(0.5), Some(0.6)));
        assert!(!improves(Task::Regression, Some(0.6), Some(0.6)));
        assert!(improves(Task::Classification, Some(0.7), None));
        assert!(!improves(Task::Classification, None, Some(0.1)));
    }

    #[test]
    fn probabilities_sum_to_one() {
        for logits in [[10.0f32, -10.0], [0.3, 0.2], [-50.0, 60.0]] {
            let p = decode(Task::Classification, &logits, None).probabilities().unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
