use image::DynamicImage;
use welfare_vision::metrics::{self, RegressionPairs};
use welfare_vision::modeling::*;
use welfare_vision::synthetic;
use welfare_vision::{Category, InputMode, Task};

const TILE: u32 = 8;

fn regression_data(n: usize, seed: u64) -> (Vec<DynamicImage>, TensorDataset) {
    let set = synthetic::regression_mosaics(n, TILE, seed);
    let targets: Vec<Target> = set.targets.iter().map(|t| Target::Value(*t)).collect();
    let ds = TensorDataset::from_images(&set.images, &targets, 3 * TILE).unwrap();
    (set.images, ds)
}

fn classification_data(per_class: usize, seed: u64) -> (Vec<DynamicImage>, TensorDataset) {
    let (images, labels) = synthetic::classification_images(per_class, 16, seed);
    let targets: Vec<Target> = labels.iter().map(|l| Target::Class(*l)).collect();
    let ds = TensorDataset::from_images(&images, &targets, 16).unwrap();
    (images, ds)
}

fn reg_config(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(Task::Regression, InputMode::Merged);
    c.backbone_id = "resnet-micro".into();
    c.input_px = 3 * TILE;
    c.epochs = epochs;
    c.batch_size = 8;
    c.learning_rate = 3e-3;
    c.seed = 11;
    c
}

fn clf_config(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(Task::Classification, InputMode::Pooled);
    c.backbone_id = "resnet-micro".into();
    c.input_px = 16;
    c.epochs = epochs;
    c.batch_size = 8;
    c.learning_rate = 3e-3;
    c.seed = 5;
    c
}

#[test]
fn single_epoch_run_logs_once() {
    let (_, ds) = regression_data(10, 1);
    let (ck, logs) = train_regressor(&ds, &ds, &reg_config(1)).unwrap();
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].epoch, 1);
    assert_eq!(ck.best_epoch, 1);
    assert!(logs[0].wall_time_s >= 0.0);
}

#[test]
fn memorises_five_samples() {
    let (_, ds) = regression_data(5, 2);
    let mut config = reg_config(150);
    config.batch_size = 5;
    let (ck, logs) = train_regressor(&ds, &ds, &config).unwrap();
    let first = logs[0].train_loss;
    let last = logs.last().unwrap().train_loss;
    assert!(last < 0.1 * first, "train loss {first} -> {last}");
    let report = evaluate(&ck, &ds).unwrap();
    assert!(report.metric("rmse").unwrap() < 0.1, "{:?}", report.metrics);
}

#[test]
fn classifier_memorises_five_samples() {
    let (_, full) = classification_data(3, 3);
    let ds = TensorDataset {
        input_px: full.input_px,
        examples: full.examples[..5].to_vec(),
    };
    let mut config = clf_config(80);
    config.augmentation = Augmentation::None;
    config.batch_size = 5;
    let (_, logs) = train_classifier(&ds, &ds, &config, 0.8).unwrap();
    assert!(logs.last().unwrap().train_loss < 0.1 * logs[0].train_loss);
}

#[test]
fn epoch_metrics_match_recomputation() {
    let (_, train) = regression_data(24, 4);
    let (_, valid) = regression_data(12, 5);
    let (ck, logs) = train_regressor(&train, &valid, &reg_config(3)).unwrap();
    let best = &logs[ck.best_epoch - 1];
    let preds: Vec<f64> = predict_dataset(&ck, &valid)
        .unwrap()
        .into_iter()
        .map(|p| match p {
            Prediction::Value(v) => v,
            other => panic!("{other:?}"),
        })
        .collect();
    let pairs = RegressionPairs::new(preds, valid.values()).unwrap();
    let rmse = metrics::rmse(&pairs);
    assert!((best.metric_values["rmse"].unwrap() - rmse).abs() < 1e-6);
    assert!((best.metric_values["r2_score"].unwrap() - metrics::r_squared(&pairs).unwrap()).abs() < 1e-6);
    assert!((best.valid_loss - rmse * rmse).abs() < 1e-6);
    // Selection picked the lowest validation RMSE.
    let min = logs
        .iter()
        .map(|l| l.metric_values["rmse"].unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.metric_values["rmse"].unwrap(), min);
}

#[test]
fn classification_metrics_match_recomputation() {
    let (_, train) = classification_data(12, 6);
    let (images, valid) = classification_data(6, 7);
    let (ck, logs) = train_classifier(&train, &valid, &clf_config(2), 0.8).unwrap();
    let labels: Vec<u8> = predict(&ck, &images)
        .unwrap()
        .iter()
        .map(|p| match p {
            Prediction::Class { label, .. } => *label,
            other => panic!("{other:?}"),
        })
        .collect();
    let cm = metrics::confusion(&valid.classes(), &labels).unwrap();
    let expected = metrics::classification_metrics(&cm, 0.8);
    let logged = &logs[ck.best_epoch - 1].metric_values;
    for (k, v) in &expected {
        match (v, logged[k]) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6, "{k}"),
            (None, None) => {}
            other => panic!("{k}: {other:?}"),
        }
    }
    assert_eq!(evaluate(&ck, &valid).unwrap().confusion, Some(cm));
}

#[test]
fn probabilities_are_a_distribution() {
    let (_, train) = classification_data(6, 8);
    let (images, _) = classification_data(4, 9);
    let (ck, _) = train_classifier(&train, &train, &clf_config(1), 0.8).unwrap();
    for p in predict(&ck, &images).unwrap() {
        let [p0, p1] = p.probabilities().unwrap();
        assert!((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1));
        assert!((p0 + p1 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn seeded_training_is_reproducible() {
    let (_, train) = regression_data(16, 10);
    let (_, valid) = regression_data(8, 11);
    let config = reg_config(2);
    let (a, la) = train_regressor(&train, &valid, &config).unwrap();
    let (b, lb) = train_regressor(&train, &valid, &config).unwrap();
    assert_eq!(a.weights, b.weights);
    for (x, y) in la.iter().zip(&lb) {
        assert_eq!(x.metric_values, y.metric_values);
        assert_eq!(x.train_loss, y.train_loss);
    }
    let mut other = config.clone();
    other.seed += 1;
    let (c, _) = train_regressor(&train, &valid, &other).unwrap();
    assert_ne!(a.weights, c.weights);
}

#[test]
fn initial_weights_depend_only_on_seed() {
    let spec = BackboneSpec::from_id("resnet-micro").unwrap();
    let mut a = Network::new(spec, 1, 3);
    let mut b = Network::new(spec, 1, 3);
    assert_eq!(a.weights(), b.weights());
}

#[test]
fn predict_edge_cases() {
    let (_, ds) = regression_data(6, 12);
    let (ck, _) = train_regressor(&ds, &ds, &reg_config(1)).unwrap();
    assert!(predict(&ck, &[]).unwrap().is_empty());
    let err = predict_for_task(&ck, &[], Task::Classification).unwrap_err();
    assert!(matches!(err, ModelError::TaskMismatch { .. }), "{err}");
    // Arbitrary input sizes are resized.
    let big = DynamicImage::new_rgb8(50, 31);
    assert_eq!(predict(&ck, &[big]).unwrap().len(), 1);
}

#[test]
fn classifier_rejects_single_class_sets() {
    let (_, ds) = classification_data(4, 13);
    let ones = TensorDataset {
        input_px: ds.input_px,
        examples: ds
            .examples
            .iter()
            .filter(|e| e.target == Target::Class(1))
            .cloned()
            .collect(),
    };
    assert!(matches!(
        train_classifier(&ones, &ds, &clf_config(1), 0.8),
        Err(ModelError::Data(_))
    ));
    assert!(matches!(
        train_classifier(&ds, &ones, &clf_config(1), 0.8),
        Err(ModelError::Data(_))
    ));
}

#[test]
fn config_errors_surface_before_training() {
    let (_, ds) = regression_data(4, 14);
    let mut bad = reg_config(1);
    bad.epochs = 0;
    assert!(matches!(train_regressor(&ds, &ds, &bad), Err(ModelError::Config(_))));
    let mut bad = reg_config(1);
    bad.backbone_id = "resnet50".into();
    assert!(matches!(train_regressor(&ds, &ds, &bad), Err(ModelError::Config(_))));
    let mut wrong_px = reg_config(1);
    wrong_px.input_px = 32;
    assert!(matches!(train_regressor(&ds, &ds, &wrong_px), Err(ModelError::Data(_))));
    assert!(matches!(
        train_classifier(&ds, &ds, &reg_config(1), 0.8),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn divergence_is_reported_with_the_epoch() {
    let (_, ds) = regression_data(6, 15);
    let mut config = reg_config(3);
    config.learning_rate = 1e30;
    match train_regressor(&ds, &ds, &config) {
        Err(ModelError::NonFinite { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l)),
    }
}

#[test]
fn checkpoint_round_trip_and_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let (images, ds) = regression_data(8, 16);
    let (ck, _) = train_regressor(&ds, &ds, &reg_config(2)).unwrap();
    let path = dir.path().join("checkpoint.bin");
    ck.save(&path).unwrap();
    let loaded = ModelCheckpoint::load(&path).unwrap();
    assert_eq!(loaded.weights, ck.weights);
    assert_eq!(predict(&loaded, &images).unwrap(), predict(&ck, &images).unwrap());

    // Fine-tune a classifier from the regression backbone.
    let (_, clf) = classification_data(4, 17);
    let mut config = clf_config(1);
    config.input_px = 3 * TILE;
    config.pretrained = Some(path.clone());
    let clf = TensorDataset::from_images(
        &synthetic::classification_images(4, 3 * TILE, 17).0,
        &clf.examples.iter().map(|e| e.target).collect::<Vec<_>>(),
        3 * TILE,
    )
    .unwrap();
    let (tuned, _) = train_classifier(&clf, &clf, &config, 0.8).unwrap();
    assert_eq!(tuned.task, Task::Classification);

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(ModelCheckpoint::load(&path).is_err());
}

#[test]
fn single_category_defaults_use_augmentation() {
    let c = TrainConfig::new(Task::Regression, InputMode::Category(Category::Stoves));
    assert_eq!(c.augmentation, Augmentation::StandardFlipsCrops);
    assert_eq!(
        TrainConfig::new(Task::Regression, InputMode::Merged).augmentation,
        Augmentation::None
    );
    let mut bad = TrainConfig::new(Task::Regression, InputMode::Merged);
    bad.augmentation = Augmentation::StandardFlipsCrops;
    assert!(bad.validate().is_err());
}
