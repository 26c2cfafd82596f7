use super::*;
use crate::config::{apply_override, parse_yaml};

const BASE: &str = "\
experiment_id: unit
seed: 7
dataset:
  id: toytones
  classes: 3
  train: 6
  dev: 3
  test: 2
  duration: 0.25
  seed: 5
  transforms:
    - {id: log_mel, params: {n_mels: 16}}
model:
  id: ffnn
  hidden: [16]
  online_transforms:
    - {id: functionals}
    - {id: znorm, order: 1}
optimizer: {id: adam, lr: 0.01}
criterion: {id: cross_entropy}
training:
  epochs: 4
  batch_size: 5
  tracking_metric: accuracy
  tracking_direction: max
";

fn prepared(cfg: &ConfigNode) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    data::fetch(cfg, dir.path()).unwrap();
    data::preprocess(cfg, dir.path()).unwrap();
    dir
}

fn with(cfg: &ConfigNode, overrides: &[&str]) -> ConfigNode {
    overrides.iter().fold(cfg.clone(), |c, o| apply_override(&c, o).unwrap())
}

#[test]
fn run_writes_layout() {
    let cfg = parse_yaml(BASE).unwrap();
    let out = prepared(&cfg);
    let rec = train(&cfg, out.path()).unwrap();
    assert_eq!(rec.run_dir, out.path().join("runs/unit").join(run_id(&cfg)));
    for f in [CONFIG_YAML, METRICS_CSV, EVENTS_JSONL, TEST_RESULTS_YAML, "norm_stats/znorm_0.atnr"] {
        assert!(rec.run_dir.join(f).is_file(), "{f}");
    }
    assert!(rec.best_checkpoint().join("model.yaml").is_file());
    assert!(rec.last_checkpoint().join("out.weight.atnr").is_file());
    assert!(!rec.run_dir.join(LOCK_FILE).exists());
    let csv = std::fs::read_to_string(rec.run_dir.join(METRICS_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,train_loss,accuracy,uar,weighted_f1");
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(read_metrics_csv(&rec.run_dir.join(METRICS_CSV)).unwrap(), rec.rows);
    assert_eq!(read_events_jsonl(&rec.run_dir.join(EVENTS_JSONL)).unwrap(), rec.rows);
    let snapshot = crate::config::load_file(&rec.run_dir.join(CONFIG_YAML)).unwrap();
    assert_eq!(run_id(&snapshot), rec.run_id);
    let results = crate::config::load_file(&rec.run_dir.join(TEST_RESULTS_YAML)).unwrap();
    assert_eq!(results.get("items").and_then(ConfigNode::as_seq).unwrap().len(), 6);
    assert!(rec.rows.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn best_epoch_is_earliest_maximum() {
    let cfg = parse_yaml(BASE).unwrap();
    let out = prepared(&cfg);
    let rec = train(&cfg, out.path()).unwrap();
    let values: Vec<f64> = rec.rows.iter().map(|r| r.dev["accuracy"]).collect();
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(rec.best_epoch, values.iter().position(|&v| v == max).unwrap());
    assert_eq!(rec.best_value, max);
    let (_, doc) = Model::<f32>::load(&rec.best_checkpoint()).unwrap();
    assert_eq!(doc.get("epoch").and_then(ConfigNode::as_i64), Some(rec.best_epoch as i64));
}

#[test]
fn best_checkpoint_metric_recomputes() {
    let cfg = with(&parse_yaml(BASE).unwrap(), &["training.tracking_metric=uar"]);
    let out = prepared(&cfg);
    let rec = train(&cfg, out.path()).unwrap();
    let (model, doc) = Model::<f32>::load(&rec.best_checkpoint()).unwrap();
    let recorded = doc.get("dev.uar").and_then(ConfigNode::as_f64).unwrap();
    let m = data::load_manifest(&cfg, out.path()).unwrap();
    let mut online = data::online_pipeline(&cfg, 16000).unwrap();
    load_norm_stats(&rec.run_dir, &mut online).unwrap();
    let src = ItemSource::for_run(&cfg, &m).unwrap();
    let rows: Vec<_> = m.subset(Subset::Dev).collect();
    let feats: Vec<FeatureArray> = rows
        .iter()
        .map(|r| eval_features(&online, 7, &r.path, src.load(&r.path).unwrap(), Subset::Dev).unwrap())
        .collect();
    let logits = predict(&model, &feats, 2).unwrap();
    let targets: Vec<f64> = rows
        .iter()
        .flat_map(|r| m.encode(&r.target).unwrap().to_vector(3))
        .map(f64::from)
        .collect();
    let uar = compute_metric(MetricId::Uar, &scores(Task::Classification, &logits, 3), &targets, 3).unwrap();
    assert!((uar - recorded).abs() < 1e-6);
}

#[test]
fn repeated_runs_are_identical() {
    let cfg = with(
        &parse_yaml(BASE).unwrap(),
        &[
            "model.online_transforms=[{id: functionals}, {id: znorm, order: 1}, {id: gaussian_noise, order: 2, p: 0.5}, {id: mixup, order: 3, p: 0.5}]",
        ],
    );
    let a = prepared(&cfg);
    let b = prepared(&cfg);
    let ra = train(&cfg, a.path()).unwrap();
    let rb = train(&cfg, b.path()).unwrap();
    for f in [METRICS_CSV, EVENTS_JSONL, TEST_RESULTS_YAML, "checkpoints/best/out.weight.atnr", "checkpoints/best/model.yaml"] {
        assert_eq!(
            std::fs::read(ra.run_dir.join(f)).unwrap(),
            std::fs::read(rb.run_dir.join(f)).unwrap(),
            "{f}"
        );
    }
    let again = train(&cfg, a.path()).unwrap();
    assert_eq!(again.rows, ra.rows);
}

#[test]
fn locked_run_is_refused() {
    let cfg = parse_yaml(BASE).unwrap();
    let out = prepared(&cfg);
    let dir = run_dir(&cfg, out.path()).unwrap();
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join(LOCK_FILE), "").unwrap();
    assert!(matches!(train(&cfg, out.path()), Err(Error::RunLocked(_))));
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let cfg = with(&parse_yaml(BASE).unwrap(), &["optimizer={id: sgd, lr: 1e30}"]);
    let out = prepared(&cfg);
    let err = train(&cfg, out.path()).unwrap_err();
    let Error::NonFiniteLoss { epoch, batch } = err else { panic!("{err}") };
    let doc = crate::config::load_file(&run_dir(&cfg, out.path()).unwrap().join(ABORTED_YAML)).unwrap();
    assert_eq!(doc.get("epoch").and_then(ConfigNode::as_i64), Some(epoch as i64));
    assert_eq!(doc.get("batch").and_then(ConfigNode::as_i64), Some(batch as i64));
}

#[test]
fn config_errors() {
    let base = parse_yaml(BASE).unwrap();
    let out = prepared(&base);
    for (o, path) in [
        ("training.tracking_direction=up", "training"),
        ("criterion.id=bce_multilabel", "criterion.id"),
        ("optimizer.lr=0", "optimizer"),
        ("model.id=resnet", "model"),
    ] {
        let err = train(&with(&base, &[o]), out.path()).unwrap_err();
        assert!(err.is_config_error(), "{o}: {err}");
        assert!(err.to_string().contains(path), "{o}: {err}");
    }
    let mut no_direction = base.clone();
    no_direction.as_map_mut().unwrap()["training"].as_map_mut().unwrap().shift_remove("tracking_direction");
    assert!(train(&no_direction, out.path()).unwrap_err().is_config_error());
}

#[test]
fn cnn_on_log_mel_and_balanced_loss() {
    let cfg = with(
        &parse_yaml(BASE).unwrap(),
        &[
            "model={id: cnn10lite, channels: [4, 8], online_transforms: [{id: znorm}]}",
            "criterion.id=balanced_cross_entropy",
            "+scheduler={id: cosine, lr_min: 0.001}",
            "training.epochs=2",
        ],
    );
    let out = prepared(&cfg);
    let rec = train(&cfg, out.path()).unwrap();
    assert_eq!(rec.rows.len(), 2);
    let (model, _) = Model::<f32>::load(&rec.best_checkpoint()).unwrap();
    assert_eq!(model.input_dims(), &[16, 22]);
}

#[test]
fn raw_audio_sequence_model() {
    let cfg = with(
        &parse_yaml(BASE).unwrap(),
        &[
            "dataset.transforms=[]",
            "model={id: seq_ffnn, encoder: gru, encoder_dim: 8, online_transforms: [{id: log_mel, params: {n_mels: 8}}, {id: spec_augment, order: 1}]}",
            "training.epochs=1",
        ],
    );
    let out = prepared(&cfg);
    let rec = train(&cfg, out.path()).unwrap();
    assert_eq!(rec.rows.len(), 1);
}
