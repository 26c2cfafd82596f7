//! The training loop and its run directory.
//!
//! A run lives in `runs/<experiment_id>/<run_id>/` under the output root:
//!
//! ```text
//! config.yaml            composed config snapshot
//! metrics.csv            epoch, train_loss, one column per dev metric
//! events.jsonl           the same records as JSON lines
//! norm_stats/            fitted znorm statistics, one [2, bins] file each
//! checkpoints/best/      parameters of the best dev epoch
//! checkpoints/last/      parameters after the latest epoch
//! test_results.yaml      best-epoch dev metrics, test metrics, test logits
//! ```
//!
//! Everything random derives from the master `seed`: shuffling from
//! `["shuffle", "epoch:<e>"]`, item augmentation from
//! `["augment", "epoch:<e>", "item:<path>"]`, batch augmentation from
//! `["augment", "epoch:<e>", "batch:<b>"]` and evaluation from
//! `["eval", "item:<path>"]`. Epochs count from 0.

mod criterion;
pub mod data;
mod logging;
mod metrics;
mod optim;

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::{run_id, ConfigNode, Mapping};
use crate::error::{Error, IoContext, Result};
use crate::features::{FeatureArray, EXTENSION};
use crate::manifest::{class_weights, Manifest, Subset, Task};
use crate::nn::{Mode, Model, ModelSpec, Tensor};
use crate::pipeline::{Batch, NormStats, Pipeline};
use crate::rng::{derive_seed, Rng};

pub use criterion::{sigmoid, softmax, Criterion, CriterionId, SIMPLEX_TOLERANCE};
pub use data::ItemSource;
pub use logging::{
    format6, read_events_jsonl, read_metrics_csv, round6, CsvSink, EpochRecord, JsonlSink, LogSink, EVENTS_JSONL,
    METRICS_CSV,
};
pub use metrics::{accuracy, argmax, compute as compute_metric, confusion, mse, uar, weighted_f1, MetricId};
pub use optim::{Optimizer, OptimizerId, OptimizerSpec, Scheduler};

pub const CONFIG_YAML: &str = "config.yaml";
pub const TEST_RESULTS_YAML: &str = "test_results.yaml";
pub const ABORTED_YAML: &str = "aborted.yaml";
pub const LOCK_FILE: &str = ".lock";
pub const NORM_STATS_DIR: &str = "norm_stats";
pub const BEST_CHECKPOINT: &str = "checkpoints/best";
pub const LAST_CHECKPOINT: &str = "checkpoints/last";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    /// Strict improvement, so ties keep the earlier epoch.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Max => candidate > incumbent,
            Direction::Min => candidate < incumbent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub tracking_metric: MetricId,
    pub tracking_direction: Direction,
    /// Dev metrics to log; defaults by task.
    #[serde(default)]
    pub metrics: Option<Vec<MetricId>>,
}

impl TrainingSpec {
    /// The logged metrics: the configured list (or the task default) with
    /// the tracking metric appended when missing.
    pub fn metric_list(&self, task: Task) -> Result<Vec<MetricId>> {
        let mut list = self.metrics.clone().unwrap_or_else(|| match task {
            Task::Classification => vec![MetricId::Accuracy, MetricId::Uar, MetricId::WeightedF1],
            Task::Multilabel | Task::Regression => vec![MetricId::Mse],
        });
        if !list.contains(&self.tracking_metric) {
            list.push(self.tracking_metric);
        }
        if let Some(m) = list.iter().find(|m| m.is_classification() && task != Task::Classification) {
            return Err(Error::config("training.metrics", format!("`{m}` needs a classification task")));
        }
        Ok(list)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriterionSpec {
    id: CriterionId,
}

/// Everything a run needs, read and validated from a composed config.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub experiment_id: String,
    pub seed: u64,
    pub training: TrainingSpec,
    pub optimizer: OptimizerSpec,
    pub scheduler: Scheduler,
    pub criterion: CriterionId,
    pub model: ModelSpec,
}

fn section<T: serde::de::DeserializeOwned>(cfg: &ConfigNode, key: &str) -> Result<T> {
    if cfg.get(key).is_none() {
        return Err(Error::config(key, "missing section"));
    }
    cfg.extract(key).map_err(|e| match e {
        Error::Config { message, .. } => Error::config(key, message),
        other => other,
    })
}

impl RunSettings {
    pub fn from_config(cfg: &ConfigNode) -> Result<Self> {
        let experiment_id: String = section(cfg, "experiment_id")?;
        if experiment_id.is_empty() || experiment_id.contains(['/', '\\']) || experiment_id.starts_with('.') {
            return Err(Error::config("experiment_id", "must be a plain directory name"));
        }
        let training: TrainingSpec = section(cfg, "training")?;
        if training.epochs == 0 || training.batch_size == 0 {
            return Err(Error::config("training", "epochs and batch_size must be positive"));
        }
        let optimizer: OptimizerSpec = section(cfg, "optimizer")?;
        optimizer.validate()?;
        let scheduler = match cfg.get("scheduler") {
            None | Some(ConfigNode::Null) => Scheduler::Constant,
            Some(_) => section(cfg, "scheduler")?,
        };
        let criterion: CriterionSpec = section(cfg, "criterion")?;
        let model = ModelSpec::from_config(cfg.get("model").ok_or_else(|| Error::config("model", "missing section"))?)?;
        Ok(RunSettings {
            experiment_id,
            seed: section(cfg, "seed")?,
            training,
            optimizer,
            scheduler,
            criterion: criterion.id,
            model,
        })
    }
}

/// `runs/<experiment_id>/<run_id>` under `out`.
pub fn run_dir(cfg: &ConfigNode, out: &Path) -> Result<PathBuf> {
    let experiment_id: String = section(cfg, "experiment_id")?;
    Ok(out.join("runs").join(experiment_id).join(run_id(cfg)))
}

/// Outcome of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub run_dir: PathBuf,
    /// Logged epoch records (rounded as written).
    pub rows: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_value: f64,
    pub test_metrics: IndexMap<String, f64>,
}

impl RunRecord {
    pub fn best_checkpoint(&self) -> PathBuf {
        self.run_dir.join(BEST_CHECKPOINT)
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.run_dir.join(LAST_CHECKPOINT)
    }
}

/// Removes the run lock when the run ends, however it ends.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunLocked(dir.to_path_buf())),
            Err(e) => Err(Error::Io { path, source: e }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// Output scores used by metrics: softmax probabilities for classes,
/// sigmoid probabilities for multi-label targets, raw outputs otherwise.
pub fn scores(task: Task, logits: &[f32], k: usize) -> Vec<f64> {
    let row: Vec<f64> = logits.iter().map(|&v| f64::from(v)).collect();
    match task {
        Task::Classification => row.chunks(k).flat_map(softmax).collect(),
        Task::Multilabel => row.into_iter().map(sigmoid).collect(),
        Task::Regression => row,
    }
}

/// Reads the `znorm` statistics saved with a run into `pipeline`.
pub fn load_norm_stats(run_dir: &Path, pipeline: &mut Pipeline) -> Result<()> {
    let n = pipeline.norm_stats().len();
    if n == 0 {
        return Ok(());
    }
    let stats = (0..n)
        .map(|i| {
            let path = run_dir.join(NORM_STATS_DIR).join(format!("znorm_{i}.{EXTENSION}"));
            NormStats::from_array(&FeatureArray::read(&path)?)
        })
        .collect::<Result<Vec<_>>>()?;
    pipeline.set_norm_stats(stats)
}

/// Applies the online pipeline to an evaluation item.
pub fn eval_features(pipeline: &Pipeline, seed: u64, item_id: &str, x: FeatureArray, subset: Subset) -> Result<FeatureArray> {
    let mut rng = Rng::new(derive_seed(seed, &["eval".to_string(), format!("item:{item_id}")]));
    pipeline.apply_item(x, subset, &mut rng)
}

struct Split {
    ids: Vec<String>,
    targets: Vec<Vec<f32>>,
    features: Vec<FeatureArray>,
}

fn stack_rows(rows: &[Vec<f32>]) -> Result<FeatureArray> {
    let k = rows.first().map_or(0, Vec::len);
    FeatureArray::new(vec![rows.len(), k], rows.concat())
}

/// Eval-mode logits of `features` in chunks of `batch_size`.
pub fn predict(model: &Model<f32>, features: &[FeatureArray], batch_size: usize) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for chunk in features.chunks(batch_size.max(1)) {
        let x = Tensor::from_features(&FeatureArray::stack(chunk)?);
        out.extend(model.infer(x)?.0.data);
    }
    Ok(out)
}

fn evaluate(
    model: &Model<f32>,
    split: &Split,
    task: Task,
    metrics: &[MetricId],
    batch_size: usize,
) -> Result<(IndexMap<String, f64>, Vec<f32>)> {
    let logits = predict(model, &split.features, batch_size)?;
    let k = model.output_dim();
    let s = scores(task, &logits, k);
    let targets: Vec<f64> = split.targets.iter().flatten().map(|&v| f64::from(v)).collect();
    let mut values = IndexMap::new();
    for &m in metrics {
        values.insert(m.as_str().to_string(), compute_metric(m, &s, &targets, k)?);
    }
    Ok((values, logits))
}

fn metric_map(values: &IndexMap<String, f64>) -> ConfigNode {
    ConfigNode::Map(values.iter().map(|(k, v)| (k.clone(), ConfigNode::Float(*v))).collect())
}

fn write_yaml(path: &Path, doc: Mapping) -> Result<()> {
    std::fs::write(path, ConfigNode::Map(doc).to_yaml()).at(path)
}

/// Trains one run of a composed config. Dataset files must exist
/// (see [`data::fetch`] and [`data::preprocess`]).
pub fn train(cfg: &ConfigNode, out: &Path) -> Result<RunRecord> {
    train_with_sinks(cfg, out, Vec::new())
}

/// [`train`] with extra log sinks next to `metrics.csv` and `events.jsonl`.
pub fn train_with_sinks(cfg: &ConfigNode, out: &Path, extra_sinks: Vec<Box<dyn LogSink>>) -> Result<RunRecord> {
    let settings = RunSettings::from_config(cfg)?;
    let manifest = data::load_manifest(cfg, out)?;
    let criterion = match settings.criterion {
        CriterionId::BalancedCrossEntropy => Criterion::balanced(class_weights(&manifest)?),
        id => Criterion::new(id),
    };
    if !criterion.supports(manifest.task) {
        return Err(Error::config(
            "criterion.id",
            format!("{:?} does not fit a {} task", settings.criterion, manifest.task),
        ));
    }
    let metric_list = settings.training.metric_list(manifest.task)?;
    let rate = data::sample_rate(cfg, &manifest)?;
    let online = data::online_pipeline(cfg, rate)?;
    let source = ItemSource::for_run(cfg, &manifest)?;

    let dir = run_dir(cfg, out)?;
    std::fs::create_dir_all(&dir).at(&dir)?;
    let _lock = RunLock::acquire(&dir)?;
    for stale in [ABORTED_YAML, TEST_RESULTS_YAML] {
        let _ = std::fs::remove_file(dir.join(stale));
    }
    let path = dir.join(CONFIG_YAML);
    std::fs::write(&path, cfg.to_yaml()).at(&path)?;

    let mut ctx = RunContext::new(&settings, &manifest, online, &source)?;
    ctx.fit_stats(&dir)?;
    let mut sinks: Vec<Box<dyn LogSink>> = vec![
        Box::new(CsvSink::create(&dir.join(METRICS_CSV))?),
        Box::new(JsonlSink::create(&dir.join(EVENTS_JSONL))?),
    ];
    sinks.extend(extra_sinks);
    ctx.run(&dir, &criterion, &metric_list, &mut sinks)
}

/// Loaded splits plus the online pipeline of one run.
struct RunContext<'a> {
    settings: &'a RunSettings,
    manifest: &'a Manifest,
    sample_rate: u32,
    online: Pipeline,
    train: Split,
    dev: Split,
    test: Split,
    /// Train features after the online pipeline, when it has no random nodes.
    train_fixed: Option<Vec<FeatureArray>>,
}

impl<'a> RunContext<'a> {
    fn new(settings: &'a RunSettings, manifest: &'a Manifest, online: Pipeline, source: &ItemSource) -> Result<Self> {
        let k = manifest.target_dim();
        let split = |subset: Subset| -> Result<Split> {
            let rows: Vec<_> = manifest.subset(subset).collect();
            Ok(Split {
                ids: rows.iter().map(|r| r.item_id().to_string()).collect(),
                targets: rows
                    .iter()
                    .map(|r| Ok(manifest.encode(&r.target)?.to_vector(k)))
                    .collect::<Result<_>>()?,
                features: rows.iter().map(|r| source.load(&r.path)).collect::<Result<_>>()?,
            })
        };
        let (train, dev, test) = (split(Subset::Train)?, split(Subset::Dev)?, split(Subset::Test)?);
        if train.ids.is_empty() || dev.ids.is_empty() {
            return Err(Error::Manifest("training needs non-empty train and dev subsets".into()));
        }
        Ok(RunContext {
            settings,
            manifest,
            sample_rate: online.sample_rate(),
            online,
            train,
            dev,
            test,
            train_fixed: None,
        })
    }

    /// Fits `znorm` statistics on train items, saves them, then moves dev
    /// and test items through the online pipeline once.
    fn fit_stats(&mut self, dir: &Path) -> Result<()> {
        let stats_dir = dir.join(NORM_STATS_DIR);
        let _ = std::fs::remove_dir_all(&stats_dir);
        if self.online.needs_stats() {
            self.online.fit_norm_stats(&self.train.features)?;
            std::fs::create_dir_all(&stats_dir).at(&stats_dir)?;
            for (i, s) in self.online.norm_stats().into_iter().enumerate() {
                let s = s.expect("statistics were just fitted");
                s.to_array().write(&stats_dir.join(format!("znorm_{i}.{EXTENSION}")))?;
            }
        }
        let seed = self.settings.seed;
        for (split, subset) in [(&mut self.dev, Subset::Dev), (&mut self.test, Subset::Test)] {
            let raw = std::mem::take(&mut split.features);
            split.features = raw
                .into_iter()
                .zip(&split.ids)
                .map(|(x, id)| eval_features(&self.online, seed, id, x, subset))
                .collect::<Result<_>>()?;
        }
        if self.online.check_offline().is_ok() {
            let mut rng = Rng::new(0);
            self.train_fixed = Some(
                self.train
                    .features
                    .iter()
                    .map(|x| self.online.apply_item(x.clone(), Subset::Train, &mut rng))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(())
    }

    fn train_batch(&self, epoch: usize, index: usize, items: &[usize]) -> Result<Batch> {
        let seed = self.settings.seed;
        let epoch_tag = format!("epoch:{epoch}");
        let features = items
            .iter()
            .map(|&i| match &self.train_fixed {
                Some(fixed) => Ok(fixed[i].clone()),
                None => {
                    let id = &self.train.ids[i];
                    let path = ["augment".to_string(), epoch_tag.clone(), format!("item:{id}")];
                    let mut rng = Rng::new(derive_seed(seed, &path));
                    self.online.apply_item(self.train.features[i].clone(), Subset::Train, &mut rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let stacked = FeatureArray::stack(&features).map_err(|e| {
            Error::Shape(format!("train items of one batch differ in shape after the online pipeline ({e})"))
        })?;
        let rows: Vec<Vec<f32>> = items.iter().map(|&i| self.train.targets[i].clone()).collect();
        let batch = Batch {
            features: stacked,
            targets: stack_rows(&rows)?,
            item_ids: items.iter().map(|&i| self.train.ids[i].clone()).collect(),
        };
        if !self.online.has_batch_nodes() {
            return Ok(batch);
        }
        let path = ["augment".to_string(), epoch_tag, format!("batch:{index}")];
        self.online.apply_batch(batch, &mut Rng::new(derive_seed(seed, &path)))
    }

    fn run(
        &mut self,
        dir: &Path,
        criterion: &Criterion,
        metric_list: &[MetricId],
        sinks: &mut [Box<dyn LogSink>],
    ) -> Result<RunRecord> {
        let s = self.settings;
        let task = self.manifest.task;
        let k = self.manifest.target_dim();
        let input_dims = self.dev.features[0].dims().to_vec();
        let mut model: Model<f32> = Model::build(&s.model, &input_dims, k, s.seed)?;
        let mut optimizer = Optimizer::new(s.optimizer.clone())?;
        let tracking = s.training.tracking_metric.as_str();
        let mut rows = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        for epoch in 0..s.training.epochs {
            let lr = s.scheduler.lr(s.optimizer.lr, epoch, s.training.epochs);
            let mut order: Vec<usize> = (0..self.train.ids.len()).collect();
            Rng::new(derive_seed(s.seed, &["shuffle".to_string(), format!("epoch:{epoch}")])).shuffle(&mut order);
            let mut loss_sum = 0.0;
            for (b, items) in order.chunks(s.training.batch_size).enumerate() {
                let batch = self.train_batch(epoch, b, items)?;
                let x = Tensor::from_features(&batch.features);
                let y = Tensor::from_features(&batch.targets);
                model.zero_grad();
                let trace = model.forward(x, Mode::Train)?;
                let (loss, grad) = criterion.evaluate(&trace.logits, &y)?;
                if !loss.is_finite() {
                    let mut doc = Mapping::new();
                    doc.insert("epoch".into(), ConfigNode::Int(epoch as i64));
                    doc.insert("batch".into(), ConfigNode::Int(b as i64));
                    doc.insert("reason".into(), ConfigNode::Str("non-finite training loss".into()));
                    write_yaml(&dir.join(ABORTED_YAML), doc)?;
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                loss_sum += f64::from(loss) * items.len() as f64;
                model.backward(&trace, &grad)?;
                optimizer.step(&mut model.params_mut(), lr)?;
            }
            let (dev_metrics, _) = evaluate(&model, &self.dev, task, metric_list, s.training.batch_size)?;
            let record = EpochRecord {
                epoch,
                train_loss: loss_sum / self.train.ids.len() as f64,
                dev: dev_metrics.clone(),
            }
            .rounded();
            for sink in sinks.iter_mut() {
                sink.log(&record)?;
            }
            let value = record.dev[tracking];
            let mut extra = Mapping::new();
            extra.insert("epoch".into(), ConfigNode::Int(epoch as i64));
            extra.insert("tracking_metric".into(), ConfigNode::Str(tracking.into()));
            extra.insert("dev".into(), metric_map(&dev_metrics));
            extra.insert("task".into(), ConfigNode::Str(task.to_string()));
            extra.insert("sample_rate".into(), ConfigNode::Int(i64::from(self.sample_rate)));
            extra.insert(
                "labels".into(),
                ConfigNode::Seq(self.manifest.label_set.iter().map(|l| ConfigNode::Str(l.clone())).collect()),
            );
            model.save(&dir.join(LAST_CHECKPOINT), &extra)?;
            if best.is_none_or(|(_, v)| s.training.tracking_direction.improves(value, v)) {
                best = Some((epoch, value));
                model.save(&dir.join(BEST_CHECKPOINT), &extra)?;
            }
            rows.push(record);
        }
        let (best_epoch, best_value) = best.expect("at least one epoch ran");
        let (best_model, _) = Model::<f32>::load(&dir.join(BEST_CHECKPOINT))?;
        let (dev_metrics, _) = evaluate(&best_model, &self.dev, task, metric_list, s.training.batch_size)?;
        let (test_metrics, logits) = if self.test.ids.is_empty() {
            (IndexMap::new(), Vec::new())
        } else {
            evaluate(&best_model, &self.test, task, metric_list, s.training.batch_size)?
        };
        let items = self
            .test
            .ids
            .iter()
            .zip(logits.chunks(k.max(1)))
            .map(|(id, z)| {
                let mut m = Mapping::new();
                m.insert("path".into(), ConfigNode::Str(id.clone()));
                let target = self.manifest.rows.iter().find(|r| &r.path == id).map(|r| r.target.clone());
                m.insert("target".into(), ConfigNode::Str(target.unwrap_or_default()));
                m.insert(
                    "logits".into(),
                    ConfigNode::Seq(z.iter().map(|&v| ConfigNode::Float(f64::from(v))).collect()),
                );
                ConfigNode::Map(m)
            })
            .collect();
        let mut doc = Mapping::new();
        doc.insert("run_id".into(), ConfigNode::Str(dir.file_name().unwrap_or_default().to_string_lossy().into()));
        doc.insert("best_epoch".into(), ConfigNode::Int(best_epoch as i64));
        doc.insert("tracking_metric".into(), ConfigNode::Str(tracking.into()));
        doc.insert(
            "tracking_direction".into(),
            ConfigNode::from_serialize(&s.training.tracking_direction)?,
        );
        doc.insert("epochs_completed".into(), ConfigNode::Int(rows.len() as i64));
        doc.insert("dev".into(), metric_map(&dev_metrics));
        doc.insert("test".into(), metric_map(&test_metrics));
        doc.insert("items".into(), ConfigNode::Seq(items));
        write_yaml(&dir.join(TEST_RESULTS_YAML), doc)?;
        Ok(RunRecord {
            run_id: dir.file_name().unwrap_or_default().to_string_lossy().into(),
            run_dir: dir.to_path_buf(),
            rows,
            best_epoch,
            best_value,
            test_metrics,
        })
    }
}

#[cfg(test)]
mod tests;
