//! Applying a trained run to new audio with sliding windows.

use std::path::{Path, PathBuf};

use crate::config::{load_file, ConfigNode, Mapping};
use crate::dsp::{read_wav, resample};
use crate::error::{Error, IoContext, Result};
use crate::features::{FeatureArray, EXTENSION};
use crate::manifest::{Subset, Task};
use crate::nn::{Model, Tensor};
use crate::pipeline::Pipeline;
use crate::train::{
    argmax, data, eval_features, load_norm_stats, scores, BEST_CHECKPOINT, CONFIG_YAML, LAST_CHECKPOINT,
};

/// Sample spans `[start, end)` covering an input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    /// Window length in samples.
    pub window: usize,
    pub hop: usize,
    pub spans: Vec<(usize, usize)>,
}

/// Windows start at `0, hop, 2*hop, ...` while they fit; a leftover tail
/// gets one extra right-aligned window. Inputs shorter than one window
/// yield a single span that is zero-padded on the right.
pub fn plan_windows(duration: usize, sample_rate: u32, window_s: f64, hop_s: f64) -> Result<WindowPlan> {
    if !(window_s > 0.0 && hop_s > 0.0 && hop_s <= window_s) {
        return Err(Error::InvalidArgument(format!(
            "window plan needs 0 < hop <= window, got window {window_s} s and hop {hop_s} s"
        )));
    }
    let window = ((window_s * f64::from(sample_rate)).round() as usize).max(1);
    let hop = ((hop_s * f64::from(sample_rate)).round() as usize).clamp(1, window);
    let mut spans = Vec::new();
    if duration <= window {
        spans.push((0, duration));
    } else {
        let mut start = 0;
        while start + window <= duration {
            spans.push((start, start + window));
            start += hop;
        }
        if spans.last().is_some_and(|&(_, end)| end < duration) {
            spans.push((duration - window, duration));
        }
    }
    Ok(WindowPlan { window, hop, spans })
}

/// A checkpoint with the feature pipelines of its run.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: Model<f32>,
    pub offline: Pipeline,
    pub online: Pipeline,
    pub task: Task,
    pub labels: Vec<String>,
    pub seed: u64,
}

/// Outputs for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput {
    pub start_s: f64,
    pub end_s: f64,
    pub logits: Vec<f32>,
    /// Probabilities (classification, multi-label) or raw outputs.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilePrediction {
    pub windows: Vec<WindowOutput>,
    /// Mean of the per-window scores.
    pub aggregate: Vec<f64>,
    /// Argmax label of the aggregate for classification tasks.
    pub label: Option<String>,
    /// Penultimate activations, `[W, D]`.
    pub embeddings: FeatureArray,
}

impl FilePrediction {
    /// Mean embedding over windows, `[D]`.
    pub fn mean_embedding(&self) -> FeatureArray {
        let (w, d) = (self.embeddings.dims()[0], self.embeddings.dims()[1]);
        let data = self.embeddings.data();
        FeatureArray::from_vec(
            (0..d)
                .map(|j| ((0..w).map(|i| f64::from(data[i * d + j])).sum::<f64>() / w as f64) as f32)
                .collect(),
        )
    }
}

impl Predictor {
    /// Loads `checkpoint` (`best`, `last` or a directory path) of a run.
    pub fn load(run_dir: &Path, checkpoint: &str) -> Result<Self> {
        let cfg = load_file(&run_dir.join(CONFIG_YAML))?;
        let ckpt = match checkpoint {
            "best" => run_dir.join(BEST_CHECKPOINT),
            "last" => run_dir.join(LAST_CHECKPOINT),
            other => PathBuf::from(other),
        };
        let (model, doc) = Model::load(&ckpt)?;
        let rate: u32 = doc.extract("sample_rate")?;
        let task = doc
            .get("task")
            .and_then(ConfigNode::as_str)
            .ok_or_else(|| Error::config("task", "checkpoint does not record its task"))?
            .parse()?;
        let labels: Vec<String> = doc.extract("labels")?;
        let mut online = data::online_pipeline(&cfg, rate)?;
        load_norm_stats(run_dir, &mut online)?;
        Ok(Predictor {
            model,
            offline: data::offline_pipeline(&cfg, rate)?,
            online,
            task,
            labels,
            seed: cfg.extract("seed")?,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.online.sample_rate()
    }

    /// Features of one window of samples, as the trainer would see them for
    /// a test item named `item_id`.
    pub fn features(&self, samples: Vec<f32>, item_id: &str) -> Result<FeatureArray> {
        let x = self
            .offline
            .apply_item(FeatureArray::from_vec(samples), Subset::Test, &mut crate::rng::Rng::new(0))?;
        eval_features(&self.online, self.seed, item_id, x, Subset::Test)
    }

    /// Predicts over windows of `samples` (already at the model rate). With
    /// no window length, the whole input is one window.
    pub fn predict(&self, samples: &[f32], item_id: &str, window: Option<(f64, f64)>) -> Result<FilePrediction> {
        let rate = self.sample_rate();
        let spans = match window {
            Some((w, h)) => plan_windows(samples.len(), rate, w, h)?,
            None => WindowPlan {
                window: samples.len(),
                hop: samples.len(),
                spans: vec![(0, samples.len())],
            },
        };
        let mut feats = Vec::with_capacity(spans.spans.len());
        for &(start, end) in &spans.spans {
            let mut chunk = samples[start..end].to_vec();
            chunk.resize(spans.window.max(end - start), 0.0);
            feats.push(self.features(chunk, item_id)?);
        }
        let x = Tensor::from_features(&FeatureArray::stack(&feats)?);
        let (logits, embeddings) = self.model.infer(x)?;
        let k = self.model.output_dim();
        let windows: Vec<WindowOutput> = spans
            .spans
            .iter()
            .zip(logits.data.chunks(k))
            .map(|(&(start, end), z)| WindowOutput {
                start_s: start as f64 / f64::from(rate),
                end_s: end as f64 / f64::from(rate),
                logits: z.to_vec(),
                scores: scores(self.task, z, k),
            })
            .collect();
        let aggregate: Vec<f64> = (0..k)
            .map(|c| windows.iter().map(|w| w.scores[c]).sum::<f64>() / windows.len() as f64)
            .collect();
        let label = (self.task == Task::Classification).then(|| self.labels[argmax(&aggregate)].clone());
        Ok(FilePrediction {
            windows,
            aggregate,
            label,
            embeddings: embeddings.to_features(),
        })
    }

    /// Decodes, resamples and predicts one audio file.
    pub fn predict_file(&self, path: &Path, window: Option<(f64, f64)>) -> Result<FilePrediction> {
        let w = resample(&read_wav(path)?, self.sample_rate())?;
        let id = path.file_name().unwrap_or_default().to_string_lossy();
        self.predict(&w.samples, &id, window)
    }

    /// Per-window embeddings `[W, D]` and their mean `[D]`.
    pub fn embed_file(&self, path: &Path, window: Option<(f64, f64)>) -> Result<(FeatureArray, FeatureArray)> {
        let p = self.predict_file(path, window)?;
        let mean = p.mean_embedding();
        Ok((p.embeddings, mean))
    }
}

fn floats<T: Copy + Into<f64>>(v: &[T]) -> ConfigNode {
    ConfigNode::Seq(v.iter().map(|&x| ConfigNode::Float(x.into())).collect())
}

/// Writes `<stem>.predictions.yaml`, `<stem>.embedding.atnr` and
/// `<stem>.windows.atnr` into `out`; returns the predictions path.
pub fn write_outputs(p: &FilePrediction, labels: &[String], out: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out).at(out)?;
    let windows = p
        .windows
        .iter()
        .map(|w| {
            let mut m = Mapping::new();
            m.insert("start_s".into(), ConfigNode::Float(w.start_s));
            m.insert("end_s".into(), ConfigNode::Float(w.end_s));
            m.insert("logits".into(), floats(&w.logits));
            m.insert("scores".into(), floats(&w.scores));
            ConfigNode::Map(m)
        })
        .collect();
    let mut agg = Mapping::new();
    if let Some(label) = &p.label {
        agg.insert("label".into(), ConfigNode::Str(label.clone()));
    }
    agg.insert("scores".into(), floats(&p.aggregate));
    let mut doc = Mapping::new();
    if !labels.is_empty() {
        doc.insert("labels".into(), ConfigNode::Seq(labels.iter().map(|l| ConfigNode::Str(l.clone())).collect()));
    }
    doc.insert("windows".into(), ConfigNode::Seq(windows));
    doc.insert("aggregate".into(), ConfigNode::Map(agg));
    let path = out.join(format!("{stem}.predictions.yaml"));
    std::fs::write(&path, ConfigNode::Map(doc).to_yaml()).at(&path)?;
    p.mean_embedding().write(&out.join(format!("{stem}.embedding.{EXTENSION}")))?;
    p.embeddings.write(&out.join(format!("{stem}.windows.{EXTENSION}")))?;
    Ok(path)
}

/// WAV files under `input` (the file itself, or a directory's `.wav`
/// files recursively), sorted.
pub fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).at(dir)? {
            let path = entry.at(dir)?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    if input.is_dir() {
        walk(input, &mut files)?;
    } else {
        std::fs::metadata(input).at(input)?;
        files.push(input.to_path_buf());
    }
    files.sort();
    Ok(files)
}

/// Predicts every input file into `out`. Each file succeeds or fails on
/// its own.
pub fn run_inference(
    predictor: &Predictor,
    input: &Path,
    out: &Path,
    window: Option<(f64, f64)>,
) -> Result<Vec<(PathBuf, Result<PathBuf>)>> {
    Ok(list_inputs(input)?
        .into_iter()
        .map(|f| {
            let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let result = predictor
                .predict_file(&f, window)
                .and_then(|p| write_outputs(&p, &predictor.labels, out, &stem));
            (f, result)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use proptest::prelude::*;

    #[test]
    fn exact_multiple() {
        let p = plan_windows(160_000, 16000, 1.0, 1.0).unwrap();
        assert_eq!(p.spans.len(), 10);
    }

    #[test]
    fn tail_window_is_right_aligned() {
        let p = plan_windows(168_000, 16000, 1.0, 1.0).unwrap();
        assert_eq!(p.spans.len(), 11);
        assert_eq!(p.spans[10], (152_000, 168_000));
    }

    #[test]
    fn short_input_single_window() {
        let p = plan_windows(6400, 16000, 1.0, 0.5).unwrap();
        assert_eq!(p.spans, vec![(0, 6400)]);
        assert!(plan_windows(10, 16000, 1.0, 2.0).is_err());
        assert!(plan_windows(10, 16000, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn plan_covers_input(duration in 1usize..5000, win in 1usize..400, hop_frac in 0.05f64..1.0) {
            let hop = ((win as f64 * hop_frac) as usize).max(1);
            let p = plan_windows(duration, 1000, win as f64 / 1000.0, hop as f64 / 1000.0).unwrap();
            prop_assert_eq!(p.spans[0].0, 0);
            prop_assert_eq!(p.spans.last().unwrap().1, duration);
            for w in p.spans.windows(2) {
                prop_assert!(w[0].0 < w[1].0 && w[1].0 <= w[0].1);
            }
            if duration >= win {
                prop_assert!(p.spans.iter().all(|&(s, e)| e - s == win));
            }
        }
    }

    fn toy_predictor() -> Predictor {
        // Logits equal to the first two samples of each window.
        let mut layer = Layer::linear("out", 4, 2, 0);
        if let Layer::Linear { w, .. } = &mut layer {
            w.value = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        }
        let model = Model::from_layers(vec![layer], vec![4]).unwrap();
        Predictor {
            model,
            offline: Pipeline::empty(4),
            online: Pipeline::empty(4),
            task: Task::Classification,
            labels: vec!["a".into(), "b".into()],
            seed: 0,
        }
    }

    #[test]
    fn aggregate_is_mean_of_probabilities() {
        let p = toy_predictor();
        // Window 1 strongly favours class 0, window 2 class 1.
        let samples = [50.0, 0.0, 0.0, 0.0, 0.0, 50.0, 0.0, 0.0];
        let out = p.predict(&samples, "x", Some((1.0, 1.0))).unwrap();
        assert_eq!(out.windows.len(), 2);
        assert!((out.aggregate[0] - 0.5).abs() < 1e-12);
        assert!((out.aggregate.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(out.label.as_deref(), Some("a"));
        assert_eq!(out.embeddings.dims(), &[2, 4]);
    }

    #[test]
    fn single_window_aggregate_equals_window() {
        let p = toy_predictor();
        let out = p.predict(&[0.3, 0.1, 0.0], "x", Some((1.0, 1.0))).unwrap();
        assert_eq!(out.windows.len(), 1);
        assert_eq!(out.aggregate, out.windows[0].scores);
        assert_eq!(out.mean_embedding().data(), &[0.3, 0.1, 0.0, 0.0]);
    }

    #[test]
    fn duplicated_content_gives_identical_rows() {
        let p = toy_predictor();
        let out = p.predict(&[0.5, 0.2, 0.1, 0.9, 0.5, 0.2, 0.1, 0.9], "x", Some((1.0, 1.0))).unwrap();
        let e = out.embeddings.data();
        assert_eq!(e[..4], e[4..]);
        assert_eq!(out.windows[0].logits, out.windows[1].logits);
    }
}
