//! Ordered transform and augmentation pipelines.
//!
//! A pipeline is built from a list of node configs:
//!
//! ```yaml
//! - id: log_mel
//!   order: 0
//!   params: {n_mels: 64}
//! - id: spec_augment
//!   order: 5
//!   p: 0.5
//!   params: {time_masks: 2, time_width: 10}
//! ```
//!
//! Nodes run in ascending `order`, ties in declaration order. Transforms
//! always run (within their `subset` scope). Every augmentation node draws a
//! gate uniform and a sub-seed from the item stream whether or not it
//! applies, so later nodes see the same draws regardless of earlier gate
//! outcomes. Augmentations default to, and are restricted to, the train
//! subset. `mixup` and `cutmix` act on whole batches after the item-level
//! nodes.

mod offline;
pub mod ops;

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::config::ConfigNode;
use crate::dsp::{log_mel, read_wav, resample, spec_to_image, stft_power, temporal_functionals, MelFilterbank, Waveform};
use crate::error::{Error, Result};
use crate::features::FeatureArray;
use crate::manifest::Subset;
use crate::rng::{fnv1a64, Rng};

pub use offline::{apply_offline, feature_dir, FeatureIndex, OfflineReport, FEATURE_INDEX};
pub use ops::{FitMode, NormStats, SpecAugmentParams};

/// Registered node ids.
pub const REGISTRY: &[&str] = &[
    "log_mel",
    "stft",
    "functionals",
    "spec_to_image",
    "fit_length",
    "znorm",
    "random_crop",
    "spec_augment",
    "time_warp",
    "gaussian_noise",
    "mixup",
    "cutmix",
    "sequence",
    "choice",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Transform,
    Augmentation,
    BatchAugmentation,
}

/// A stack of items with their target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: FeatureArray,
    pub targets: FeatureArray,
    pub item_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Op {
    LogMel { n_fft: usize, hop: usize, filterbank: Arc<MelFilterbank> },
    Stft { n_fft: usize, hop: usize },
    Functionals,
    SpecToImage { height: usize, width: usize },
    FitLength { length: usize, mode: FitMode },
    Znorm { stats: Option<NormStats> },
    RandomCrop { length: usize },
    SpecAugment(SpecAugmentParams),
    TimeWarp { w: usize },
    GaussianNoise { snr_db: f64 },
    Mixup { alpha: f64 },
    Cutmix { alpha: f64 },
    Sequence,
    Choice,
}

#[derive(Debug, Clone)]
pub struct PipelineNode {
    pub id: String,
    pub order: i64,
    pub p: f64,
    pub subsets: Vec<Subset>,
    pub children: Vec<PipelineNode>,
    pub weights: Vec<f64>,
    pub kind: NodeKind,
    op: Op,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    #[serde(default)]
    order: i64,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    subset: Option<Vec<Subset>>,
    #[serde(default)]
    params: Option<serde_json::Value>,
    #[serde(default)]
    children: Vec<serde_json::Value>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LogMelParams {
    n_fft: usize,
    hop: usize,
    n_mels: usize,
    f_min: f64,
    f_max: Option<f64>,
}

impl Default for LogMelParams {
    fn default() -> Self {
        LogMelParams {
            n_fft: 512,
            hop: 160,
            n_mels: 64,
            f_min: 50.0,
            f_max: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StftParams {
    n_fft: usize,
    hop: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams { n_fft: 512, hop: 160 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ImageParams {
    height: usize,
    width: usize,
}

impl Default for ImageParams {
    fn default() -> Self {
        ImageParams { height: 224, width: 224 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LengthParams {
    length: usize,
    #[serde(default = "default_fit_mode")]
    mode: FitMode,
}

fn default_fit_mode() -> FitMode {
    FitMode::Pad
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CropParams {
    length: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WarpParams {
    #[serde(default = "default_warp")]
    w: usize,
}

fn default_warp() -> usize {
    5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseParams {
    #[serde(default = "default_snr")]
    snr_db: f64,
}

fn default_snr() -> f64 {
    20.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaParams {
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    0.4
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn params<T: DeserializeOwned>(id: &str, value: &Option<serde_json::Value>) -> Result<T> {
    let value = match value {
        None | Some(serde_json::Value::Null) => serde_json::Value::Object(Default::default()),
        Some(v) => v.clone(),
    };
    serde_json::from_value(value).map_err(|e| Error::config(format!("{id}.params"), e.to_string()))
}

impl PipelineNode {
    fn from_json(value: serde_json::Value, sample_rate: u32) -> Result<Self> {
        let raw: RawNode =
            serde_json::from_value(value).map_err(|e| Error::config("pipeline node", e.to_string()))?;
        let id = raw.id.clone();
        let children = raw
            .children
            .into_iter()
            .map(|c| PipelineNode::from_json(c, sample_rate))
            .collect::<Result<Vec<_>>>()?;
        let positive = |v: usize, name: &str| -> Result<usize> {
            if v == 0 {
                Err(Error::config(format!("{id}.params.{name}"), "must be at least 1"))
            } else {
                Ok(v)
            }
        };
        let (op, kind) = match id.as_str() {
            "log_mel" => {
                let p: LogMelParams = params(&id, &raw.params)?;
                let f_max = p.f_max.unwrap_or(f64::from(sample_rate) / 2.0);
                let filterbank = MelFilterbank::new(p.n_mels, p.n_fft, sample_rate, p.f_min, f_max)
                    .map_err(|e| Error::config(format!("{id}.params"), e.to_string()))?;
                (
                    Op::LogMel {
                        n_fft: p.n_fft,
                        hop: positive(p.hop, "hop")?,
                        filterbank: Arc::new(filterbank),
                    },
                    NodeKind::Transform,
                )
            }
            "stft" => {
                let p: StftParams = params(&id, &raw.params)?;
                if !p.n_fft.is_power_of_two() {
                    return Err(Error::config(format!("{id}.params.n_fft"), "must be a power of two"));
                }
                (Op::Stft { n_fft: p.n_fft, hop: positive(p.hop, "hop")? }, NodeKind::Transform)
            }
            "functionals" => {
                params::<NoParams>(&id, &raw.params)?;
                (Op::Functionals, NodeKind::Transform)
            }
            "spec_to_image" => {
                let p: ImageParams = params(&id, &raw.params)?;
                (
                    Op::SpecToImage {
                        height: positive(p.height, "height")?,
                        width: positive(p.width, "width")?,
                    },
                    NodeKind::Transform,
                )
            }
            "fit_length" => {
                let p: LengthParams = params(&id, &raw.params)?;
                (Op::FitLength { length: positive(p.length, "length")?, mode: p.mode }, NodeKind::Transform)
            }
            "znorm" => {
                params::<NoParams>(&id, &raw.params)?;
                (Op::Znorm { stats: None }, NodeKind::Transform)
            }
            "random_crop" => {
                let p: CropParams = params(&id, &raw.params)?;
                (Op::RandomCrop { length: positive(p.length, "length")? }, NodeKind::Augmentation)
            }
            "spec_augment" => (Op::SpecAugment(params(&id, &raw.params)?), NodeKind::Augmentation),
            "time_warp" => {
                let p: WarpParams = params(&id, &raw.params)?;
                (Op::TimeWarp { w: positive(p.w, "w")? }, NodeKind::Augmentation)
            }
            "gaussian_noise" => {
                let p: NoiseParams = params(&id, &raw.params)?;
                if !p.snr_db.is_finite() {
                    return Err(Error::config(format!("{id}.params.snr_db"), "must be finite"));
                }
                (Op::GaussianNoise { snr_db: p.snr_db }, NodeKind::Augmentation)
            }
            "mixup" | "cutmix" => {
                let p: AlphaParams = params(&id, &raw.params)?;
                if !(p.alpha > 0.0 && p.alpha.is_finite()) {
                    return Err(Error::config(format!("{id}.params.alpha"), "must be positive"));
                }
                let op = if id == "mixup" {
                    Op::Mixup { alpha: p.alpha }
                } else {
                    Op::Cutmix { alpha: p.alpha }
                };
                (op, NodeKind::BatchAugmentation)
            }
            "sequence" | "choice" => {
                params::<NoParams>(&id, &raw.params)?;
                if children.is_empty() {
                    return Err(Error::config(format!("{id}.children"), "needs at least one child"));
                }
                if let Some(c) = children.iter().find(|c| c.kind == NodeKind::BatchAugmentation) {
                    return Err(Error::config(
                        format!("{id}.children"),
                        format!("batch node `{}` cannot be nested", c.id),
                    ));
                }
                let stochastic = id == "choice" || children.iter().any(|c| c.kind == NodeKind::Augmentation);
                let kind = if stochastic { NodeKind::Augmentation } else { NodeKind::Transform };
                let op = if id == "choice" { Op::Choice } else { Op::Sequence };
                (op, kind)
            }
            other => {
                return Err(Error::UnknownId {
                    kind: "pipeline node",
                    id: other.to_string(),
                    suggestion: crate::error::suggest(other, REGISTRY),
                })
            }
        };
        if !matches!(op, Op::Sequence | Op::Choice) && !children.is_empty() {
            return Err(Error::config(format!("{id}.children"), "only sequence and choice nodes take children"));
        }
        let weights = match (&op, raw.weights) {
            (Op::Choice, Some(w)) => {
                if w.len() != children.len() || w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::config(
                        format!("{id}.weights"),
                        "need one non-negative weight per child, not all zero",
                    ));
                }
                w
            }
            (Op::Choice, None) => vec![1.0; children.len()],
            (_, Some(_)) => return Err(Error::config(format!("{id}.weights"), "only choice nodes take weights")),
            (_, None) => Vec::new(),
        };
        let p = raw.p.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("{id}.p"), format!("probability {p} outside [0, 1]")));
        }
        if kind == NodeKind::Transform && p != 1.0 {
            return Err(Error::config(format!("{id}.p"), "transforms always apply; p must be 1"));
        }
        let subsets = match raw.subset {
            Some(s) => s,
            None if kind == NodeKind::Transform => Subset::ALL.to_vec(),
            None => vec![Subset::Train],
        };
        if kind != NodeKind::Transform && subsets.iter().any(|&s| s != Subset::Train) {
            return Err(Error::config(format!("{id}.subset"), "augmentations apply to the train subset only"));
        }
        Ok(PipelineNode {
            id,
            order: raw.order,
            p,
            subsets,
            children,
            weights,
            kind,
            op,
        })
    }

    fn in_scope(&self, subset: Subset) -> bool {
        self.subsets.contains(&subset)
    }

    fn apply(&self, x: FeatureArray, subset: Subset, rng: &mut Rng) -> Result<FeatureArray> {
        match self.kind {
            NodeKind::Transform => {
                if self.in_scope(subset) {
                    self.run(x, subset, rng)
                } else {
                    Ok(x)
                }
            }
            NodeKind::Augmentation => {
                let u = rng.next_f64();
                let sub_seed = rng.next_u64();
                if self.in_scope(subset) && u < self.p {
                    self.run(x, subset, &mut Rng::new(sub_seed))
                } else {
                    Ok(x)
                }
            }
            NodeKind::BatchAugmentation => Ok(x),
        }
    }

    fn run(&self, x: FeatureArray, subset: Subset, rng: &mut Rng) -> Result<FeatureArray> {
        let dims = x.dims().to_vec();
        let result = match &self.op {
            Op::LogMel { n_fft, hop, filterbank } => {
                let w = as_waveform(x, filterbank.sample_rate)?;
                log_mel(&stft_power(&w, *n_fft, *hop)?, filterbank)
            }
            Op::Stft { n_fft, hop } => stft_power(&as_waveform(x, 1)?, *n_fft, *hop),
            Op::Functionals => temporal_functionals(&x),
            Op::SpecToImage { height, width } => spec_to_image(&x, *height, *width),
            Op::FitLength { length, mode } => ops::fit_length(&x, *length, *mode),
            Op::Znorm { stats } => match stats {
                Some(s) => ops::znormalize(&x, s),
                None => Err(Error::InvalidArgument(
                    "znorm statistics missing; fit them on the training subset first".into(),
                )),
            },
            Op::RandomCrop { length } => ops::random_crop(&x, *length, rng),
            Op::SpecAugment(p) => ops::spec_augment(&x, *p, rng),
            Op::TimeWarp { w } => ops::time_warp(&x, *w, rng),
            Op::GaussianNoise { snr_db } => Ok(ops::gaussian_noise(&x, *snr_db, rng)),
            Op::Mixup { .. } | Op::Cutmix { .. } => Ok(x),
            Op::Sequence => {
                let mut x = x;
                for child in &self.children {
                    x = child.apply(x, subset, rng)?;
                }
                Ok(x)
            }
            Op::Choice => {
                let i = ops::choose_index(&self.weights, rng.next_f64());
                self.children[i].apply(x, subset, rng)
            }
        };
        result.map_err(|e| match e {
            Error::Shape(m) | Error::InvalidArgument(m) => {
                Error::Shape(format!("node `{}` on input {dims:?}: {m}", self.id))
            }
            other => other,
        })
    }
}

fn as_waveform(x: FeatureArray, sample_rate: u32) -> Result<Waveform> {
    if x.ndim() != 1 {
        return Err(Error::Shape(format!("expected a 1-D waveform, got {:?}", x.dims())));
    }
    Waveform::new(x.into_data(), sample_rate)
}

/// Decodes a WAV file, resamples it and returns the samples as a 1-D array.
pub fn load_audio(path: &std::path::Path, sample_rate: u32) -> Result<FeatureArray> {
    let w = resample(&read_wav(path)?, sample_rate)?;
    Ok(FeatureArray::from_vec(w.samples))
}

/// An ordered, immutable list of nodes (apart from fitted statistics).
#[derive(Debug, Clone)]
pub struct Pipeline {
    nodes: Vec<PipelineNode>,
    sample_rate: u32,
    source: ConfigNode,
}

impl Pipeline {
    pub fn empty(sample_rate: u32) -> Self {
        Pipeline {
            nodes: Vec::new(),
            sample_rate,
            source: ConfigNode::Seq(Vec::new()),
        }
    }

    /// Builds and stably sorts nodes by `order`. `sample_rate` is the rate
    /// audio is resampled to before the first node.
    pub fn build(nodes: &[ConfigNode], sample_rate: u32) -> Result<Self> {
        let mut built = nodes
            .iter()
            .map(|n| PipelineNode::from_json(n.to_json(), sample_rate))
            .collect::<Result<Vec<_>>>()?;
        built.sort_by_key(|n| n.order);
        Ok(Pipeline {
            nodes: built,
            sample_rate,
            source: ConfigNode::Seq(nodes.to_vec()),
        })
    }

    /// Concatenates node lists (each a sequence or absent) and builds them.
    pub fn from_lists(lists: &[Option<&ConfigNode>], sample_rate: u32) -> Result<Self> {
        let mut all = Vec::new();
        for list in lists.iter().flatten() {
            match list {
                ConfigNode::Null => {}
                ConfigNode::Seq(items) => all.extend(items.iter().cloned()),
                _ => return Err(Error::config("transforms", "expected a list of pipeline nodes")),
            }
        }
        Pipeline::build(&all, sample_rate)
    }

    pub fn nodes(&self) -> &[PipelineNode] {
        &self.nodes
    }

    pub fn ids(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Content hash of the node list and sample rate.
    pub fn fingerprint(&self) -> String {
        let text = format!("{}@{}", self.source.canonical(), self.sample_rate);
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    /// Fails on the first node that is not a plain transform.
    pub fn check_offline(&self) -> Result<()> {
        match self.nodes.iter().find(|n| n.kind != NodeKind::Transform) {
            Some(n) => Err(Error::OfflineAugmentation(n.id.clone())),
            None => Ok(()),
        }
    }

    pub fn has_batch_nodes(&self) -> bool {
        self.nodes.iter().any(|n| n.kind == NodeKind::BatchAugmentation)
    }

    /// Runs the item-level nodes for one item of `subset`.
    pub fn apply_item(&self, x: FeatureArray, subset: Subset, rng: &mut Rng) -> Result<FeatureArray> {
        let mut x = x;
        for node in &self.nodes {
            x = node.apply(x, subset, rng)?;
        }
        Ok(x)
    }

    /// Runs the batch-level nodes on a training batch.
    pub fn apply_batch(&self, batch: Batch, rng: &mut Rng) -> Result<Batch> {
        let mut batch = batch;
        for node in self.nodes.iter().filter(|n| n.kind == NodeKind::BatchAugmentation) {
            let u = rng.next_f64();
            let mut sub = Rng::new(rng.next_u64());
            if u >= node.p {
                continue;
            }
            batch = match node.op {
                Op::Mixup { alpha } => ops::mixup_batch(&batch, alpha, &mut sub)?,
                Op::Cutmix { alpha } => ops::cutmix_batch(&batch, alpha, &mut sub)?,
                _ => unreachable!("only batch ops are batch nodes"),
            };
        }
        Ok(batch)
    }

    fn znorm_positions(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Znorm { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn needs_stats(&self) -> bool {
        !self.znorm_positions().is_empty()
    }

    /// Fits every `znorm` node on training items passed through the
    /// transforms preceding it. Augmentations are skipped while fitting.
    pub fn fit_norm_stats(&mut self, train_items: &[FeatureArray]) -> Result<()> {
        let mut done = 0;
        let mut items = train_items.to_vec();
        let mut dummy = Rng::new(0);
        for pos in self.znorm_positions() {
            for node in &self.nodes[done..pos] {
                if node.kind != NodeKind::Transform {
                    continue;
                }
                items = items
                    .into_iter()
                    .map(|x| node.apply(x, Subset::Train, &mut dummy))
                    .collect::<Result<_>>()?;
            }
            let stats = NormStats::fit(&items)?;
            items = items
                .iter()
                .map(|x| ops::znormalize(x, &stats))
                .collect::<Result<_>>()?;
            self.nodes[pos].op = Op::Znorm { stats: Some(stats) };
            done = pos + 1;
        }
        Ok(())
    }

    /// Fitted statistics of each `znorm` node, in pipeline order.
    pub fn norm_stats(&self) -> Vec<Option<&NormStats>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Znorm { stats } => Some(stats.as_ref()),
                _ => None,
            })
            .collect()
    }

    pub fn set_norm_stats(&mut self, stats: Vec<NormStats>) -> Result<()> {
        let positions = self.znorm_positions();
        if positions.len() != stats.len() {
            return Err(Error::InvalidArgument(format!(
                "pipeline has {} znorm nodes, got {} statistics",
                positions.len(),
                stats.len()
            )));
        }
        for (pos, s) in positions.into_iter().zip(stats) {
            self.nodes[pos].op = Op::Znorm { stats: Some(s) };
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::config::parse_yaml;
    use proptest::prelude::*;

    fn nodes(yaml: &str) -> Vec<ConfigNode> {
        parse_yaml(&format!("n:\n{yaml}")).unwrap().get("n").unwrap().as_seq().unwrap().to_vec()
    }

    fn build(yaml: &str) -> Result<Pipeline> {
        Pipeline::build(&nodes(yaml), 16000)
    }

    fn spectrogram(seed: u64, bins: usize, t: usize) -> FeatureArray {
        let mut rng = Rng::new(seed);
        FeatureArray::new(vec![bins, t], (0..bins * t).map(|_| rng.next_gaussian() as f32).collect()).unwrap()
    }

    #[test]
    fn sorts_by_order_then_declaration() {
        let p = build("  - {id: znorm, order: 10}\n  - {id: random_crop, order: 0, params: {length: 5}}\n").unwrap();
        assert_eq!(p.ids(), vec!["random_crop", "znorm"]);
        let p = build("  - {id: functionals}\n  - {id: znorm}\n").unwrap();
        assert_eq!(p.ids(), vec!["functionals", "znorm"]);
    }

    #[test]
    fn unknown_id_suggests() {
        let err = build("  - {id: mixpu}\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown pipeline node `mixpu` (did you mean `mixup`?)");
        assert!(matches!(build("  - {id: nosuch}\n"), Err(Error::UnknownId { .. })));
    }

    #[test]
    fn invalid_nodes_rejected() {
        assert!(build("  - {id: mixup, p: 1.5}\n").is_err());
        assert!(build("  - {id: functionals, p: 0.5}\n").is_err());
        assert!(build("  - {id: choice, children: []}\n").is_err());
        assert!(build("  - {id: gaussian_noise, subset: [dev]}\n").is_err());
        assert!(build("  - {id: fit_length, params: {length: 5, bogus: 1}}\n").is_err());
    }

    #[test]
    fn offline_forbids_augmentations() {
        let p = build("  - {id: log_mel}\n  - {id: mixup}\n").unwrap();
        assert!(matches!(p.check_offline(), Err(Error::OfflineAugmentation(id)) if id == "mixup"));
        assert!(build("  - {id: log_mel}\n").unwrap().check_offline().is_ok());
    }

    #[test]
    fn train_scoped_crop_is_identity_on_dev() {
        let p = build("  - {id: random_crop, params: {length: 10}}\n").unwrap();
        let x = spectrogram(1, 4, 30);
        assert_eq!(p.apply_item(x.clone(), Subset::Dev, &mut Rng::new(3)).unwrap(), x);
        assert_eq!(p.apply_item(x, Subset::Train, &mut Rng::new(3)).unwrap().dims(), &[4, 10]);
    }

    #[test]
    fn gate_bounds() {
        let x = spectrogram(2, 4, 30);
        let never = build("  - {id: gaussian_noise, p: 0.0}\n").unwrap();
        let always = build("  - {id: gaussian_noise, p: 1.0}\n").unwrap();
        for seed in 0..50 {
            assert_eq!(never.apply_item(x.clone(), Subset::Train, &mut Rng::new(seed)).unwrap(), x);
            assert_ne!(always.apply_item(x.clone(), Subset::Train, &mut Rng::new(seed)).unwrap(), x);
        }
    }

    #[test]
    fn gate_draws_always() {
        let x = spectrogram(2, 4, 30);
        let spec = |p: f64| {
            format!(
                "  - {{id: spec_augment, p: {p}, params: {{time_masks: 2, time_width: 5}}}}\n  - {{id: gaussian_noise, p: 0.5, order: 1}}\n"
            )
        };
        let (p0, p1) = (build(&spec(0.0)).unwrap(), build(&spec(1.0)).unwrap());
        for seed in 0..20 {
            let (mut a, mut b) = (Rng::new(seed), Rng::new(seed));
            p0.apply_item(x.clone(), Subset::Train, &mut a).unwrap();
            p1.apply_item(x.clone(), Subset::Train, &mut b).unwrap();
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn choice_and_sequence() {
        let x = spectrogram(3, 4, 12);
        let p = build(
            "  - id: choice\n    weights: [1, 0]\n    children:\n      - {id: fit_length, params: {length: 3}}\n      - {id: fit_length, params: {length: 7}}\n",
        )
        .unwrap();
        for seed in 0..20 {
            assert_eq!(p.apply_item(x.clone(), Subset::Train, &mut Rng::new(seed)).unwrap().dims(), &[4, 3]);
        }
        let p = build(
            "  - id: sequence\n    children:\n      - {id: fit_length, order: 5, params: {length: 3}}\n      - {id: fit_length, order: 1, params: {length: 7, mode: replicate}}\n",
        )
        .unwrap();
        assert_eq!(p.nodes()[0].kind, NodeKind::Transform);
        let y = p.apply_item(x.clone(), Subset::Dev, &mut Rng::new(0)).unwrap();
        assert_eq!(y.dims(), &[4, 7]);
        assert_eq!(y.at2(0, 3), x.at2(0, 0));
    }

    #[test]
    fn shape_errors_name_the_node() {
        let p = build("  - {id: functionals}\n  - {id: functionals}\n").unwrap();
        let err = p.apply_item(spectrogram(1, 3, 5), Subset::Dev, &mut Rng::new(0)).unwrap_err();
        assert!(err.to_string().contains("functionals") && err.to_string().contains("[6]"), "{err}");
    }

    #[test]
    fn fits_stats_after_preceding_transforms() {
        let mut p = build("  - {id: functionals}\n  - {id: znorm, order: 1}\n").unwrap();
        assert!(p.apply_item(spectrogram(1, 3, 5), Subset::Dev, &mut Rng::new(0)).is_err());
        let train: Vec<FeatureArray> = (0..30).map(|i| spectrogram(i, 3, 5)).collect();
        p.fit_norm_stats(&train).unwrap();
        let out: Vec<FeatureArray> = train
            .iter()
            .map(|x| p.apply_item(x.clone(), Subset::Train, &mut Rng::new(0)).unwrap())
            .collect();
        let stats = NormStats::fit(&out).unwrap();
        assert!(stats.mean.iter().all(|m| m.abs() < 1e-5));
        let saved: Vec<NormStats> = p.norm_stats().into_iter().map(|s| s.unwrap().clone()).collect();
        let mut q = build("  - {id: functionals}\n  - {id: znorm, order: 1}\n").unwrap();
        q.set_norm_stats(saved).unwrap();
        assert_eq!(
            q.apply_item(train[0].clone(), Subset::Test, &mut Rng::new(0)).unwrap(),
            out[0]
        );
    }

    #[test]
    fn log_mel_node_shape() {
        let p = build("  - {id: log_mel}\n").unwrap();
        let y = p.apply_item(FeatureArray::from_vec(vec![0.1; 16000]), Subset::Train, &mut Rng::new(0)).unwrap();
        assert_eq!(y.dims(), &[64, 97]);
    }

    #[test]
    fn batch_nodes_gate_per_batch() {
        let p = build("  - {id: mixup, p: 0.0}\n").unwrap();
        let b = Batch {
            features: FeatureArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            targets: FeatureArray::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            item_ids: vec!["a".into(), "b".into()],
        };
        assert!(p.has_batch_nodes());
        assert_eq!(p.apply_batch(b.clone(), &mut Rng::new(1)).unwrap(), b);
    }

    const ITEM_NODES: &[&str] = &[
        "{id: random_crop, params: {length: 16}}",
        "{id: spec_augment, params: {freq_masks: 1, freq_width: 2, time_masks: 1, time_width: 3}}",
        "{id: time_warp, params: {w: 3}}",
        "{id: gaussian_noise, params: {snr_db: 10}}",
        "{id: fit_length, params: {length: 16}}",
    ];

    proptest! {
        #[test]
        fn random_pipelines_keep_valid_shapes(
            picks in prop::collection::vec((0usize..5, 0.0f64..=1.0, -3i64..3), 1..6),
            seed in any::<u64>(),
        ) {
            let yaml: String = picks
                .iter()
                .map(|&(i, p, order)| {
                    let node = ITEM_NODES[i].strip_suffix('}').unwrap();
                    let p = if i == 4 { 1.0 } else { p };
                    format!("  - {node}, p: {p}, order: {order}}}\n")
                })
                .collect();
            let mut yaml = yaml;
            yaml.push_str("  - {id: fit_length, order: 100, params: {length: 16}}\n");
            let pipeline = build(&yaml).unwrap();
            let out = pipeline.apply_item(spectrogram(seed, 6, 24), Subset::Train, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(out.dims(), &[6, 16]);
            prop_assert!(out.is_finite());
            let again = pipeline.apply_item(spectrogram(seed, 6, 24), Subset::Train, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(out, again);
        }

        #[test]
        fn declaration_order_irrelevant_with_distinct_orders(seed in any::<u64>(), swap in any::<bool>()) {
            let a = "  - {id: gaussian_noise, order: 2, p: 0.5}\n";
            let b = "  - {id: spec_augment, order: 1, p: 0.5, params: {time_masks: 1, time_width: 4}}\n";
            let yaml = if swap { format!("{a}{b}") } else { format!("{b}{a}") };
            let p = build(&yaml).unwrap();
            let q = build(&format!("{b}{a}")).unwrap();
            let x = spectrogram(seed, 4, 20);
            prop_assert_eq!(
                p.apply_item(x.clone(), Subset::Train, &mut Rng::new(seed)).unwrap(),
                q.apply_item(x, Subset::Train, &mut Rng::new(seed)).unwrap()
            );
        }
    }
}
