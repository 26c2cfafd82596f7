//! Config wiring for the dataset stages: `fetch` and `preprocess`, plus
//! loading the features a run trains on.

use std::path::{Path, PathBuf};

use crate::config::ConfigNode;
use crate::error::{Error, Result};
use crate::features::FeatureArray;
use crate::manifest::{generate_toytones, ingest, Manifest, MANIFEST_CSV};
use crate::pipeline::{apply_offline, feature_dir, load_audio, FeatureIndex, OfflineReport, Pipeline};

/// Sample rate used when neither the config nor the manifest names one.
pub const DEFAULT_SAMPLE_RATE: u32 = 16000;

const DATASET_IDS: [&str; 2] = ["toytones", "csv"];

fn dataset(cfg: &ConfigNode) -> Result<&ConfigNode> {
    match cfg.get("dataset") {
        Some(node @ ConfigNode::Map(_)) => Ok(node),
        _ => Err(Error::config("dataset", "expected a mapping")),
    }
}

fn dataset_id(cfg: &ConfigNode) -> Result<&str> {
    let id = dataset(cfg)?
        .get("id")
        .and_then(ConfigNode::as_str)
        .ok_or_else(|| Error::config("dataset.id", "expected a string"))?;
    if !DATASET_IDS.contains(&id) {
        return Err(Error::UnknownId {
            kind: "dataset",
            id: id.into(),
            suggestion: crate::error::suggest(id, &DATASET_IDS),
        });
    }
    Ok(id)
}

/// `dataset.root`, resolved against `out` when relative. Defaults to
/// `data/<dataset.id>`.
pub fn dataset_root(cfg: &ConfigNode, out: &Path) -> Result<PathBuf> {
    let root = match dataset(cfg)?.get("root") {
        None | Some(ConfigNode::Null) => PathBuf::from("data").join(dataset_id(cfg)?),
        Some(ConfigNode::Str(s)) => PathBuf::from(s),
        Some(_) => return Err(Error::config("dataset.root", "expected a path string")),
    };
    Ok(if root.is_absolute() { root } else { out.join(root) })
}

fn master_seed(cfg: &ConfigNode) -> Result<u64> {
    cfg.extract("seed")
}

/// Creates the dataset and its manifest: synthesizes ToyTones, or ingests
/// `dataset.source` (relative to the dataset root) with `dataset.mapping`.
pub fn fetch(cfg: &ConfigNode, out: &Path) -> Result<Manifest> {
    let root = dataset_root(cfg, out)?;
    let node = dataset(cfg)?;
    match dataset_id(cfg)? {
        "toytones" => {
            let seed = match node.get("seed") {
                Some(_) => node.extract("seed").map_err(|_| Error::config("dataset.seed", "expected an unsigned integer"))?,
                None => master_seed(cfg)?,
            };
            generate_toytones(node, &root, seed)
        }
        _ => {
            let source = node
                .get("source")
                .and_then(ConfigNode::as_str)
                .ok_or_else(|| Error::config("dataset.source", "csv datasets need a source file"))?;
            let mapping = node.get("mapping").cloned().unwrap_or_else(ConfigNode::empty_map);
            ingest(&root, &root.join(source), &mapping)
        }
    }
}

/// Loads the manifest written by [`fetch`].
pub fn load_manifest(cfg: &ConfigNode, out: &Path) -> Result<Manifest> {
    let root = dataset_root(cfg, out)?;
    if !root.join(MANIFEST_CSV).is_file() {
        return Err(Error::Manifest(format!(
            "no {MANIFEST_CSV} under {}; run fetch first",
            root.display()
        )));
    }
    Manifest::load(&root)
}

/// Rate audio is resampled to: `dataset.sample_rate`, else the manifest's.
pub fn sample_rate(cfg: &ConfigNode, m: &Manifest) -> Result<u32> {
    match cfg.get("dataset.sample_rate") {
        Some(_) => cfg.extract("dataset.sample_rate"),
        None => Ok(m.sample_rate.unwrap_or(DEFAULT_SAMPLE_RATE)),
    }
}

/// The preprocess-time pipeline from `dataset.transforms`.
pub fn offline_pipeline(cfg: &ConfigNode, rate: u32) -> Result<Pipeline> {
    Pipeline::from_lists(&[cfg.get("dataset.transforms")], rate)
}

/// The per-item pipeline: `dataset.online_transforms` then
/// `model.online_transforms`, merged and sorted by `order`.
pub fn online_pipeline(cfg: &ConfigNode, rate: u32) -> Result<Pipeline> {
    Pipeline::from_lists(
        &[cfg.get("dataset.online_transforms"), cfg.get("model.online_transforms")],
        rate,
    )
}

/// Runs the offline pipeline over every item. Returns `None` when the
/// dataset has no offline transforms.
pub fn preprocess(cfg: &ConfigNode, out: &Path) -> Result<Option<OfflineReport>> {
    let m = load_manifest(cfg, out)?;
    let rate = sample_rate(cfg, &m)?;
    let pipeline = offline_pipeline(cfg, rate)?;
    if pipeline.is_empty() {
        return Ok(None);
    }
    let dir = feature_dir(&m.root, &pipeline);
    apply_offline(&m, &pipeline, &dir).map(Some)
}

/// Feature source of a run: cached offline features or raw audio.
#[derive(Debug, Clone)]
pub enum ItemSource {
    Features(FeatureIndex),
    Audio { root: PathBuf, sample_rate: u32 },
}

impl ItemSource {
    pub fn for_run(cfg: &ConfigNode, m: &Manifest) -> Result<Self> {
        let rate = sample_rate(cfg, m)?;
        let pipeline = offline_pipeline(cfg, rate)?;
        if pipeline.is_empty() {
            return Ok(ItemSource::Audio {
                root: m.root.clone(),
                sample_rate: rate,
            });
        }
        let index = FeatureIndex::load(&feature_dir(&m.root, &pipeline))?;
        if let Some(row) = m.rows.iter().find(|r| !index.entries.contains_key(&r.path)) {
            return Err(Error::Manifest(format!(
                "no cached features for `{}`; run preprocess first",
                row.path
            )));
        }
        Ok(ItemSource::Features(index))
    }

    pub fn load(&self, item_path: &str) -> Result<FeatureArray> {
        match self {
            ItemSource::Features(index) => index.read(item_path),
            ItemSource::Audio { root, sample_rate } => load_audio(&root.join(item_path), *sample_rate),
        }
    }
}
