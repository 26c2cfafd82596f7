//! Preprocess-time feature extraction with a content-keyed cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_audio, Pipeline};
use crate::error::{IoContext, Result};
use crate::features::{FeatureArray, EXTENSION};
use crate::manifest::{Manifest, Subset};
use crate::rng::{fnv1a64, Rng};

/// Index file written into every feature directory.
pub const FEATURE_INDEX: &str = "features.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    /// Item path as listed in the manifest.
    pub path: String,
    /// Feature file relative to the feature directory.
    pub feature: String,
    /// Hash of pipeline, statistics and audio bytes that produced it.
    pub key: String,
}

/// Maps manifest item paths to cached feature files.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureIndex {
    pub dir: PathBuf,
    pub entries: BTreeMap<String, FeatureEntry>,
}

impl FeatureIndex {
    /// Reads the index of `dir`; a missing index yields an empty one.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FEATURE_INDEX);
        let mut index = FeatureIndex {
            dir: dir.to_path_buf(),
            entries: BTreeMap::new(),
        };
        if !path.is_file() {
            return Ok(index);
        }
        let mut reader = csv::Reader::from_path(&path)?;
        for entry in reader.deserialize() {
            let entry: FeatureEntry = entry?;
            index.entries.insert(entry.path.clone(), entry);
        }
        Ok(index)
    }

    pub fn feature_path(&self, item_path: &str) -> Option<PathBuf> {
        self.entries.get(item_path).map(|e| self.dir.join(&e.feature))
    }

    pub fn read(&self, item_path: &str) -> Result<FeatureArray> {
        let path = self.feature_path(item_path).ok_or_else(|| {
            crate::error::Error::Manifest(format!(
                "no cached features for `{item_path}` in {}; run preprocess first",
                self.dir.display()
            ))
        })?;
        FeatureArray::read(&path)
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for entry in self.entries.values() {
            writer.serialize(entry)?;
        }
        Ok(writer.into_inner().expect("in-memory writer"))
    }
}

/// Where features of `pipeline` for a dataset rooted at `dataset_root` live.
pub fn feature_dir(dataset_root: &Path, pipeline: &Pipeline) -> PathBuf {
    dataset_root.join("features").join(pipeline.fingerprint())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineReport {
    pub written: usize,
    pub skipped: usize,
    pub index: FeatureIndex,
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if std::fs::read(path).map(|old| old == bytes).unwrap_or(false) {
        return Ok(false);
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, bytes).at(path)?;
    Ok(true)
}

/// Decodes, resamples and transforms every manifest item into `out`.
///
/// Items whose cache key and feature file are unchanged are skipped, and
/// feature files are only rewritten when their bytes differ.
pub fn apply_offline(m: &Manifest, pipeline: &Pipeline, out: &Path) -> Result<OfflineReport> {
    pipeline.check_offline()?;
    let mut pipeline = pipeline.clone();
    let rate = pipeline.sample_rate();
    let mut stats_key = String::new();
    if pipeline.needs_stats() {
        let train = m
            .subset(Subset::Train)
            .map(|r| load_audio(&m.audio_path(r), rate))
            .collect::<Result<Vec<_>>>()?;
        pipeline.fit_norm_stats(&train)?;
        for s in pipeline.norm_stats().into_iter().flatten() {
            stats_key.push_str(&format!("{:016x}", fnv1a64(&s.to_array().to_bytes())));
        }
    }
    let fingerprint = pipeline.fingerprint();
    let previous = FeatureIndex::load(out)?;
    let mut index = FeatureIndex {
        dir: out.to_path_buf(),
        entries: BTreeMap::new(),
    };
    let (mut written, mut skipped) = (0, 0);
    for row in &m.rows {
        let audio_path = m.audio_path(row);
        let audio = std::fs::read(&audio_path).at(&audio_path)?;
        let key = format!(
            "{:016x}",
            fnv1a64(format!("{fingerprint}|{stats_key}|{:016x}", fnv1a64(&audio)).as_bytes())
        );
        let feature = Path::new(&row.path)
            .with_extension(EXTENSION)
            .to_string_lossy()
            .replace('\\', "/");
        let entry = FeatureEntry {
            path: row.path.clone(),
            feature,
            key,
        };
        let target = out.join(&entry.feature);
        if previous.entries.get(&row.path) == Some(&entry) && target.is_file() {
            skipped += 1;
        } else {
            let x = load_audio(&audio_path, rate)?;
            let y = pipeline.apply_item(x, row.subset, &mut Rng::new(0))?;
            if write_if_changed(&target, &y.to_bytes())? {
                written += 1;
            }
        }
        index.entries.insert(row.path.clone(), entry);
    }
    write_if_changed(&out.join(FEATURE_INDEX), &index.to_csv()?)?;
    Ok(OfflineReport {
        written,
        skipped,
        index,
    })
}
