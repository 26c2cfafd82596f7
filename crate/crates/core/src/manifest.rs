//! Dataset manifests: the standard on-disk index of audio items.
//!
//! A dataset root holds `manifest.csv` (columns `path,target,subset`, paths
//! relative to the root) and a `manifest.yaml` sidecar with `task`,
//! `label_set` and `sample_rate`. Multilabel targets join labels with `;`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{parse_yaml, ConfigNode, Mapping};
use crate::dsp::write_wav;
use crate::error::{Error, IoContext, Result};
use crate::rng::derive_seed;
use crate::rng::Rng;

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const MANIFEST_YAML: &str = "manifest.yaml";
pub const MULTILABEL_SEPARATOR: char = ';';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Multilabel,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Multilabel => "multilabel",
            Task::Regression => "regression",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "multilabel" => Ok(Task::Multilabel),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Manifest(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Dev,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Dev, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "dev" => Ok(Subset::Dev),
            "test" => Ok(Subset::Test),
            other => Err(Error::Manifest(format!("unknown subset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub target: String,
    pub subset: Subset,
}

impl ManifestRow {
    /// Stable item identifier used in seed paths and logs.
    pub fn item_id(&self) -> &str {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub task: Task,
    pub label_set: Vec<String>,
    pub sample_rate: Option<u32>,
    pub rows: Vec<ManifestRow>,
}

/// Model-facing encoding of one target.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedTarget {
    Class(usize),
    MultiLabel(Vec<f32>),
    Regression(Vec<f32>),
}

impl EncodedTarget {
    /// Dense target row: one-hot for classes, as-is otherwise.
    pub fn to_vector(&self, dim: usize) -> Vec<f32> {
        match self {
            EncodedTarget::Class(c) => {
                let mut v = vec![0.0; dim];
                v[*c] = 1.0;
                v
            }
            EncodedTarget::MultiLabel(v) | EncodedTarget::Regression(v) => v.clone(),
        }
    }
}

impl Manifest {
    pub fn csv_path(&self) -> PathBuf {
        self.root.join(MANIFEST_CSV)
    }

    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.subset == subset)
    }

    pub fn audio_path(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }

    /// Width of an encoded target row.
    pub fn target_dim(&self) -> usize {
        match self.task {
            Task::Classification | Task::Multilabel => self.label_set.len(),
            Task::Regression => self
                .rows
                .first()
                .map(|r| r.target.split(MULTILABEL_SEPARATOR).count())
                .unwrap_or(1),
        }
    }

    /// Checks target syntax, label membership, subset disjointness and,
    /// when `check_files` is set, that every audio file exists.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.path.as_str()) {
                return Err(Error::Manifest(format!(
                    "path `{}` appears more than once",
                    row.path
                )));
            }
            self.encode(&row.target)?;
        }
        if self.task == Task::Regression {
            let dim = self.target_dim();
            if let Some(r) = self
                .rows
                .iter()
                .find(|r| r.target.split(MULTILABEL_SEPARATOR).count() != dim)
            {
                return Err(Error::Manifest(format!(
                    "regression target `{}` has a different width than {dim}",
                    r.target
                )));
            }
        }
        if check_files {
            let missing: Vec<String> = self
                .rows
                .iter()
                .filter(|r| !self.audio_path(r).is_file())
                .map(|r| r.path.clone())
                .collect();
            if !missing.is_empty() {
                return Err(Error::FilesNotFound {
                    count: missing.len(),
                    first: missing.into_iter().take(10).collect(),
                });
            }
        }
        Ok(())
    }

    pub fn encode(&self, target: &str) -> Result<EncodedTarget> {
        let class_index = |label: &str| {
            self.label_set
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::UnknownLabel(label.to_string()))
        };
        match self.task {
            Task::Classification => class_index(target).map(EncodedTarget::Class),
            Task::Multilabel => {
                let mut v = vec![0.0; self.label_set.len()];
                for label in target.split(MULTILABEL_SEPARATOR).filter(|l| !l.is_empty()) {
                    v[class_index(label)?] = 1.0;
                }
                Ok(EncodedTarget::MultiLabel(v))
            }
            Task::Regression => target
                .split(MULTILABEL_SEPARATOR)
                .map(|t| {
                    t.trim()
                        .parse::<f32>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::UnparseableTarget(target.to_string()))
                })
                .collect::<Result<Vec<_>>>()
                .map(EncodedTarget::Regression),
        }
    }

    pub fn decode(&self, target: &EncodedTarget) -> String {
        match target {
            EncodedTarget::Class(c) => self.label_set[*c].clone(),
            EncodedTarget::MultiLabel(v) => v
                .iter()
                .zip(&self.label_set)
                .filter(|(&x, _)| x > 0.5)
                .map(|(_, l)| l.as_str())
                .collect::<Vec<_>>()
                .join(";"),
            EncodedTarget::Regression(v) => v
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    pub fn write(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).at(&self.root)?;
        let path = self.csv_path();
        let mut writer = csv::Writer::from_path(&path)?;
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush().at(&path)?;

        let mut header = Mapping::new();
        header.insert("task".into(), ConfigNode::Str(self.task.to_string()));
        header.insert(
            "label_set".into(),
            ConfigNode::Seq(self.label_set.iter().map(|l| ConfigNode::Str(l.clone())).collect()),
        );
        header.insert(
            "sample_rate".into(),
            self.sample_rate
                .map_or(ConfigNode::Null, |r| ConfigNode::Int(i64::from(r))),
        );
        let yaml_path = self.root.join(MANIFEST_YAML);
        std::fs::write(&yaml_path, ConfigNode::Map(header).to_yaml()).at(&yaml_path)
    }

    /// Reads and validates the manifest of a dataset root.
    pub fn load(root: &Path) -> Result<Self> {
        let yaml_path = root.join(MANIFEST_YAML);
        let text = std::fs::read_to_string(&yaml_path).at(&yaml_path)?;
        let header = parse_yaml(&text)?;
        let task: Task = header
            .get("task")
            .and_then(ConfigNode::as_str)
            .ok_or_else(|| Error::Manifest("manifest.yaml lacks `task`".into()))?
            .parse()?;
        let label_set = header
            .get("label_set")
            .and_then(ConfigNode::as_seq)
            .unwrap_or(&[])
            .iter()
            .map(|l| l.as_str().map(str::to_string).unwrap_or_else(|| l.canonical()))
            .collect();
        let sample_rate = header
            .get("sample_rate")
            .and_then(ConfigNode::as_i64)
            .map(|r| r as u32);
        let csv_path = root.join(MANIFEST_CSV);
        let mut reader = csv::Reader::from_path(&csv_path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "target", "subset"] {
            return Err(Error::Manifest(format!(
                "{} must have columns path,target,subset",
                csv_path.display()
            )));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        let manifest = Manifest {
            root: root.to_path_buf(),
            task,
            label_set,
            sample_rate,
            rows,
        };
        manifest.validate(true)?;
        Ok(manifest)
    }
}

/// Column mapping for [`ingest`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestMapping {
    #[serde(default = "default_path_column")]
    pub path: String,
    #[serde(default = "default_target_column")]
    pub target: String,
    /// Column holding the subset name.
    #[serde(default)]
    pub subset: Option<String>,
    /// Subset for every row when no subset column exists.
    #[serde(default)]
    pub fixed_subset: Option<Subset>,
    /// Renames raw subset values, e.g. `{training: train}`.
    #[serde(default)]
    pub subset_values: std::collections::BTreeMap<String, Subset>,
    #[serde(default = "default_task")]
    pub task: Task,
    /// Declared class names. Derived (sorted) from the data when absent.
    #[serde(default)]
    pub label_set: Option<Vec<String>>,
    #[serde(default)]
    pub sample_rate: Option<u32>,
}

fn default_path_column() -> String {
    "path".into()
}

fn default_target_column() -> String {
    "target".into()
}

fn default_task() -> Task {
    Task::Classification
}

/// Converts a user CSV into the standard manifest under `root`.
pub fn ingest(root: &Path, csv_file: &Path, mapping: &ConfigNode) -> Result<Manifest> {
    let mapping: IngestMapping = mapping.extract("")?;
    if mapping.subset.is_none() && mapping.fixed_subset.is_none() {
        return Err(Error::config(
            "mapping",
            "needs either a `subset` column or a `fixed_subset`",
        ));
    }
    let mut reader = csv::Reader::from_path(csv_file)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let path_col = column(&mapping.path)?;
    let target_col = column(&mapping.target)?;
    let subset_col = mapping.subset.as_deref().map(column).transpose()?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let subset = match subset_col {
            Some(c) => {
                let raw = record.get(c).unwrap_or("").trim();
                match mapping.subset_values.get(raw) {
                    Some(s) => *s,
                    None => raw.parse()?,
                }
            }
            None => mapping.fixed_subset.expect("checked above"),
        };
        rows.push(ManifestRow {
            path: record.get(path_col).unwrap_or("").trim().to_string(),
            target: record.get(target_col).unwrap_or("").trim().to_string(),
            subset,
        });
    }
    let label_set = match (&mapping.label_set, mapping.task) {
        (Some(labels), _) => labels.clone(),
        (None, Task::Regression) => Vec::new(),
        (None, Task::Classification) => {
            let set: BTreeSet<&str> = rows.iter().map(|r| r.target.as_str()).collect();
            set.into_iter().map(str::to_string).collect()
        }
        (None, Task::Multilabel) => {
            let set: BTreeSet<&str> = rows
                .iter()
                .flat_map(|r| r.target.split(MULTILABEL_SEPARATOR))
                .filter(|l| !l.is_empty())
                .collect();
            set.into_iter().map(str::to_string).collect()
        }
    };
    let manifest = Manifest {
        root: root.to_path_buf(),
        task: mapping.task,
        label_set,
        sample_rate: mapping.sample_rate,
        rows,
    };
    manifest.validate(true)?;
    manifest.write()?;
    Ok(manifest)
}

/// Settings of the synthetic tone dataset.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ToyTonesSpec {
    pub classes: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub duration: f64,
    pub sample_rate: u32,
    pub snr_db: f64,
}

impl Default for ToyTonesSpec {
    fn default() -> Self {
        ToyTonesSpec {
            classes: 4,
            train: 60,
            dev: 20,
            test: 20,
            duration: 1.0,
            sample_rate: 16000,
            snr_db: 20.0,
        }
    }
}

impl ToyTonesSpec {
    /// Reads known keys from a dataset config node; other keys are ignored.
    pub fn from_config(node: &ConfigNode) -> Result<Self> {
        let mut spec = ToyTonesSpec::default();
        let int = |key: &str| -> Result<Option<usize>> {
            match node.get(key) {
                None => Ok(None),
                Some(v) => v
                    .as_i64()
                    .filter(|&i| i >= 0)
                    .map(|i| Some(i as usize))
                    .ok_or_else(|| Error::config(key, "expected a non-negative integer")),
            }
        };
        let float = |key: &str| -> Result<Option<f64>> {
            match node.get(key) {
                None => Ok(None),
                Some(v) => v
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| Error::config(key, "expected a number")),
            }
        };
        if let Some(v) = int("classes")? {
            spec.classes = v;
        }
        if let Some(v) = int("train")? {
            spec.train = v;
        }
        if let Some(v) = int("dev")? {
            spec.dev = v;
        }
        if let Some(v) = int("test")? {
            spec.test = v;
        }
        if let Some(v) = int("sample_rate")? {
            spec.sample_rate = v as u32;
        }
        if let Some(v) = float("duration")? {
            spec.duration = v;
        }
        if let Some(v) = float("snr_db")? {
            spec.snr_db = v;
        }
        if spec.classes == 0 || spec.sample_rate == 0 || spec.duration <= 0.0 {
            return Err(Error::config(
                "dataset",
                "toytones needs classes >= 1, sample_rate > 0 and duration > 0",
            ));
        }
        Ok(spec)
    }

    pub fn label(class: usize) -> String {
        format!("tone{class}")
    }

    /// Frequency band `[300 * 2^k, 450 * 2^k]` Hz of class `k`.
    pub fn band(class: usize) -> (f64, f64) {
        let lo = 300.0 * 2f64.powi(class as i32);
        (lo, lo * 1.5)
    }

    /// Samples of item `index` of class `class`.
    pub fn synthesize(&self, class: usize, index: usize, seed: u64) -> Vec<f32> {
        let mut rng = Rng::new(derive_seed(seed, &["fetch".to_string(), format!("item:{index}")]));
        let (lo, hi) = Self::band(class);
        let partials: Vec<(f64, f64)> = (0..3)
            .map(|_| {
                let f = lo + rng.next_f64() * (hi - lo);
                let phase = rng.next_f64() * 2.0 * std::f64::consts::PI;
                (f, phase)
            })
            .collect();
        let n = (self.duration * f64::from(self.sample_rate)).round() as usize;
        let rate = f64::from(self.sample_rate);
        let clean: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                partials
                    .iter()
                    .map(|&(f, p)| 0.3 * (2.0 * std::f64::consts::PI * f * t + p).sin())
                    .sum()
            })
            .collect();
        let power = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sigma = (power / 10f64.powf(self.snr_db / 10.0)).sqrt();
        clean
            .into_iter()
            .map(|v| (v + sigma * rng.next_gaussian()).clamp(-1.0, 1.0) as f32)
            .collect()
    }
}

/// Writes the synthetic tone dataset and its manifest under `out`.
///
/// Items are numbered subset by subset (train, dev, test), class by class,
/// and item `i` draws from the seed path `["fetch", "item:<i>"]`.
pub fn generate_toytones(spec: &ConfigNode, out: &Path, seed: u64) -> Result<Manifest> {
    let spec = ToyTonesSpec::from_config(spec)?;
    std::fs::create_dir_all(out).at(out)?;
    let mut rows = Vec::new();
    let mut index = 0;
    for (subset, per_class) in [
        (Subset::Train, spec.train),
        (Subset::Dev, spec.dev),
        (Subset::Test, spec.test),
    ] {
        for class in 0..spec.classes {
            for _ in 0..per_class {
                let rel = format!("audio/{subset}/item_{index:05}.wav");
                let samples = spec.synthesize(class, index, seed);
                write_wav(&out.join(&rel), &samples, spec.sample_rate)?;
                rows.push(ManifestRow {
                    path: rel,
                    target: ToyTonesSpec::label(class),
                    subset,
                });
                index += 1;
            }
        }
    }
    let manifest = Manifest {
        root: out.to_path_buf(),
        task: Task::Classification,
        label_set: (0..spec.classes).map(ToyTonesSpec::label).collect(),
        sample_rate: Some(spec.sample_rate),
        rows,
    };
    manifest.write()?;
    Ok(manifest)
}

pub fn encode_targets(m: &Manifest) -> Result<Vec<EncodedTarget>> {
    m.rows.iter().map(|r| m.encode(&r.target)).collect()
}

/// Inverse-frequency weights `N_train / (K * N_c)` over the training subset.
pub fn class_weights(m: &Manifest) -> Result<Vec<f64>> {
    if m.task != Task::Classification {
        return Err(Error::Manifest("class weights need a classification task".into()));
    }
    let k = m.label_set.len();
    let mut counts = vec![0usize; k];
    for row in m.subset(Subset::Train) {
        if let EncodedTarget::Class(c) = m.encode(&row.target)? {
            counts[c] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .zip(&m.label_set)
        .map(|(&n, label)| {
            if n == 0 {
                Err(Error::CannotBalance(label.clone()))
            } else {
                Ok(total as f64 / (k as f64 * n as f64))
            }
        })
        .collect()
}
