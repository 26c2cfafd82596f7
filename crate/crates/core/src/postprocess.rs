//! Scanning run directories, aggregating across ignored axes (such as
//! seeds) and writing summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::config::{load_file, ConfigNode};
use crate::error::{Error, IoContext, Result};
use crate::train::{read_metrics_csv, Direction, CONFIG_YAML, METRICS_CSV, TEST_RESULTS_YAML};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const LEADERBOARD_TXT: &str = "leaderboard.txt";
pub const CURVE_CSV: &str = "curve.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunStatus {
    Complete,
    Aborted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Complete => "complete",
            RunStatus::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    /// Flattened config snapshot keyed by dotted path.
    pub config: BTreeMap<String, String>,
    /// Dev metrics of the best epoch.
    pub best_dev: IndexMap<String, f64>,
    pub test: IndexMap<String, f64>,
    pub best_epoch: Option<usize>,
    pub tracking_metric: Option<String>,
    pub tracking_direction: Option<Direction>,
    pub epochs_completed: usize,
    pub status: RunStatus,
}

impl RunSummary {
    /// Best dev value of the tracking metric.
    pub fn tracking_value(&self) -> Option<f64> {
        self.best_dev.get(self.tracking_metric.as_deref()?).copied()
    }

    /// `dev_<m>` and `test_<m>` columns in a fixed order.
    pub fn metric_columns(&self) -> IndexMap<String, f64> {
        let dev = self.best_dev.iter().map(|(k, v)| (format!("dev_{k}"), *v));
        let test = self.test.iter().map(|(k, v)| (format!("test_{k}"), *v));
        dev.chain(test).collect()
    }
}

fn metric_block(doc: &ConfigNode, key: &str) -> Result<IndexMap<String, f64>> {
    let Some(map) = doc.get(key).and_then(ConfigNode::as_map) else {
        return Err(Error::Manifest(format!("`{key}` block missing")));
    };
    map.iter()
        .map(|(k, v)| {
            v.as_f64()
                .map(|f| (k.clone(), f))
                .ok_or_else(|| Error::Manifest(format!("`{key}.{k}` is not a number")))
        })
        .collect()
}

fn read_run(dir: &Path) -> RunSummary {
    let mut s = RunSummary {
        run_id: dir.file_name().unwrap_or_default().to_string_lossy().into(),
        run_dir: dir.to_path_buf(),
        config: BTreeMap::new(),
        best_dev: IndexMap::new(),
        test: IndexMap::new(),
        best_epoch: None,
        tracking_metric: None,
        tracking_direction: None,
        epochs_completed: 0,
        status: RunStatus::Aborted,
    };
    if let Ok(cfg) = load_file(&dir.join(CONFIG_YAML)) {
        s.config = cfg.flatten().into_iter().collect();
        s.tracking_metric = s.config.get("training.tracking_metric").cloned();
        s.tracking_direction = cfg.extract("training.tracking_direction").ok();
    }
    let Ok(rows) = read_metrics_csv(&dir.join(METRICS_CSV)) else {
        return s;
    };
    s.epochs_completed = rows.len();
    let results = load_file(&dir.join(TEST_RESULTS_YAML)).and_then(|doc| {
        Ok((
            metric_block(&doc, "dev")?,
            metric_block(&doc, "test")?,
            doc.extract::<usize>("best_epoch")?,
        ))
    });
    if let (Ok((dev, test, best)), false) = (results, s.config.is_empty()) {
        s.best_dev = dev;
        s.test = test;
        s.best_epoch = Some(best);
        s.status = RunStatus::Complete;
    }
    s
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(CONFIG_YAML).is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_dir() {
            find_runs(&path, out)?;
        }
    }
    Ok(())
}

/// Every run directory below `root`, sorted by run id then path. Runs
/// whose logs cannot be read are reported as aborted.
pub fn collect_runs(root: &Path) -> Result<Vec<RunSummary>> {
    if !root.is_dir() {
        return Err(Error::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "run root does not exist"),
        });
    }
    let mut dirs = Vec::new();
    find_runs(root, &mut dirs)?;
    let mut runs: Vec<RunSummary> = dirs.iter().map(|d| read_run(d)).collect();
    runs.sort_by(|a, b| (&a.run_id, &a.run_dir).cmp(&(&b.run_id, &b.run_dir)));
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Stats {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// `path=value` pairs of the grouping keys, joined by `;`.
    pub key: String,
    pub config: BTreeMap<String, String>,
    pub run_ids: Vec<String>,
    pub metrics: IndexMap<String, Stats>,
}

impl Group {
    pub fn n(&self) -> usize {
        self.run_ids.len()
    }
}

fn ignored(key: &str, group_ignore: &[String]) -> bool {
    group_ignore
        .iter()
        .any(|g| key == g || key.strip_prefix(g.as_str()).is_some_and(|rest| rest.starts_with('.')))
}

/// Groups complete runs by every flattened config key except those under
/// `group_ignore`, then reduces each metric column. Groups are sorted by key.
pub fn aggregate(summaries: &[RunSummary], group_ignore: &[String]) -> Result<Vec<Group>> {
    let complete: Vec<&RunSummary> = summaries.iter().filter(|s| s.status == RunStatus::Complete).collect();
    if let Some(g) = group_ignore
        .iter()
        .find(|g| !complete.iter().any(|s| s.config.keys().any(|k| ignored(k, std::slice::from_ref(g)))))
    {
        if !complete.is_empty() {
            return Err(Error::InvalidArgument(format!("group_ignore key `{g}` is not in any run config")));
        }
    }
    let mut groups: BTreeMap<String, (BTreeMap<String, String>, Vec<&RunSummary>)> = BTreeMap::new();
    for s in complete {
        let config: BTreeMap<String, String> = s
            .config
            .iter()
            .filter(|(k, _)| !ignored(k, group_ignore))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let key = config.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        groups.entry(key).or_insert_with(|| (config, Vec::new())).1.push(s);
    }
    groups
        .into_iter()
        .map(|(key, (config, mut members))| {
            members.sort_by(|a, b| a.run_id.cmp(&b.run_id));
            let tracking = members[0].tracking_metric.clone();
            if members.iter().any(|m| m.tracking_metric != tracking) {
                return Err(Error::MixedTrackingMetrics(key));
            }
            let mut columns: Vec<String> = Vec::new();
            for m in &members {
                for c in m.metric_columns().into_keys() {
                    if !columns.contains(&c) {
                        columns.push(c);
                    }
                }
            }
            let metrics = columns
                .into_iter()
                .filter_map(|c| {
                    let values: Vec<f64> = members.iter().filter_map(|m| m.metric_columns().get(&c).copied()).collect();
                    Stats::of(&values).map(|s| (c, s))
                })
                .collect();
            Ok(Group {
                key,
                config,
                run_ids: members.iter().map(|m| m.run_id.clone()).collect(),
                metrics,
            })
        })
        .collect()
}

/// Runs ordered best first by their tracking metric (respecting each run's
/// direction); ties go to the smallest run id. Runs without a tracking
/// value come last.
pub fn leaderboard(summaries: &[RunSummary]) -> Vec<&RunSummary> {
    let key = |s: &RunSummary| -> Option<f64> {
        let v = s.tracking_value()?;
        Some(match s.tracking_direction {
            Some(Direction::Min) => -v,
            _ => v,
        })
    };
    let mut ranked: Vec<&RunSummary> = summaries.iter().collect();
    ranked.sort_by(|a, b| match (key(a), key(b)) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.run_id.cmp(&b.run_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.run_id.cmp(&b.run_id),
    });
    ranked
}

pub fn render_leaderboard(summaries: &[RunSummary]) -> String {
    let mut out = String::from("rank  run_id            status    metric            value\n");
    for (i, s) in leaderboard(summaries).into_iter().enumerate() {
        let value = s.tracking_value().map_or_else(|| "-".to_string(), |v| format!("{v}"));
        let _ = writeln!(
            out,
            "{:<5} {:<17} {:<9} {:<17} {}",
            i + 1,
            s.run_id,
            s.status.as_str(),
            s.tracking_metric.as_deref().unwrap_or("-"),
            value
        );
    }
    out
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

/// Writes `summary.csv`, `aggregate.csv`, `leaderboard.txt` and one
/// `<run_id>/curve.csv` copy per run into `out`; returns the leaderboard.
pub fn summarize(summaries: &[RunSummary], groups: &[Group], out: &Path) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("nothing to summarize: no runs found".into()));
    }
    std::fs::create_dir_all(out).at(out)?;

    let mut config_keys: Vec<&String> = summaries.iter().flat_map(|s| s.config.keys()).collect();
    config_keys.sort();
    config_keys.dedup();
    let mut metric_keys: Vec<String> = Vec::new();
    for s in summaries {
        for k in s.metric_columns().into_keys() {
            if !metric_keys.contains(&k) {
                metric_keys.push(k);
            }
        }
    }
    let mut header: Vec<String> = ["run_id", "status", "epochs_completed", "best_epoch"].map(String::from).into();
    header.extend(config_keys.iter().map(|k| k.to_string()));
    header.extend(metric_keys.iter().cloned());
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let metrics = s.metric_columns();
            let mut row = vec![
                s.run_id.clone(),
                s.status.as_str().into(),
                s.epochs_completed.to_string(),
                s.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            ];
            row.extend(config_keys.iter().map(|k| s.config.get(*k).cloned().unwrap_or_default()));
            row.extend(metric_keys.iter().map(|k| metrics.get(k).map(|v| v.to_string()).unwrap_or_default()));
            row
        })
        .collect();
    let path = out.join(SUMMARY_CSV);
    std::fs::write(&path, csv_bytes(&header, &rows)?).at(&path)?;

    let mut group_keys: Vec<&String> = groups.iter().flat_map(|g| g.config.keys()).collect();
    group_keys.sort();
    group_keys.dedup();
    let mut header: Vec<String> = group_keys.iter().map(|k| k.to_string()).collect();
    header.push("n".into());
    for m in &metric_keys {
        for stat in ["mean", "std_pop", "min", "max"] {
            header.push(format!("{m}_{stat}"));
        }
    }
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            let mut row: Vec<String> = group_keys.iter().map(|k| g.config.get(*k).cloned().unwrap_or_default()).collect();
            row.push(g.n().to_string());
            for m in &metric_keys {
                match g.metrics.get(m) {
                    Some(s) => row.extend([s.mean, s.std, s.min, s.max].map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            row
        })
        .collect();
    let path = out.join(AGGREGATE_CSV);
    std::fs::write(&path, csv_bytes(&header, &rows)?).at(&path)?;

    for s in summaries {
        let src = s.run_dir.join(METRICS_CSV);
        if let Ok(bytes) = std::fs::read(&src) {
            let dir = out.join(&s.run_id);
            std::fs::create_dir_all(&dir).at(&dir)?;
            let path = dir.join(CURVE_CSV);
            std::fs::write(&path, bytes).at(&path)?;
        }
    }
    let board = render_leaderboard(summaries);
    let path = out.join(LEADERBOARD_TXT);
    std::fs::write(&path, &board).at(&path)?;
    Ok(board)
}
