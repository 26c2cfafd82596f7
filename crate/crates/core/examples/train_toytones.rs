//! Fetches ToyTones, extracts log-Mel features offline and trains the
//! default feed-forward model, printing the per-epoch log.
//!
//! ```text
//! cargo run --release --example train_toytones [OUT_DIR] [OVERRIDE]...
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use audpipe::config::{compose_with_overrides, load_entry};
use audpipe::train::{self, data, format6};

fn main() -> audpipe::Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = tempfile::tempdir().expect("temp dir");
    let out: PathBuf = args.next().map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    let overrides: Vec<String> = args.collect();

    let entry_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../conf/config.yaml");
    let (entry, dirs) = load_entry(&entry_path, &[])?;
    let cfg = compose_with_overrides(&entry, &dirs, &overrides)?;

    let start = Instant::now();
    let m = data::fetch(&cfg, &out)?;
    println!("fetched {} items in {:.2} s", m.rows.len(), start.elapsed().as_secs_f64());
    if let Some(report) = data::preprocess(&cfg, &out)? {
        println!("offline features: {} written, {} cached", report.written, report.skipped);
    }

    let rec = train::train(&cfg, &out)?;
    println!("epoch  train_loss  dev");
    for row in &rec.rows {
        let dev: Vec<String> = row.dev.iter().map(|(k, v)| format!("{k}={}", format6(*v))).collect();
        println!("{:>5}  {:>10}  {}", row.epoch, format6(row.train_loss), dev.join(" "));
    }
    println!("best epoch {} ({})", rec.best_epoch, format6(rec.best_value));
    let test: Vec<String> = rec.test_metrics.iter().map(|(k, v)| format!("{k}={}", format6(*v))).collect();
    println!("test {}", test.join(" "));
    println!("run {} in {:.2} s -> {}", rec.run_id, start.elapsed().as_secs_f64(), rec.run_dir.display());
    Ok(())
}
