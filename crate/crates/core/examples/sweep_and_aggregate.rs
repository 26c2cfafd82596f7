//! Expands a learning-rate by seed sweep, trains every grid point, then
//! groups runs over seeds and prints the aggregate and leaderboard.
//!
//! ```text
//! cargo run --release --example sweep_and_aggregate
//! ```

use std::path::Path;

use audpipe::config::{compose_with_overrides, expand_sweep_with, load_entry};
use audpipe::postprocess::{aggregate, collect_runs, summarize};
use audpipe::train::{self, data};

fn main() -> audpipe::Result<()> {
    let out = tempfile::tempdir().expect("temp dir");
    let entry_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../conf/config.yaml");
    let (entry, dirs) = load_entry(&entry_path, &[])?;

    let axes: Vec<String> = ["optimizer.lr=0.001,0.01", "seed=1..3", "training.epochs=8", "dataset.train=20"]
        .map(String::from)
        .to_vec();
    let plan = expand_sweep_with(&axes, |o| compose_with_overrides(&entry, &dirs, o))?;
    println!("{} runs planned", plan.len());
    for run in &plan.runs {
        println!("  {}  {}", run.run_id, run.overrides[..2].join(" "));
    }

    data::fetch(&plan.runs[0].config, out.path())?;
    data::preprocess(&plan.runs[0].config, out.path())?;
    for run in &plan.runs {
        train::train(&run.config, out.path())?;
    }

    let runs = collect_runs(&out.path().join("runs"))?;
    let groups = aggregate(&runs, &["seed".to_string()])?;
    for g in &groups {
        let lr = &g.config["optimizer.lr"];
        let acc = &g.metrics["dev_accuracy"];
        println!("lr {lr}: n={} dev accuracy {:.4} +/- {:.4} (min {:.4}, max {:.4})", g.n(), acc.mean, acc.std, acc.min, acc.max);
    }
    print!("{}", summarize(&runs, &groups, &out.path().join("postprocess"))?);
    Ok(())
}
