//! Generates the synthetic ToyTones dataset, reloads its manifest and
//! decodes one file.
//!
//! ```text
//! cargo run --example toytones_dataset [OUT_DIR]
//! ```

use std::path::PathBuf;

use audpipe::config::parse_yaml;
use audpipe::dsp::read_wav;
use audpipe::manifest::{class_weights, generate_toytones, Manifest, Subset};

fn main() -> audpipe::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| tmp.path().join("toytones"), PathBuf::from);

    let spec = parse_yaml("classes: 4\ntrain: 10\ndev: 4\ntest: 4\nduration: 0.5\n")?;
    let m = generate_toytones(&spec, &out, 42)?;
    println!("{} items, labels {:?}, task {:?}", m.rows.len(), m.label_set, m.task);
    for subset in [Subset::Train, Subset::Dev, Subset::Test] {
        println!("  {:<5} {}", subset.as_str(), m.subset(subset).count());
    }

    let reloaded = Manifest::load(&out)?;
    assert_eq!(reloaded.rows, m.rows);
    println!("manifest at {}", reloaded.csv_path().display());
    println!("class weights {:?}", class_weights(&m)?);

    let first = &m.rows[0];
    let w = read_wav(&m.audio_path(first))?;
    let peak = w.samples.iter().fold(0.0f32, |a, &s| a.max(s.abs()));
    println!(
        "{} -> {} ({} samples at {} Hz, {:.2} s, peak {peak:.3})",
        first.path,
        first.target,
        w.samples.len(),
        w.sample_rate,
        w.duration_s()
    );
    Ok(())
}
