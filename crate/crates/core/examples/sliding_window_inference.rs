//! Trains a small model, then runs sliding-window inference on a longer
//! recording stitched from several tones and exports embeddings.
//!
//! ```text
//! cargo run --release --example sliding_window_inference
//! ```

use std::path::Path;

use audpipe::config::{compose_with_overrides, load_entry};
use audpipe::dsp::{read_wav, write_wav};
use audpipe::inference::{plan_windows, write_outputs, Predictor};
use audpipe::manifest::Subset;
use audpipe::train::{self, data};

fn main() -> audpipe::Result<()> {
    let out = tempfile::tempdir().expect("temp dir");
    let entry_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../conf/config.yaml");
    let (entry, dirs) = load_entry(&entry_path, &[])?;
    let cfg = compose_with_overrides(&entry, &dirs, &["training.epochs=10".into(), "dataset.train=30".into()])?;
    let m = data::fetch(&cfg, out.path())?;
    data::preprocess(&cfg, out.path())?;
    let rec = train::train(&cfg, out.path())?;
    println!("trained run {} (best dev {:.3})", rec.run_id, rec.best_value);

    // One test item per class, back to back, plus half a second of the first.
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    for label in &m.label_set {
        let row = m.subset(Subset::Test).find(|r| &r.target == label).unwrap();
        samples.extend(read_wav(&m.audio_path(row))?.samples);
        truth.push(label.clone());
    }
    let first = m.subset(Subset::Test).next().unwrap();
    samples.extend(&read_wav(&m.audio_path(first))?.samples[..8000]);
    let long = out.path().join("medley.wav");
    write_wav(&long, &samples, 16000)?;

    let plan = plan_windows(samples.len(), 16000, 1.0, 1.0)?;
    println!("{:.1} s input -> {} windows", samples.len() as f64 / 16000.0, plan.spans.len());

    let predictor = Predictor::load(&rec.run_dir, "best")?;
    let p = predictor.predict_file(&long, Some((1.0, 1.0)))?;
    for (i, w) in p.windows.iter().enumerate() {
        let best = audpipe::train::argmax(&w.scores);
        let expect = truth.get(i).map_or("(tail)", String::as_str);
        println!("  [{:>4.1}, {:>4.1}] s  {} ({:.3})  expected {expect}", w.start_s, w.end_s, predictor.labels[best], w.scores[best]);
    }
    println!("aggregate label {:?}", p.label);
    println!("embeddings {:?}, mean {:?}", p.embeddings.dims(), p.mean_embedding().dims());
    let written = write_outputs(&p, &predictor.labels, &out.path().join("inference"), "medley")?;
    println!("wrote {}", written.display());
    Ok(())
}
