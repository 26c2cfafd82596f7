//! Builds an online pipeline from YAML, shows that augmentations only touch
//! training items, and mixes a batch with MixUp.
//!
//! ```text
//! cargo run --example augmentation_pipeline
//! ```

use audpipe::config::parse_yaml;
use audpipe::manifest::Subset;
use audpipe::pipeline::{Batch, Pipeline};
use audpipe::{FeatureArray, Rng};

const NODES: &str = "
- {id: spec_augment, p: 1.0, params: {freq_masks: 1, freq_width: 3, time_masks: 2, time_width: 4}}
- {id: gaussian_noise, p: 0.5, order: 1, params: {snr_db: 20}}
- {id: mixup, p: 1.0, params: {alpha: 0.4}}
";

fn spectrogram(seed: u64) -> FeatureArray {
    let mut rng = Rng::new(seed);
    FeatureArray::new(vec![8, 20], (0..160).map(|_| rng.next_gaussian() as f32).collect()).unwrap()
}

fn main() -> audpipe::Result<()> {
    let nodes = parse_yaml(NODES)?;
    let pipeline = Pipeline::build(nodes.as_seq().unwrap(), 16000)?;
    println!("nodes in order: {:?}", pipeline.ids());

    let x = spectrogram(1);
    for subset in [Subset::Train, Subset::Dev, Subset::Test] {
        let y = pipeline.apply_item(x.clone(), subset, &mut Rng::new(3))?;
        let changed = y.data().iter().zip(x.data()).filter(|(a, b)| a != b).count();
        println!("{:<5} cells changed: {changed}", subset.as_str());
    }

    let items: Vec<FeatureArray> = (0..4).map(spectrogram).collect();
    let targets = FeatureArray::new(
        vec![4, 2],
        vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
    )?;
    let batch = Batch {
        features: FeatureArray::stack(&items)?,
        targets,
        item_ids: (0..4).map(|i| format!("item{i}")).collect(),
    };
    let mixed = pipeline.apply_batch(batch, &mut Rng::new(9))?;
    for (id, row) in mixed.item_ids.iter().zip(mixed.targets.data().chunks(2)) {
        println!("{id}: target [{:.3}, {:.3}] sums to {:.3}", row[0], row[1], row[0] + row[1]);
    }
    Ok(())
}
