//! Compares backpropagated gradients with fourth-order central differences
//! for each layer kind and for whole models in 64-bit arithmetic.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use audpipe::nn::{gradient_check, Encoder, Layer, Mode, Model, ModelKind, ModelSpec, Tensor};
use audpipe::Rng;

fn random(dims: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.next_gaussian()).collect()).unwrap()
}

fn report(name: &str, model: &mut Model<f64>, x: &Tensor<f64>, mode: Mode) -> audpipe::Result<()> {
    let g = gradient_check(model, x, mode, 1e-3, 5)?;
    let verdict = if g.max_rel_error < 1e-6 { "ok" } else { "MISMATCH" };
    println!("{name:<22} {:>5} values  max rel error {:.2e}  {verdict}", g.checked, g.max_rel_error);
    Ok(())
}

fn main() -> audpipe::Result<()> {
    let single: Vec<(&str, Layer<f64>, Vec<usize>, Mode)> = vec![
        ("linear", Layer::linear("l", 6, 4, 1), vec![3, 6], Mode::Train),
        ("conv2d", Layer::conv2d("c", 2, 3, 1), vec![2, 2, 5, 6], Mode::Train),
        ("batch_norm train", Layer::batch_norm("bn", 3), vec![5, 3], Mode::Train),
        ("batch_norm eval", Layer::batch_norm("bn", 3), vec![5, 3], Mode::Eval),
        ("frame_linear", Layer::frame_linear("f", 4, 3, 1), vec![2, 4, 6], Mode::Train),
        ("gru", Layer::gru("g", 4, 3, 1), vec![2, 4, 6], Mode::Train),
    ];
    for (name, layer, dims, mode) in single {
        let mut m = Model::from_layers(vec![layer], dims[1..].to_vec())?;
        report(name, &mut m, &random(dims, 2), mode)?;
    }

    let mut spec = ModelSpec::new(ModelKind::Ffnn);
    spec.hidden = vec![8, 5];
    let mut ffnn: Model<f64> = Model::build(&spec, &[10], 3, 4)?;
    report("ffnn model", &mut ffnn, &random(vec![4, 10], 6), Mode::Train)?;

    let mut spec = ModelSpec::new(ModelKind::SeqFfnn);
    spec.encoder = Encoder::Gru;
    spec.encoder_dim = 4;
    spec.hidden = vec![5];
    let mut seq: Model<f64> = Model::build(&spec, &[3, 7], 2, 4)?;
    report("seq_ffnn gru model", &mut seq, &random(vec![2, 3, 7], 8), Mode::Train)?;
    Ok(())
}
