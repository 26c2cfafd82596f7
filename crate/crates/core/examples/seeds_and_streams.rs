//! Every consumer of randomness draws from a stream named by a path under
//! the master seed, so adding a consumer never shifts the others.
//!
//! ```text
//! cargo run --example seeds_and_streams
//! ```

use audpipe::rng::{fnv1a64, splitmix64, SeedContext};
use audpipe::{derive_seed, Rng};

fn main() {
    let master = 42;
    println!("fnv1a64(\"shuffle\") = {:016x}", fnv1a64(b"shuffle"));
    println!("splitmix64(0)      = {:016x}", splitmix64(0));

    let shuffle = derive_seed(master, &["shuffle", "epoch:0"]);
    let augment = derive_seed(master, &["augment", "epoch:0", "item:train/a.wav"]);
    println!("shuffle epoch 0 seed {shuffle:016x}");
    println!("augment seed         {augment:016x}");

    // SeedContext builds the same paths incrementally.
    let ctx = SeedContext::new(master).child("shuffle").child("epoch:0");
    assert_eq!(ctx.seed(), shuffle);

    let mut order: Vec<usize> = (0..10).collect();
    ctx.rng().shuffle(&mut order);
    println!("epoch 0 order {order:?}");
    let mut again: Vec<usize> = (0..10).collect();
    Rng::new(shuffle).shuffle(&mut again);
    assert_eq!(order, again);

    let mut rng = Rng::new(7);
    let uniform: Vec<String> = (0..4).map(|_| format!("{:.4}", rng.next_f64())).collect();
    let gauss: Vec<String> = (0..4).map(|_| format!("{:+.4}", rng.next_gaussian())).collect();
    let beta: Vec<String> = (0..4).map(|_| format!("{:.4}", rng.next_beta(0.4, 0.4).unwrap())).collect();
    println!("uniform  {}", uniform.join(" "));
    println!("gaussian {}", gauss.join(" "));
    println!("beta(.4) {}", beta.join(" "));
}
