//! Runs an attention gate and a feature pyramid attention block on a random
//! feature map and prints the attention maps they produce.
//!
//! ```text
//! cargo run --example attention_blocks
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segzoo::blocks::{AttentionGate, BlockSpec, FeaturePyramidAttention};
use segzoo::graph::Graph;
use segzoo::params::{Init, ParamStore};
use segzoo::tensor::Tensor;

fn describe(name: &str, t: &Tensor<f32>) {
    let d = t.data();
    let min = d.iter().copied().fold(f32::INFINITY, f32::min);
    let max = d.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mean = d.iter().sum::<f32>() / d.len() as f32;
    println!(
        "{name:<18} {} min {min:.4} mean {mean:.4} max {max:.4}",
        t.shape()
    );
}

fn main() -> segzoo::Result<()> {
    let (c, h, w) = (8, 32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |shape: (usize, usize, usize, usize)| {
        Tensor::<f32>::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    };
    let skip = random((1, c, h, w));
    let gating = random((1, 2 * c, h / 2, w / 2));

    let mut store = ParamStore::<f32>::new();
    let mut init = Init::new(0);
    let gate = AttentionGate::new(
        BlockSpec::attention_gate(c, c),
        &mut store,
        &mut init,
        "gate",
    )?;
    let fpa = FeaturePyramidAttention::new(BlockSpec::fpa(c), &mut store, &mut init, "fpa")?;
    println!("{} parameters in {} tensors\n", store.numel(), store.len());

    let mut g = Graph::new();
    let x = g.input(skip);
    let gs = g.input(gating);
    let (gated, alpha) = gate.forward_with_map(&mut g, &store, x, gs)?;
    let (pyramid, att) = fpa.forward_with_map(&mut g, &store, x)?;
    describe("skip feature", g.value(x));
    describe("gate alpha", g.value(alpha));
    describe("gated feature", g.value(gated));
    describe("pyramid attention", g.value(att));
    describe("pyramid output", g.value(pyramid));
    Ok(())
}
