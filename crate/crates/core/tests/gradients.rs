mod common;

use common::{gradient_check, worst, zero_gradient_fraction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segzoo::blocks::{AttentionGate, BlockSpec, FeaturePyramidAttention};
use segzoo::graph::Graph;
use segzoo::models::{Arch, Model, ModelConfig};
use segzoo::params::{Init, ParamStore};
use segzoo::tensor::Tensor;
use segzoo::train::{cce_loss, forward_backward};

fn random(shape: (usize, usize, usize, usize), seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn targets(n: usize, classes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes as u8)).collect()
}

#[test]
fn fpa_gradients_match_finite_differences() {
    let (c, h) = (3, 8);
    let mut store = ParamStore::<f64>::new();
    let fpa = FeaturePyramidAttention::new(BlockSpec::fpa(c), &mut store, &mut Init::new(4), "fpa")
        .unwrap();
    let x = random((2, c, h, h), 1);
    let t = targets(2 * h * h, c, 2);
    let run = |store: &ParamStore<f64>| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = fpa.forward(&mut g, store, xv).unwrap();
        let loss = g.cross_entropy(out, &t).unwrap();
        (g, loss)
    };
    let (g, loss) = run(&store);
    let grads = g.backward(loss);
    let checks = gradient_check(&mut store, &grads, 40, 9, |s| {
        let (g, loss) = run(s);
        g.value(loss).to_scalar()
    });
    let w = worst(&checks);
    assert!(w.relative_error() < 1e-3, "{w:?}");
}

#[test]
fn attention_gate_gradients_match_finite_differences() {
    let c = 3;
    let mut store = ParamStore::<f64>::new();
    let gate = AttentionGate::new(
        BlockSpec::attention_gate(c, 2),
        &mut store,
        &mut Init::new(5),
        "ag",
    )
    .unwrap();
    let x = random((2, c, 8, 8), 3);
    let gs = random((2, 2 * c, 4, 4), 4);
    let t = targets(2 * 64, c, 5);
    let run = |store: &ParamStore<f64>| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let gv = g.input(gs.clone());
        let out = gate.forward(&mut g, store, xv, gv).unwrap();
        let loss = g.cross_entropy(out, &t).unwrap();
        (g, loss)
    };
    let (g, loss) = run(&store);
    let grads = g.backward(loss);
    let checks = gradient_check(&mut store, &grads, 30, 10, |s| {
        let (g, loss) = run(s);
        g.value(loss).to_scalar()
    });
    let w = worst(&checks);
    assert!(w.relative_error() < 1e-3, "{w:?}");
}

#[test]
fn reduced_models_match_finite_differences() {
    let data = common::small_dataset(2, 4, 32);
    for arch in [Arch::Unet, Arch::AttDenseUnet, Arch::AttR2Unet] {
        let config = ModelConfig::new(arch).with_base_channels(2).with_depth(2);
        let mut model = Model::<f64>::new(config, 6).unwrap();
        let batch = vec![&data.samples[0]];
        let r = forward_backward(&model, &batch).unwrap();
        let masks = [&batch[0].mask];
        let image = [&batch[0].image];
        let proto = model.clone();
        let checks = gradient_check(model.params_mut(), &r.grads, 20, 11, |s| {
            let mut m = proto.clone();
            *m.params_mut() = s.clone();
            let logits = m
                .logits(segzoo::models::image_batch(&image).unwrap())
                .unwrap();
            cce_loss(&logits, &masks).unwrap()
        });
        let w = worst(&checks);
        assert!(w.relative_error() < 1e-3, "{arch}: {w:?}");
    }
}

#[test]
fn every_architecture_reaches_nearly_all_parameters() {
    let data = common::small_dataset(8, 4, 64);
    let batch: Vec<_> = data.samples.iter().take(2).collect();
    for arch in Arch::ALL {
        let model = Model::<f32>::new(ModelConfig::new(arch), 1).unwrap();
        let r = forward_backward(&model, &batch).unwrap();
        let frac = zero_gradient_fraction(model.params(), &r.grads);
        assert!(
            frac < 0.01,
            "{arch}: {:.2}% of tensors without gradient",
            100.0 * frac
        );
    }
}
