mod common;

use segzoo::checkpoint;
use segzoo::data::{stratified_split, Dataset, Split};
use segzoo::models::{Arch, Model, ModelConfig};
use segzoo::train::{
    train, train_step, Adam, TrainConfig, TrainHistory, TrainOptions, BEST_CHECKPOINT,
    FINAL_CHECKPOINT, HISTORY_FILE,
};

fn tiny_split(seed: u64) -> Dataset {
    let mut data = common::small_dataset(seed, 8, 32);
    let split = stratified_split(&data.manifest, 0.5, seed).unwrap();
    data.apply_split(&split);
    data
}

fn tiny_model(arch: Arch) -> Model<f32> {
    Model::new(
        ModelConfig::new(arch).with_base_channels(2).with_depth(2),
        1,
    )
    .unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        learning_rate: 1e-3,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn two_epochs_write_history_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_split(1);
    let mut model = tiny_model(Arch::FauNet);
    let options = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        verbose: false,
    };
    let outcome = train(&mut model, &data, &config(2), &options).unwrap();
    assert_eq!(outcome.history.records.len(), 2);
    assert!(outcome
        .history
        .records
        .iter()
        .all(|r| r.test_loss.is_some() && r.train_loss.is_finite()));
    assert!((1..=2).contains(&outcome.best_epoch));
    let written = TrainHistory::read_csv(&dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(written.records.len(), 2);

    let best: Model<f32> = checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(
        best.params().iter().count(),
        outcome.best_params.iter().count()
    );
    for ((_, _, a), (_, _, b)) in best.params().iter().zip(outcome.best_params.iter()) {
        assert_eq!(a, b);
    }
    let last: Model<f32> = checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    for ((_, _, a), (_, _, b)) in last.params().iter().zip(model.params().iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = tiny_split(2);
    let run = || {
        let mut model = tiny_model(Arch::AttUnet);
        let outcome = train(&mut model, &data, &config(2), &TrainOptions::default()).unwrap();
        let losses: Vec<_> = outcome
            .history
            .records
            .iter()
            .map(|r| (r.train_loss, r.test_loss))
            .collect();
        (losses, model.params().clone())
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la, lb);
    for ((_, _, a), (_, _, b)) in pa.iter().zip(pb.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn repeated_steps_fit_a_fixed_batch() {
    let data = common::small_dataset(3, 4, 32);
    let batch: Vec<_> = data.samples.iter().take(2).collect();
    let mut model = Model::<f32>::new(
        ModelConfig::new(Arch::Unet)
            .with_base_channels(8)
            .with_depth(2),
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        ..config(1)
    };
    let mut adam = Adam::new(model.params(), &cfg);
    let first = train_step(&mut model, &mut adam, &batch).unwrap();
    let mut last = first;
    for _ in 0..40 {
        last = train_step(&mut model, &mut adam, &batch).unwrap();
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn empty_training_split_is_a_dataset_error() {
    let mut data = common::small_dataset(4, 4, 32);
    let split = stratified_split(&data.manifest, 0.0, 4).unwrap();
    data.apply_split(&split);
    assert_eq!(data.split(Split::Train).len(), 0);
    let err = train(
        &mut tiny_model(Arch::Unet),
        &data,
        &config(1),
        &TrainOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn non_finite_weights_abort_with_a_numeric_error() {
    let data = tiny_split(5);
    let mut model = tiny_model(Arch::Unet);
    let id = model.params().find("head.bias").unwrap();
    model.params_mut().get_mut(id).data_mut()[0] = f32::NAN;
    let err = train(&mut model, &data, &config(1), &TrainOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("epoch 1"), "{err}");
}
