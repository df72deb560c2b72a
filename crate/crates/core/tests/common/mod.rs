#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segzoo::data::{generate_dataset_sized, Dataset, Sample};
use segzoo::graph::Gradients;
use segzoo::params::{ParamId, ParamStore};

/// Central-difference step for double-precision checks. Bias steps move a
/// whole channel, so larger steps start crossing ReLU kinks.
pub const FD_STEP: f64 = 1e-6;
/// Absolute floor of the relative-error denominator; central-difference
/// noise sits around 1e-10 for unit-scale losses at this step.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct GradCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(FD_FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares `grads` with central differences of `loss` at `samples`
/// randomly chosen scalar parameters (tensor first, then element).
pub fn gradient_check(
    store: &mut ParamStore<f64>,
    grads: &Gradients<f64>,
    samples: usize,
    seed: u64,
    loss: impl Fn(&ParamStore<f64>) -> f64,
) -> Vec<GradCheck> {
    let ids: Vec<ParamId> = store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            let index = rng.random_range(0..store.get(id).numel());
            let original = store.get(id).data()[index];
            store.get_mut(id).data_mut()[index] = original + FD_STEP;
            let plus = loss(store);
            store.get_mut(id).data_mut()[index] = original - FD_STEP;
            let minus = loss(store);
            store.get_mut(id).data_mut()[index] = original;
            GradCheck {
                name: store.name(id).to_owned(),
                index,
                analytic: grads.get(id).map_or(0.0, |g| g.data()[index]),
                numeric: (plus - minus) / (2.0 * FD_STEP),
            }
        })
        .collect()
}

pub fn worst(checks: &[GradCheck]) -> &GradCheck {
    checks
        .iter()
        .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
        .expect("at least one check")
}

/// Fraction of parameter tensors whose gradient is missing or all zero.
pub fn zero_gradient_fraction<F: segzoo::tensor::Float>(
    store: &ParamStore<F>,
    grads: &Gradients<F>,
) -> f64 {
    let zero = store
        .ids()
        .filter(|&id| {
            grads
                .get(id)
                .is_none_or(|g| g.data().iter().all(|v| *v == F::default()))
        })
        .count();
    zero as f64 / store.len() as f64
}

pub fn small_dataset(seed: u64, total: usize, size: usize) -> Dataset {
    generate_dataset_sized(seed, total, size).expect("phantoms")
}

pub fn refs(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().collect()
}
