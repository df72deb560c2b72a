//! Mini-batch Adam on categorical cross-entropy with per-epoch evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{Dataset, LabelMap, Sample, Split};
use crate::error::{Error, Result};
use crate::graph::{softmax_cross_entropy, Gradients, Graph};
use crate::metrics::{evaluate, image_records, mean_scores};
use crate::models::{argmax_labels, image_batch, Model};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};

pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "checkpoint_best";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 145,
            learning_rate: 1e-4,
            batch_size: 6,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(params: &ParamStore<F>, config: &TrainConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let (b1, b2) = (F::from_f64_lossy(self.beta1), F::from_f64_lossy(self.beta2));
        let (one, step, eps) = (
            F::one(),
            F::from_f64_lossy(step),
            F::from_f64_lossy(self.eps * c2.sqrt()),
        );
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let k = id.index();
            let p = params.get_mut(id).data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                p[i] = p[i] - step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

fn flat_targets(masks: &[&LabelMap]) -> Vec<u8> {
    masks
        .iter()
        .flat_map(|m| m.labels().iter().copied())
        .collect()
}

/// Mean over every pixel of `-log softmax(logits)[target]`.
pub fn cce_loss<F: Float>(logits: &Tensor<F>, targets: &[&LabelMap]) -> Result<f64> {
    let s = logits.shape();
    if targets.len() != s.n
        || targets
            .iter()
            .any(|m| (m.height(), m.width()) != (s.h, s.w))
    {
        return Err(Error::Shape(format!("targets do not match logits {s}")));
    }
    let flat = flat_targets(targets);
    if let Some(&bad) = flat.iter().find(|&&t| t as usize >= s.c) {
        return Err(Error::Config(format!(
            "target class {bad} out of range for {} classes",
            s.c
        )));
    }
    Ok(softmax_cross_entropy(logits, &flat).0)
}

/// Loss, gradients and the argmax predictions of one forward/backward pass.
pub struct StepResult<F> {
    pub loss: f64,
    pub grads: Gradients<F>,
    pub predictions: Vec<LabelMap>,
}

pub fn forward_backward<F: Float>(model: &Model<F>, batch: &[&Sample]) -> Result<StepResult<F>> {
    let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = batch.iter().map(|s| &s.mask).collect();
    let mut g = Graph::new();
    let x = g.input(image_batch::<F>(&images)?);
    let logits = model.forward(&mut g, x)?;
    let predictions = argmax_labels(g.value(logits));
    let loss = g.cross_entropy(logits, &flat_targets(&masks))?;
    let value = g.value(loss).to_scalar().to_f64().unwrap_or(f64::NAN);
    Ok(StepResult {
        loss: value,
        grads: g.backward(loss),
        predictions,
    })
}

/// One Adam step on `batch`; returns the pre-step loss.
pub fn train_step<F: Float>(
    model: &mut Model<F>,
    adam: &mut Adam<F>,
    batch: &[&Sample],
) -> Result<f64> {
    let r = forward_backward(model, batch)?;
    if !r.loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", r.loss)));
    }
    adam.step(model.params_mut(), &r.grads);
    Ok(r.loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_dsc: f64,
    pub test_loss: Option<f64>,
    pub test_dsc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::data(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::data(path, e.to_string()))?;
        Ok(TrainHistory { records })
    }
}

/// Where and how often training reports progress.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints and `history.csv` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug)]
pub struct TrainOutcome<F> {
    pub history: TrainHistory,
    /// Epoch (1-based) with the lowest test loss, or train loss without a test split.
    pub best_epoch: usize,
    pub best_params: ParamStore<F>,
}

/// Trains `model` in place on the TRAIN split of `dataset`.
pub fn train<F: Float>(
    model: &mut Model<F>,
    dataset: &Dataset,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let train_set = dataset.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Dataset("the training split is empty".into()));
    }
    let test_set = dataset.split(Split::Test);
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = Adam::new(model.params(), config);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ParamStore<F>)> = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order = train_set.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_add(epoch as u64),
        ));
        let mut loss_sum = 0.0;
        let mut records = Vec::with_capacity(order.len() * 4);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let r = forward_backward(model, batch)?;
            if !r.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {} at epoch {epoch}, batch {}",
                    r.loss,
                    b + 1
                )));
            }
            adam.step(model.params_mut(), &r.grads);
            loss_sum += r.loss * batch.len() as f64;
            for (s, pred) in batch.iter().zip(&r.predictions) {
                records.extend(image_records(&s.id, pred, &s.mask)?);
            }
        }
        let train_loss = loss_sum / order.len() as f64;
        let (_, train_dsc) = mean_scores(&records);
        let test = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(model, &test_set, config.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_dsc,
            test_loss: test.as_ref().map(|e| e.mean_loss),
            test_dsc: test.as_ref().map(|e| e.mean_dsc),
            seconds: started.elapsed().as_secs_f64(),
        };
        if options.verbose {
            eprintln!(
                "{} epoch {epoch}/{}: train loss {:.4} dsc {:.4} | test loss {} dsc {} | {:.1}s",
                model.arch(),
                config.epochs,
                record.train_loss,
                record.train_dsc,
                fmt_opt(record.test_loss),
                fmt_opt(record.test_dsc),
                record.seconds
            );
        }
        let score = record.test_loss.unwrap_or(record.train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.params().clone()));
            if let Some(dir) = &options.out_dir {
                checkpoint::save(&dir.join(BEST_CHECKPOINT), model)?;
            }
        }
        history.records.push(record);
        if let Some(dir) = &options.out_dir {
            history.write_csv(&dir.join(HISTORY_FILE))?;
        }
    }
    if let Some(dir) = &options.out_dir {
        checkpoint::save(&dir.join(FINAL_CHECKPOINT), model)?;
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}
