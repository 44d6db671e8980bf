//! Mini-batch training loop shared by every model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AdamW, AdamWConfig, Binding, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop once an epoch's mean loss falls below this value.
    pub target_loss: Option<f64>,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Decay the learning rate linearly to zero over all `epochs`.
    pub linear_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-5,
            weight_decay: 0.01,
            seed: 0,
            target_loss: None,
            clip_norm: None,
            linear_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={} weight_decay={}",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Per-sample loss closure: `(tape, params, sample index, rng) -> scalar loss`.
pub trait SampleLoss: FnMut(&mut Tape, &Binding, usize, &mut ChaCha8Rng) -> Result<Var> {}
impl<F: FnMut(&mut Tape, &Binding, usize, &mut ChaCha8Rng) -> Result<Var>> SampleLoss for F {}

/// Trains `store` with AdamW on `n_samples` examples and returns the mean
/// training loss of every completed epoch. Gradients are averaged over each
/// batch. `on_epoch` sees `(epoch, mean loss)`, epochs counted from 1, as soon as an epoch finishes.
pub fn fit(
    store: &mut ParamStore,
    n_samples: usize,
    config: &TrainConfig,
    mut loss_fn: impl SampleLoss,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    if n_samples == 0 {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optim = AdamW::new(
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        store,
    );
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut tape = Tape::new();
    let total_steps = (config.epochs * n_samples.div_ceil(config.batch_size)) as f64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Vec<f64>> = Vec::new();
            for &i in batch {
                tape.clear();
                let binding = store.bind(&mut tape, true);
                let loss = loss_fn(&mut tape, &binding, i, &mut rng)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss became {value} at epoch {} (sample {i})", epoch + 1)));
                }
                total += value;
                tape.backward(loss)?;
                let grads = binding.grads(&tape, store);
                if acc.is_empty() {
                    acc = grads;
                } else {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(max_norm) = config.clip_norm {
                let norm = acc.iter().flatten().map(|g| g * g).sum::<f64>().sqrt() * scale;
                if norm > max_norm {
                    scale *= max_norm / norm;
                }
            }
            acc.iter_mut().flatten().for_each(|g| *g *= scale);
            if config.linear_decay {
                optim.config.lr = config.lr * (1.0 - optim.steps() as f64 / total_steps);
            }
            optim.step(store, &acc)?;
        }
        tape.clear();
        let mean = total / n_samples as f64;
        history.push(mean);
        on_epoch(epoch + 1, mean);
        if config.target_loss.is_some_and(|t| mean < t) {
            break;
        }
    }
    store.snap_to_f32();
    store.check_finite()?;
    Ok(history)
}
