//! Desk-scale generative retriever.
//!
//! One embedding table covers text and item-ID tokens. The context vector is
//! the mean of the input embeddings and the next token is predicted by a
//! softmax over the item tokens only:
//!
//! ```text
//! h        = mean_j E[x_j]
//! logit_i  = <O_i, h> + b_i
//! ```
//!
//! With tied embeddings `O_i` is the row of `E` holding the ID token of item
//! `i`. Training minimizes cross-entropy with AdamW.

mod adamw;
pub mod checkpoint;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, Task, TokenIndex, TrainingInstance, Vocabulary};
use crate::error::{Error, Result};

pub use adamw::AdamW;

const INIT_STD: f64 = 0.1;
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tie_output_embeddings: bool,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            embedding_dim: 32,
            learning_rate: 0.002,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 5,
            tie_output_embeddings: true,
            seed: 0,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config("embedding_dim must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Model weights. Matrices are row-major with `dim` columns; `output` is
/// empty in tied mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverParams {
    pub dim: usize,
    pub vocab_size: usize,
    pub num_items: usize,
    pub item_offset: TokenIndex,
    pub tied: bool,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with the same layout as [`RetrieverParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &RetrieverParams) -> Self {
        Gradient {
            input: vec![0.0; p.input.len()],
            output: vec![0.0; p.output.len()],
            bias: vec![0.0; p.bias.len()],
        }
    }

    fn clear(&mut self) {
        self.input.fill(0.0);
        self.output.fill(0.0);
        self.bias.fill(0.0);
    }
}

impl RetrieverParams {
    /// Embeddings drawn from N(0, 0.1²), zero bias.
    pub fn init(cfg: &RetrieverConfig, vocab_size: usize, num_items: usize, item_offset: TokenIndex) -> Result<Self> {
        cfg.validate()?;
        if num_items == 0 || item_offset + num_items > vocab_size {
            return Err(Error::Config(format!(
                "{num_items} items at offset {item_offset} do not fit a vocabulary of {vocab_size}"
            )));
        }
        let d = cfg.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(INIT_STREAM);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let input = (0..vocab_size * d).map(|_| normal.sample(&mut rng)).collect();
        let output = if cfg.tie_output_embeddings {
            Vec::new()
        } else {
            (0..num_items * d).map(|_| normal.sample(&mut rng)).collect()
        };
        Ok(RetrieverParams {
            dim: d,
            vocab_size,
            num_items,
            item_offset,
            tied: cfg.tie_output_embeddings,
            input,
            output,
            bias: vec![0.0; num_items],
        })
    }

    pub fn for_vocabulary(cfg: &RetrieverConfig, vocab: &Vocabulary) -> Result<Self> {
        Self::init(cfg, vocab.len(), vocab.num_items(), vocab.item_offset())
    }

    fn row(&self, token: TokenIndex) -> &[f64] {
        &self.input[token * self.dim..(token + 1) * self.dim]
    }

    /// Output-side representation of item `i`, the vector its logit is
    /// computed from.
    pub fn item_embedding(&self, item: ItemId) -> &[f64] {
        let i = item.index();
        assert!(i < self.num_items, "item {item} out of range");
        if self.tied {
            self.row(self.item_offset + i)
        } else {
            &self.output[i * self.dim..(i + 1) * self.dim]
        }
    }

    fn check_input(&self, input: &[TokenIndex]) -> Result<()> {
        if input.is_empty() {
            return Err(Error::Data("empty input sequence".into()));
        }
        if let Some(&t) = input.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::VocabularyMismatch(format!(
                "token {t} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn context(&self, input: &[TokenIndex], h: &mut [f64]) {
        h.fill(0.0);
        for &t in input {
            for (a, b) in h.iter_mut().zip(self.row(t)) {
                *a += b;
            }
        }
        let m = input.len() as f64;
        h.iter_mut().for_each(|a| *a /= m);
    }

    fn logits(&self, h: &[f64], z: &mut [f64]) {
        for (i, zi) in z.iter_mut().enumerate() {
            let o = self.item_embedding(ItemId::from(i));
            *zi = o.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.bias[i];
        }
    }

    /// Distribution over items given the input tokens.
    pub fn forward(&self, input: &[TokenIndex]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut h = vec![0.0; self.dim];
        let mut z = vec![0.0; self.num_items];
        self.context(input, &mut h);
        self.logits(&h, &mut z);
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Mean predicted distribution over a set of inputs.
    pub fn mean_prediction<'a>(&self, inputs: impl IntoIterator<Item = &'a [TokenIndex]>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.num_items];
        let mut n = 0usize;
        for input in inputs {
            for (a, p) in acc.iter_mut().zip(self.forward(input)?) {
                *a += p;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("no inputs".into()));
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Ok(acc)
    }

    /// Adds `scale` times the gradient of `-ln p(target | input)` into `grad`
    /// and returns the unscaled loss.
    fn accumulate(&self, inst: &TrainingInstance, scale: f64, grad: &mut Gradient, buf: &mut Buffers) -> Result<f64> {
        self.check_input(&inst.input)?;
        let target = inst
            .target
            .checked_sub(self.item_offset)
            .filter(|&t| t < self.num_items)
            .ok_or_else(|| Error::VocabularyMismatch(format!("target token {} is not an item", inst.target)))?;
        let d = self.dim;
        self.context(&inst.input, &mut buf.h);
        self.logits(&buf.h, &mut buf.z);
        let max = buf.z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + buf.z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = log_z - buf.z[target];

        buf.dh.fill(0.0);
        for i in 0..self.num_items {
            let mut dz = (buf.z[i] - log_z).exp();
            if i == target {
                dz -= 1.0;
            }
            dz *= scale;
            grad.bias[i] += dz;
            let o = self.item_embedding(ItemId::from(i));
            for k in 0..d {
                buf.dh[k] += dz * o[k];
            }
            let go = if self.tied {
                let r = self.item_offset + i;
                &mut grad.input[r * d..(r + 1) * d]
            } else {
                &mut grad.output[i * d..(i + 1) * d]
            };
            for k in 0..d {
                go[k] += dz * buf.h[k];
            }
        }
        let m = inst.input.len() as f64;
        for &t in &inst.input {
            let gi = &mut grad.input[t * d..(t + 1) * d];
            for k in 0..d {
                gi[k] += buf.dh[k] / m;
            }
        }
        Ok(loss)
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[TrainingInstance]) -> Result<(f64, Gradient)> {
        let mut grad = Gradient::zeros_like(self);
        let losses = self.batch_gradient(batch, &mut grad, &mut Buffers::new(self))?;
        Ok((losses.iter().sum::<f64>() / batch.len() as f64, grad))
    }

    fn batch_gradient(&self, batch: &[TrainingInstance], grad: &mut Gradient, buf: &mut Buffers) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        grad.clear();
        let scale = 1.0 / batch.len() as f64;
        batch.iter().map(|inst| self.accumulate(inst, scale, grad, buf)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.input.iter().chain(&self.output).chain(&self.bias).all(|v| v.is_finite())
    }
}

struct Buffers {
    h: Vec<f64>,
    dh: Vec<f64>,
    z: Vec<f64>,
}

impl Buffers {
    fn new(p: &RetrieverParams) -> Self {
        Buffers {
            h: vec![0.0; p.dim],
            dh: vec![0.0; p.dim],
            z: vec![0.0; p.num_items],
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub config: RetrieverConfig,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean training loss of every epoch, split by task.
    pub task_losses: Vec<BTreeMap<Task, f64>>,
    pub params: RetrieverParams,
    pub optimizer_steps: u64,
    pub seed: u64,
}

/// Trains a fresh model on `instances` for `cfg.epochs` shuffled passes.
pub fn train(cfg: &RetrieverConfig, vocab: &Vocabulary, instances: &[TrainingInstance]) -> Result<TrainReport> {
    let params = RetrieverParams::for_vocabulary(cfg, vocab)?;
    train_from(cfg, params, instances)
}

/// Trains starting from given parameters.
pub fn train_from(cfg: &RetrieverConfig, mut params: RetrieverParams, instances: &[TrainingInstance]) -> Result<TrainReport> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Data("no training instances".into()));
    }
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut grad = Gradient::zeros_like(&params);
    let mut buf = Buffers::new(&params);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut task_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut per_task: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| instances[i].clone()));
            let losses = params.batch_gradient(&batch, &mut grad, &mut buf)?;
            for (inst, l) in batch.iter().zip(&losses) {
                if !l.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, step {}",
                        opt.steps
                    )));
                }
                total += l;
                let e = per_task.entry(inst.task).or_default();
                e.0 += l;
                e.1 += 1;
            }
            opt.step(&mut params, &grad);
        }
        if !params.all_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {epoch}")));
        }
        let mean = total / instances.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
        task_losses.push(per_task.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect());
    }
    Ok(TrainReport {
        config: cfg.clone(),
        epoch_losses,
        task_losses,
        params,
        optimizer_steps: opt.steps,
        seed: cfg.seed,
    })
}
