//! Minibatch training with per-batch bias lists sampled from the batch's
//! own references.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::biasing::{add_prefix_variants, rewrite_reference, sample_bias_list};
use crate::error::{Error, Result};
use crate::losses::{utterance_objective, TrainConfig};
use crate::model::{checkpoint, Model};
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::rng::substream;
use crate::synth::ManifestEntry;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.98;
const EPSILON: f64 = 1e-9;

/// One training utterance: static-vocabulary reference and raw frames.
#[derive(Clone, Debug)]
pub struct Example {
    pub utt_id: String,
    pub tokens: Vec<usize>,
    pub text: String,
    pub frames: Tensor,
}

impl Example {
    pub fn from_manifest(entry: &ManifestEntry, dir: &Path, model: &Model) -> Result<Self> {
        let tokens = model.vocab.tokenize(&entry.text)?;
        Ok(Self {
            utt_id: entry.utt_id.clone(),
            tokens,
            text: entry.text.clone(),
            frames: entry.load(dir)?.frames,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: usize,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies the gradients held in `store` with learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - BETA1.powi(self.steps as i32);
        let c2 = 1.0 - BETA2.powi(self.steps as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = f64::from(g);
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
                *w = (f64::from(*w) - update) as f32;
            }
        }
    }
}

/// Linear warmup followed by inverse square-root decay; `step` counts from 1.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = cfg.warmup_steps.max(1) as f64;
    cfg.lr * (s / w).min((w / s).sqrt())
}

/// Scales gradients to a global L2 norm of at most `max_norm` and returns
/// the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|&g| f64::from(g).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub primary: f64,
    pub ctc: Option<f64>,
    pub bias_phrases: usize,
    pub clamped: usize,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub primary: f64,
    pub ctc: Option<f64>,
    pub batches: usize,
    pub clamped: usize,
}

impl EpochStats {
    pub fn log_line(&self, lambda: f64) -> String {
        let ctc = self.ctc.map_or("-".to_string(), |c| format!("{c:.4}"));
        format!(
            "epoch={} loss={:.4} primary={:.4} ctc={ctc} lambda={lambda} batches={} clamped={}",
            self.epoch, self.loss, self.primary, self.batches, self.clamped
        )
    }
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    optimizer: Adam,
    sampling: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Adam::new(&model.params);
        let sampling = substream(cfg.seed, "sampling/bias");
        Ok(Self {
            model,
            cfg,
            optimizer,
            sampling,
        })
    }

    pub fn steps(&self) -> usize {
        self.optimizer.steps()
    }

    /// Forward and backward over one batch without updating parameters;
    /// gradients are left in the store. The bias list is sampled from the
    /// batch references followed by `extra` references.
    pub fn accumulate(&mut self, batch: &[&Example], extra: &[&Example]) -> Result<BatchStats> {
        let refs: Vec<Vec<usize>> = batch.iter().chain(extra).map(|e| e.tokens.clone()).collect();
        let mut sampled = sample_bias_list(&refs, &self.cfg, &self.model.vocab, &mut self.sampling)?;
        if self.cfg.hard_negatives > 0 {
            sampled.list = add_prefix_variants(&sampled.list, self.cfg.hard_negatives, &self.model.vocab, &mut self.sampling)?;
        }
        let model = &self.model;
        let mut tape = Tape::<f32>::new(&model.params);
        let phrases = model
            .bias
            .forward(&mut tape, &sampled.list, model.vocab.blank_id(), model.vocab.sos_eos_id())?;
        let (mut primary, mut ctc) = (0.0, 0.0);
        let mut total = None;
        for e in batch {
            let reference = rewrite_reference(&e.tokens, &sampled.list, &e.text);
            let obj = utterance_objective(model, &mut tape, &e.frames, phrases, &reference, self.cfg.lambda)
                .map_err(|err| Error::Domain(format!("{}: {err}", e.utt_id)))?;
            primary += obj.primary;
            ctc += obj.ctc.unwrap_or(0.0);
            total = Some(match total {
                Some(t) => tape.add(t, obj.total)?,
                None => obj.total,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
        let n = batch.len() as f64;
        let loss = tape.scale(total, 1.0 / n as f32);
        let value = f64::from(tape.scalar_value(loss));
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss {value} in batch starting at {}", batch[0].utt_id)));
        }
        let grads = tape.backward(loss)?;
        if !grads.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in batch starting at {}", batch[0].utt_id)));
        }
        self.model.params.zero_grad();
        grads.accumulate_into(&mut self.model.params);
        Ok(BatchStats {
            loss: value,
            primary: primary / n,
            ctc: (self.cfg.lambda > 0.0).then_some(ctc / n),
            bias_phrases: sampled.list.len(),
            clamped: sampled.clamped,
            grad_norm: 0.0,
        })
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[&Example], extra: &[&Example]) -> Result<BatchStats> {
        let mut stats = self.accumulate(batch, extra)?;
        stats.grad_norm = clip_gradients(&mut self.model.params, self.cfg.clip_norm);
        let lr = learning_rate(&self.cfg, self.optimizer.steps() + 1);
        self.optimizer.step(&mut self.model.params, lr);
        Ok(stats)
    }

    /// One pass over `examples` in a seeded random order.
    pub fn epoch(&mut self, examples: &[Example], epoch: usize) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut substream(self.cfg.seed, &format!("sampling/order/{epoch}")));
        let (mut loss, mut primary, mut ctc, mut clamped) = (0.0, 0.0, 0.0, 0);
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let extra: Vec<&Example> = (0..self.cfg.distractors)
                .map(|_| &examples[self.sampling.random_range(0..examples.len())])
                .collect();
            let s = self.step(&batch, &extra)?;
            loss += s.loss;
            primary += s.primary;
            ctc += s.ctc.unwrap_or(0.0);
            clamped += s.clamped;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        Ok(EpochStats {
            epoch,
            loss: loss / b,
            primary: primary / b,
            ctc: (self.cfg.lambda > 0.0).then_some(ctc / b),
            batches,
            clamped,
        })
    }
}

/// Checkpoint written after epoch `epoch`.
pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch{epoch:03}.dvm"))
}

/// Final checkpoint name inside an output directory.
pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join("model.dvm")
}

/// Runs every epoch, writing a checkpoint after each and `model.dvm` at the
/// end. `on_epoch` sees each epoch's statistics as soon as it finishes.
pub fn train(
    model: Model,
    examples: &[Example],
    cfg: &TrainConfig,
    out: &Path,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, Vec<EpochStats>)> {
    if examples.is_empty() {
        return Err(Error::Config("no training utterances".into()));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stats = trainer.epoch(examples, epoch)?;
        checkpoint::save(&trainer.model, &epoch_checkpoint(out, epoch))?;
        on_epoch(&stats);
        history.push(stats);
    }
    checkpoint::save(&trainer.model, &final_checkpoint(out))?;
    Ok((trainer.model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_decay() {
        let cfg = TrainConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..TrainConfig::default()
        };
        assert_eq!(learning_rate(&cfg, 1), 0.25);
        assert_eq!(learning_rate(&cfg, 4), 1.0);
        assert_eq!(learning_rate(&cfg, 16), 0.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[2], crate::numerics::Init::Constant(1.0), &mut substream(0, "t"));
        store.get_mut(id).grad = Tensor::vector(vec![3.0, -0.5]);
        let mut opt = Adam::new(&store);
        opt.step(&mut store, 0.1);
        let w = store.get(id).value.data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[2], crate::numerics::Init::Constant(0.0), &mut substream(0, "t"));
        store.get_mut(id).grad = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(clip_gradients(&mut store, 1.0), 5.0);
        let g = store.get(id).grad.data();
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
    }
}
