//! Training objectives over the expanded vocabulary.

mod alignment;
mod objective;

pub use alignment::{
    brute_force_alignment_nll, ctc_min_frames, AlignmentLoss, AlignmentMode, BRUTE_FORCE_MAX_FRAMES,
    BRUTE_FORCE_MAX_LABELS, BRUTE_FORCE_MAX_WIDTH,
};
pub use objective::{utterance_objective, Objective};

use crate::error::{Error, Result};
use crate::kv;
use crate::model::{StaticVocabulary, Token};
use crate::numerics::{log_softmax, Scalar, Tape, Tensor, Var};

/// Reference transcription rewritten over the expanded vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandedReference {
    pub tokens: Vec<Token>,
    pub source_text: String,
}

impl ExpandedReference {
    /// Rejects blanks and bias indices outside `0..n_bias`.
    pub fn validate(&self, n_bias: usize) -> Result<()> {
        for (i, tok) in self.tokens.iter().enumerate() {
            match *tok {
                Token::Blank => return Err(Error::Validation(format!("reference position {i} is blank"))),
                Token::Bias(n) if n >= n_bias => {
                    return Err(Error::Index(format!(
                        "reference position {i} names bias token {n} with only {n_bias} phrases"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Indices into the `K+N` score vector.
    pub fn labels(&self, vocab: &StaticVocabulary) -> Vec<usize> {
        self.tokens.iter().map(|t| t.expanded_index(vocab)).collect()
    }
}

/// Hyperparameters of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the CTC branch in the hybrid objective.
    pub lambda: f64,
    /// Phrases drawn per utterance when building a batch bias list.
    pub n_utt: usize,
    pub i_min: usize,
    pub i_max: usize,
    /// Extra utterances per batch whose sampled phrases join the bias list
    /// without occurring in the batch.
    pub distractors: usize,
    /// Variants per sampled phrase that keep a prefix and replace the rest
    /// with random tokens.
    pub hard_negatives: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            n_utt: 1,
            i_min: 2,
            i_max: 5,
            distractors: 32,
            hard_negatives: 1,
            lr: 6e-3,
            warmup_steps: 1000,
            clip_norm: 5.0,
            epochs: 30,
            batch_size: 16,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda={} outside [0, 1]", self.lambda)));
        }
        if self.i_min < 1 || self.i_min > self.i_max {
            return Err(Error::Config(format!(
                "phrase length range {}..{} needs 1 <= min <= max",
                self.i_min, self.i_max
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr={} must be positive", self.lr)));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("clip_norm={} must be positive", self.clip_norm)));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn write_kv(&self, w: &mut kv::Writer) {
        w.put("lambda", self.lambda)
            .put("n_utt", self.n_utt)
            .put("i_min", self.i_min)
            .put("i_max", self.i_max)
            .put("distractors", self.distractors)
            .put("hard_negatives", self.hard_negatives)
            .put("lr", self.lr)
            .put("warmup_steps", self.warmup_steps)
            .put("clip_norm", self.clip_norm)
            .put("epochs", self.epochs)
            .put("batch_size", self.batch_size)
            .put("train_seed", self.seed);
    }

    /// Applies one key; `Ok(false)` when the key is not a training key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<bool> {
        match key {
            "lambda" => self.lambda = kv::value(key, raw)?,
            "n_utt" => self.n_utt = kv::value(key, raw)?,
            "i_min" => self.i_min = kv::value(key, raw)?,
            "i_max" => self.i_max = kv::value(key, raw)?,
            "distractors" => self.distractors = kv::value(key, raw)?,
            "hard_negatives" => self.hard_negatives = kv::value(key, raw)?,
            "lr" => self.lr = kv::value(key, raw)?,
            "warmup_steps" => self.warmup_steps = kv::value(key, raw)?,
            "clip_norm" => self.clip_norm = kv::value(key, raw)?,
            "epochs" => self.epochs = kv::value(key, raw)?,
            "batch_size" => self.batch_size = kv::value(key, raw)?,
            "train_seed" => self.seed = kv::value(key, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// `(1-λ)·primary + λ·ctc`.
pub fn hybrid_loss(primary: f64, ctc: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda={lambda} outside [0, 1]")));
    }
    Ok((1.0 - lambda) * primary + lambda * ctc)
}

/// Teacher-forced negative log-likelihood of the reference followed by eos.
/// Row `i` of `logits` scores the token at position `i`.
pub fn attention_nll(logits: &Tensor, reference: &ExpandedReference, vocab: &StaticVocabulary) -> Result<f64> {
    let targets = attention_targets(reference, vocab);
    let (rows, width) = logits.dims2();
    if rows != targets.len() {
        return Err(Error::Contract(format!(
            "{rows} logit rows for a reference of {} tokens plus eos",
            reference.tokens.len()
        )));
    }
    let mut total = 0.0f64;
    for (r, &y) in targets.iter().enumerate() {
        if y >= width {
            return Err(Error::Index(format!("target {y} outside {width} scores")));
        }
        let row: Vec<f64> = logits.row(r).iter().map(|&x| f64::from(x)).collect();
        total -= log_softmax(&row)?[y];
    }
    Ok(total)
}

pub(crate) fn attention_targets(reference: &ExpandedReference, vocab: &StaticVocabulary) -> Vec<usize> {
    let mut t = reference.labels(vocab);
    t.push(vocab.sos_eos_id());
    t
}

/// Tape form of [`attention_nll`] over raw scores.
pub fn attention_nll_tape<T: Scalar>(tape: &mut Tape<'_, T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let (rows, width) = tape.dims(logits);
    if rows != targets.len() {
        return Err(Error::Contract(format!("{rows} logit rows for {} targets", targets.len())));
    }
    let lp = tape.log_softmax_rows(logits);
    let flat: Vec<usize> = targets.iter().enumerate().map(|(r, &y)| r * width + y).collect();
    let picked = tape.pick(lp, &flat)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -T::one()))
}

fn to_f64<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    x.data().iter().map(|v| v.to_f64().unwrap()).collect()
}

/// CTC negative log-likelihood for `T × (K+N)` log-normalised scores.
pub fn ctc_loss(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<f64> {
    let (t, w) = log_probs.dims2();
    Ok(alignment::ctc(&to_f64(log_probs), t, w, labels, blank)?.nll)
}

/// Transducer negative log-likelihood for a `T × (S+1) × (K+N)` lattice.
pub fn rnnt_loss(lattice: &Tensor, labels: &[usize], blank: usize) -> Result<f64> {
    let (t, w) = lattice_dims(lattice, labels.len())?;
    Ok(alignment::rnnt(&to_f64(lattice), t, w, labels, blank)?.nll)
}

fn lattice_dims(lattice: &Tensor, s: usize) -> Result<(usize, usize)> {
    match lattice.shape() {
        &[t, u, w] if u == s + 1 => Ok((t, w)),
        &[rows, w] if rows % (s + 1) == 0 => Ok((rows / (s + 1), w)),
        shape => Err(Error::Dimension(format!("lattice shape {shape:?} for {s} labels"))),
    }
}

/// Tape node holding the CTC loss of `log_probs` (`T × W`).
pub fn ctc_loss_tape<T: Scalar>(tape: &mut Tape<'_, T>, log_probs: Var, labels: &[usize], blank: usize) -> Result<Var> {
    let (t, w) = tape.dims(log_probs);
    let r = alignment::ctc(&to_f64(tape.value(log_probs)), t, w, labels, blank)?;
    custom(tape, log_probs, r)
}

/// Tape node holding the transducer loss of a `T·(S+1) × W` lattice.
pub fn rnnt_loss_tape<T: Scalar>(tape: &mut Tape<'_, T>, lattice: Var, labels: &[usize], blank: usize) -> Result<Var> {
    let (rows, w) = tape.dims(lattice);
    let u = labels.len() + 1;
    if rows % u != 0 {
        return Err(Error::Dimension(format!("{rows} lattice rows for {} labels", labels.len())));
    }
    let r = alignment::rnnt(&to_f64(tape.value(lattice)), rows / u, w, labels, blank)?;
    custom(tape, lattice, r)
}

fn custom<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, r: AlignmentLoss) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let grad = Tensor::new(shape, r.grad.into_iter().map(T::lit).collect())?;
    tape.custom_scalar(x, T::lit(r.nll), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> StaticVocabulary {
        StaticVocabulary::with_specials(["a", "b", "c", "d", "e", "f", "g", "h"]).unwrap()
    }

    fn reference(ids: &[usize]) -> ExpandedReference {
        ExpandedReference {
            tokens: ids.iter().map(|&i| Token::Normal(i)).collect(),
            source_text: String::new(),
        }
    }

    #[test]
    fn uniform_logits() {
        let v = vocab();
        let logits = Tensor::zeros(&[4, 10]);
        let nll = attention_nll(&logits, &reference(&[2, 3, 4]), &v).unwrap();
        assert!((nll - 4.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn saturated_logits() {
        let v = vocab();
        let r = reference(&[2, 5]);
        let targets = attention_targets(&r, &v);
        let logits = Tensor::from_fn(3, 10, |i, j| if targets[i] == j { 30.0 } else { 0.0 });
        let nll = attention_nll(&logits, &r, &v).unwrap();
        assert!(nll / 3.0 < 1e-8);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let v = vocab();
        let r = attention_nll(&Tensor::zeros(&[2, 10]), &reference(&[2, 3]), &v);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn hybrid_endpoints() {
        assert_eq!(hybrid_loss(1.0, 2.0, 0.0).unwrap(), 1.0);
        assert!((hybrid_loss(1.0, 2.0, 0.3).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(hybrid_loss(1.0, 2.0, 1.0).unwrap(), 2.0);
        assert!(matches!(hybrid_loss(1.0, 2.0, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn reference_validation() {
        let r = ExpandedReference {
            tokens: vec![Token::Normal(2), Token::Bias(1)],
            source_text: "a b".into(),
        };
        assert!(r.validate(2).is_ok());
        assert!(matches!(r.validate(1), Err(Error::Index(_))));
    }
}
