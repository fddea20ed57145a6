//! Inference over the expanded vocabulary: attention beam search with CTC
//! prefix scoring, transducer decoding and greedy CTC.

mod beam;
mod ctc_prefix;
mod transducer;
mod weights;

use std::fmt;
use std::str::FromStr;

pub use beam::beam_search_attention;
pub use ctc_prefix::{ctc_full_score, ctc_prefix_score, CtcPrefixScorer, CtcPrefixState};
pub use transducer::{rnnt_decode, transducer_search, ModelScorer, PredictorState, TransducerHypothesis, TransducerScorer};
pub use weights::{bias_weight_vector, weighted_log_softmax, weighted_softmax};

use crate::biasing::DynamicVocabulary;
use crate::error::{Error, Result};
use crate::kv;
use crate::model::{BiasList, FeatureSequence, Model, PhraseEmbeddings, Token};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Attention,
    Ctc,
    Rnnt,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Attention => "attention",
            DecodeMode::Ctc => "ctc",
            DecodeMode::Rnnt => "rnnt",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(DecodeMode::Attention),
            "ctc" => Ok(DecodeMode::Ctc),
            "rnnt" => Ok(DecodeMode::Rnnt),
            other => Err(Error::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

/// Per-frame label cap of transducer decoding.
pub const MAX_SYMBOLS_PER_FRAME: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Weight of the CTC prefix score in the joint score.
    pub gamma: f64,
    /// Weight applied to bias-token probabilities.
    pub mu: f64,
    /// Most tokens a hypothesis may hold, eos excluded.
    pub max_len: usize,
    pub mode: DecodeMode,
    pub nbest: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            gamma: 0.3,
            mu: 0.8,
            max_len: 40,
            mode: DecodeMode::Attention,
            nbest: 1,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma={} outside [0, 1]", self.gamma)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu={} must be non-negative", self.mu)));
        }
        if self.nbest == 0 {
            return Err(Error::Config("nbest must be at least 1".into()));
        }
        Ok(())
    }
}

impl DecodeConfig {
    pub fn write_kv(&self, w: &mut kv::Writer) {
        w.put("beam", self.beam)
            .put("gamma", self.gamma)
            .put("mu", self.mu)
            .put("max_len", self.max_len)
            .put("decode_mode", self.mode)
            .put("nbest", self.nbest);
    }

    /// Applies one key; `Ok(false)` when the key is not a decoding key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<bool> {
        match key {
            "beam" => self.beam = kv::value(key, raw)?,
            "gamma" => self.gamma = kv::value(key, raw)?,
            "mu" => self.mu = kv::value(key, raw)?,
            "max_len" => self.max_len = kv::value(key, raw)?,
            "decode_mode" => self.mode = raw.parse()?,
            "nbest" => self.nbest = kv::value(key, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<Token>,
    /// Primary decoder log-probability.
    pub beta: f64,
    /// CTC prefix log-probability, when the CTC term is in use.
    pub beta_ctc: Option<f64>,
    pub beta_joint: f64,
    pub finished: bool,
}

/// `(1-γ)·β + γ·β_ctc`, or `β` when no CTC score exists.
pub fn joint_score(beta: f64, beta_ctc: Option<f64>, gamma: f64) -> f64 {
    match beta_ctc {
        Some(c) => (1.0 - gamma) * beta + gamma * c,
        None => beta,
    }
}

/// Encoded inputs shared by every decoding mode.
pub struct DecodeContext<'a> {
    pub model: &'a Model,
    pub audio: Tensor,
    pub phrases: Option<PhraseEmbeddings>,
    pub weights: Vec<f64>,
}

impl<'a> DecodeContext<'a> {
    /// `bias = None` disables the bias machinery entirely.
    pub fn new(model: &'a Model, features: &FeatureSequence, bias: Option<&BiasList>, mu: f64) -> Result<Self> {
        let audio = model.encode_audio(features)?;
        let phrases = bias.map(|b| model.encode_bias(b)).transpose()?;
        let n = phrases.as_ref().map_or(0, PhraseEmbeddings::len);
        let weights = bias_weight_vector(model.vocab_size(), n, mu)?;
        Ok(Self {
            model,
            audio,
            phrases,
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    /// Weighted per-frame CTC log-probabilities, `T × (K+N)` row-major.
    pub fn ctc_log_probs(&self) -> Result<Vec<f64>> {
        let logits = self.model.ctc_logits(&self.audio, self.phrases.as_ref())?;
        let mut out = Vec::with_capacity(logits.numel());
        for t in 0..logits.rows() {
            let row: Vec<f64> = logits.row(t).iter().map(|&x| f64::from(x)).collect();
            out.extend(weighted_log_softmax(&row, &self.weights)?);
        }
        Ok(out)
    }
}

/// Decodes one utterance; hypotheses come back best first.
pub fn decode_utterance(
    model: &Model,
    features: &FeatureSequence,
    bias: Option<&BiasList>,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let ctx = DecodeContext::new(model, features, bias, cfg.mu)?;
    match cfg.mode {
        DecodeMode::Attention => beam_search_attention(&ctx, cfg),
        DecodeMode::Rnnt => rnnt_decode(&ctx, cfg),
        DecodeMode::Ctc => Ok(vec![ctc_greedy(&ctx)?]),
    }
}

/// Best label per frame, repeats merged and blanks removed.
pub fn ctc_greedy(ctx: &DecodeContext<'_>) -> Result<Hypothesis> {
    let lp = ctx.ctc_log_probs()?;
    let w = ctx.width();
    let vocab = &ctx.model.vocab;
    let blank = vocab.blank_id();
    let (mut tokens, mut beta, mut prev) = (Vec::new(), 0.0, None);
    for row in lp.chunks(w) {
        let (k, &best) = row
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (j, v)| if *v > *acc.1 { (j, v) } else { acc });
        beta += best;
        if k != blank && Some(k) != prev && k != vocab.sos_eos_id() {
            tokens.push(Token::from_expanded(k, vocab));
        }
        prev = Some(k);
    }
    Ok(Hypothesis {
        tokens,
        beta,
        beta_ctc: None,
        beta_joint: beta,
        finished: true,
    })
}

/// Space-joined display labels, bias tokens as `<phrase>`.
pub fn labels(tokens: &[Token], dv: &DynamicVocabulary<'_>) -> Result<String> {
    let shown: Result<Vec<String>> = tokens.iter().map(|&t| dv.display(t)).collect();
    Ok(shown?.join(" "))
}

/// Hypothesis TSV line: `utt_id, [rank,] text, labels, beta_joint`.
pub fn format_hypothesis(utt_id: &str, rank: Option<usize>, hyp: &Hypothesis, dv: &DynamicVocabulary<'_>) -> Result<String> {
    let text = dv.detokenize(&hyp.tokens)?;
    let labels = labels(&hyp.tokens, dv)?;
    Ok(match rank {
        Some(r) => format!("{utt_id}\t{r}\t{text}\t{labels}\t{}", hyp.beta_joint),
        None => format!("{utt_id}\t{text}\t{labels}\t{}", hyp.beta_joint),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_identity_and_endpoint() {
        let j = joint_score(-2.0, Some(-4.0), 0.3);
        assert_eq!(j, 0.7 * -2.0 + 0.3 * -4.0);
        assert_eq!(joint_score(-2.0, None, 0.3), -2.0);
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        let bad = DecodeConfig {
            gamma: 1.5,
            ..DecodeConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("rnnt".parse::<DecodeMode>().unwrap(), DecodeMode::Rnnt);
    }
}
