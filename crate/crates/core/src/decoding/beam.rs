use std::cmp::Ordering;

use super::ctc_prefix::{CtcPrefixScorer, CtcPrefixState};
use super::{joint_score, weighted_log_softmax, DecodeConfig, DecodeContext, Hypothesis};
use crate::error::Result;
use crate::model::Token;
use crate::numerics::{Tape, Tensor};

/// Weighted next-token log-probabilities after `sos + prefix`.
pub(crate) fn next_log_probs(ctx: &DecodeContext<'_>, prefix: &[Token]) -> Result<Vec<f64>> {
    let model = ctx.model;
    let dec = model.attention()?;
    let mut tape = Tape::<f32>::new(&model.params);
    let h = tape.constant(&ctx.audio);
    let v = ctx.phrases.as_ref().map(|p| tape.constant(&p.rows));
    let table = match v {
        Some(v) => v,
        None => tape.constant(&Tensor::zeros(&[0, model.config.d])),
    };
    let e = dec.embed(&mut tape, prefix, table)?;
    let u = dec.main_block(&mut tape, h, e)?;
    let last = tape.slice_rows(u, prefix.len(), 1)?;
    let s = dec.output.forward(&mut tape, last, v)?;
    let alpha: Vec<f64> = tape.value(s).data().iter().map(|&x| f64::from(x)).collect();
    weighted_log_softmax(&alpha, &ctx.weights)
}

struct Candidate {
    tokens: Vec<Token>,
    /// Expanded indices, eos appended when finished; the tie-break key.
    key: Vec<usize>,
    beta: f64,
    beta_ctc: Option<f64>,
    joint: f64,
    ctc: Option<CtcPrefixState>,
    finished: bool,
    at_cap: bool,
}

impl Candidate {
    fn rank(a: &Self, b: &Self) -> Ordering {
        b.joint.total_cmp(&a.joint).then_with(|| a.key.cmp(&b.key))
    }

    fn into_hypothesis(self) -> Hypothesis {
        Hypothesis {
            tokens: self.tokens,
            beta: self.beta,
            beta_ctc: self.beta_ctc,
            beta_joint: self.joint,
            finished: self.finished,
        }
    }
}

/// Label-synchronous beam search over the expanded vocabulary.
///
/// Every label except blank is a candidate at each step; eos ends a
/// hypothesis. The `beam` best candidates survive each step; a hypothesis
/// reaching `max_len` tokens without eos is kept as unfinished. The search
/// stops once the best ended hypothesis outscores every live one.
pub fn beam_search_attention(ctx: &DecodeContext<'_>, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    let vocab = &ctx.model.vocab;
    let (blank, eos) = (vocab.blank_id(), vocab.sos_eos_id());
    let width = ctx.width();
    let scorer = if cfg.gamma > 0.0 {
        Some(CtcPrefixScorer::new(ctx.ctc_log_probs()?, ctx.audio.rows(), width, blank)?)
    } else {
        None
    };

    let mut live = vec![Candidate {
        tokens: Vec::new(),
        key: Vec::new(),
        beta: 0.0,
        beta_ctc: scorer.as_ref().map(|_| 0.0),
        joint: 0.0,
        ctc: scorer.as_ref().map(CtcPrefixScorer::initial),
        finished: false,
        at_cap: cfg.max_len == 0,
    }];
    let mut ended: Vec<Candidate> = Vec::new();
    if cfg.max_len == 0 {
        ended.append(&mut live);
    }

    while !live.is_empty() {
        let mut candidates = Vec::new();
        for hyp in &live {
            let lp = next_log_probs(ctx, &hyp.tokens)?;
            for (j, &logp) in lp.iter().enumerate() {
                if j == blank || logp == f64::NEG_INFINITY {
                    continue;
                }
                let finished = j == eos;
                let (beta_ctc, ctc) = match (&scorer, &hyp.ctc) {
                    (Some(s), Some(state)) if finished => (Some(s.full(state)), None),
                    (Some(s), Some(state)) => {
                        let (psi, next) = s.extend(state, j)?;
                        (Some(psi), Some(next))
                    }
                    _ => (None, None),
                };
                let beta = hyp.beta + logp;
                let joint = joint_score(beta, beta_ctc, cfg.gamma);
                if joint == f64::NEG_INFINITY || joint.is_nan() {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                let mut key = hyp.key.clone();
                key.push(j);
                if !finished {
                    tokens.push(Token::from_expanded(j, vocab));
                }
                let at_cap = !finished && tokens.len() >= cfg.max_len;
                candidates.push(Candidate {
                    tokens,
                    key,
                    beta,
                    beta_ctc,
                    joint,
                    ctc,
                    finished,
                    at_cap,
                });
            }
        }
        candidates.sort_by(Candidate::rank);
        candidates.truncate(cfg.beam);
        live.clear();
        for c in candidates {
            if c.finished || c.at_cap {
                ended.push(c);
            } else {
                live.push(c);
            }
        }
        let best_ended = ended.iter().map(|c| c.joint).fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|c| c.joint <= best_ended) {
            break;
        }
    }
    ended.sort_by(Candidate::rank);
    ended.truncate(cfg.beam.max(cfg.nbest));
    Ok(ended.into_iter().map(Candidate::into_hypothesis).collect())
}
