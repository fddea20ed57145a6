use std::collections::HashSet;

use super::ctc_prefix::{CtcPrefixScorer, CtcPrefixState};
use super::{joint_score, weighted_log_softmax, DecodeConfig, DecodeContext, Hypothesis, MAX_SYMBOLS_PER_FRAME};
use crate::error::Result;
use crate::model::{Token, Transducer};
use crate::numerics::{Tape, Tensor};

/// Source of transducer label distributions. Labels are expanded indices.
pub trait TransducerScorer {
    type State: Clone;

    fn frames(&self) -> usize;
    fn blank(&self) -> usize;
    /// Whether label `j` may be emitted (blank never is).
    fn emittable(&self, j: usize) -> bool;
    fn start(&self) -> Result<Self::State>;
    fn advance(&self, state: &Self::State, label: usize) -> Result<Self::State>;
    fn log_probs(&self, t: usize, state: &Self::State) -> Result<Vec<f64>>;
}

/// Prediction-network output and LSTM cell after a label history.
#[derive(Clone, Debug)]
pub struct PredictorState {
    h: Tensor,
    c: Tensor,
}

/// The model's prediction and joint networks as a [`TransducerScorer`].
pub struct ModelScorer<'c, 'm> {
    ctx: &'c DecodeContext<'m>,
    tr: &'m Transducer,
    empty: Tensor,
}

impl<'c, 'm> ModelScorer<'c, 'm> {
    pub fn new(ctx: &'c DecodeContext<'m>) -> Result<Self> {
        Ok(Self {
            ctx,
            tr: ctx.model.transducer()?,
            empty: Tensor::zeros(&[0, ctx.model.config.d]),
        })
    }

    fn step(&self, label: Token, prev: Option<&PredictorState>) -> Result<PredictorState> {
        let mut tape = Tape::<f32>::new(&self.ctx.model.params);
        let v = tape.constant(self.ctx.phrases.as_ref().map_or(&self.empty, |p| &p.rows));
        let s = self.tr.predict_step(&mut tape, label, v, prev.map(|p| (&p.h, &p.c)))?;
        Ok(PredictorState {
            h: tape.value(s.h).clone(),
            c: tape.value(s.c).clone(),
        })
    }
}

impl TransducerScorer for ModelScorer<'_, '_> {
    type State = PredictorState;

    fn frames(&self) -> usize {
        self.ctx.audio.rows()
    }

    fn blank(&self) -> usize {
        self.ctx.model.vocab.blank_id()
    }

    fn emittable(&self, j: usize) -> bool {
        let vocab = &self.ctx.model.vocab;
        j != vocab.blank_id() && j != vocab.sos_eos_id()
    }

    fn start(&self) -> Result<PredictorState> {
        self.step(self.tr.start_token(), None)
    }

    fn advance(&self, state: &PredictorState, label: usize) -> Result<PredictorState> {
        self.step(Token::from_expanded(label, &self.ctx.model.vocab), Some(state))
    }

    fn log_probs(&self, t: usize, state: &PredictorState) -> Result<Vec<f64>> {
        let mut tape = Tape::<f32>::new(&self.ctx.model.params);
        let row = Tensor::new(vec![1, self.ctx.audio.cols()], self.ctx.audio.row(t).to_vec())?;
        let h = tape.constant(&row);
        let g = tape.constant(&state.h);
        let v = self.ctx.phrases.as_ref().map(|p| tape.constant(&p.rows));
        let z = self.tr.joint_with(&mut tape, h, g, v)?;
        let alpha: Vec<f64> = tape.value(z).data().iter().map(|&x| f64::from(x)).collect();
        weighted_log_softmax(&alpha, &self.ctx.weights)
    }
}

/// Transducer decoding of one utterance with the model's networks; with
/// `γ > 0` hypotheses are also ranked by their CTC prefix score.
pub fn rnnt_decode(ctx: &DecodeContext<'_>, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    let scorer = ModelScorer::new(ctx)?;
    let ctc = if cfg.gamma > 0.0 {
        let blank = ctx.model.vocab.blank_id();
        Some(CtcPrefixScorer::new(ctx.ctc_log_probs()?, ctx.audio.rows(), ctx.width(), blank)?)
    } else {
        None
    };
    let vocab = &ctx.model.vocab;
    let found = transducer_search(&scorer, cfg.beam, cfg.nbest, ctc.as_ref(), cfg.gamma)?;
    Ok(found
        .into_iter()
        .map(|h| Hypothesis {
            tokens: h.labels.into_iter().map(|j| Token::from_expanded(j, vocab)).collect(),
            beta: h.beta,
            beta_ctc: h.beta_ctc,
            beta_joint: h.joint,
            finished: true,
        })
        .collect())
}

/// A transducer search result over expanded label indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TransducerHypothesis {
    pub labels: Vec<usize>,
    pub beta: f64,
    pub beta_ctc: Option<f64>,
    pub joint: f64,
}

/// Greedy (`beam = 1`) or time-synchronous beam search with at most
/// [`MAX_SYMBOLS_PER_FRAME`] labels per frame, best first.
pub fn transducer_search<S: TransducerScorer>(
    scorer: &S,
    beam: usize,
    nbest: usize,
    ctc: Option<&CtcPrefixScorer>,
    gamma: f64,
) -> Result<Vec<TransducerHypothesis>> {
    if beam <= 1 {
        let (labels, beta) = greedy(scorer)?;
        let beta_ctc = match ctc {
            Some(c) => {
                let mut state = c.initial();
                for &j in &labels {
                    state = c.extend(&state, j)?.1;
                }
                Some(c.full(&state))
            }
            None => None,
        };
        let joint = joint_score(beta, beta_ctc, gamma);
        return Ok(vec![TransducerHypothesis {
            labels,
            beta,
            beta_ctc,
            joint,
        }]);
    }
    beam_search(scorer, beam, nbest, ctc, gamma)
}

fn greedy<S: TransducerScorer>(s: &S) -> Result<(Vec<usize>, f64)> {
    let blank = s.blank();
    let mut state = s.start()?;
    let (mut labels, mut beta) = (Vec::new(), 0.0);
    for t in 0..s.frames() {
        for emitted in 0..=MAX_SYMBOLS_PER_FRAME {
            let lp = s.log_probs(t, &state)?;
            let best = (0..lp.len())
                .filter(|&j| s.emittable(j))
                .fold(None, |acc: Option<usize>, j| match acc {
                    Some(b) if lp[b] >= lp[j] => Some(b),
                    _ => Some(j),
                });
            match best {
                Some(k) if emitted < MAX_SYMBOLS_PER_FRAME && lp[k] > lp[blank] => {
                    beta += lp[k];
                    labels.push(k);
                    state = s.advance(&state, k)?;
                }
                _ => {
                    beta += lp[blank];
                    break;
                }
            }
        }
    }
    Ok((labels, beta))
}

#[derive(Clone)]
struct Beam<St> {
    labels: Vec<usize>,
    beta: f64,
    ctc: Option<CtcPrefixState>,
    beta_ctc: Option<f64>,
    joint: f64,
    state: St,
}

fn rank<St>(a: &Beam<St>, b: &Beam<St>) -> std::cmp::Ordering {
    b.joint.total_cmp(&a.joint).then_with(|| a.labels.cmp(&b.labels))
}

fn beam_search<S: TransducerScorer>(
    s: &S,
    width: usize,
    nbest: usize,
    ctc: Option<&CtcPrefixScorer>,
    gamma: f64,
) -> Result<Vec<TransducerHypothesis>> {
    let blank = s.blank();
    let mut beams = vec![Beam {
        labels: Vec::new(),
        beta: 0.0,
        ctc: ctc.map(CtcPrefixScorer::initial),
        beta_ctc: ctc.map(|_| 0.0),
        joint: 0.0,
        state: s.start()?,
    }];
    for t in 0..s.frames() {
        let mut active = beams;
        let mut done: Vec<Beam<S::State>> = Vec::new();
        for emitted in 0..=MAX_SYMBOLS_PER_FRAME {
            let mut grow: Vec<(usize, usize, f64)> = Vec::new();
            for (i, b) in active.iter().enumerate() {
                let lp = s.log_probs(t, &b.state)?;
                if lp[blank] > f64::NEG_INFINITY {
                    let beta = b.beta + lp[blank];
                    done.push(Beam {
                        beta,
                        joint: joint_score(beta, b.beta_ctc, gamma),
                        ..b.clone()
                    });
                }
                if emitted < MAX_SYMBOLS_PER_FRAME {
                    for j in (0..lp.len()).filter(|&j| s.emittable(j) && lp[j] > f64::NEG_INFINITY) {
                        grow.push((i, j, b.beta + lp[j]));
                    }
                }
            }
            done.sort_by(rank);
            done.truncate(width);
            let mut next = Vec::with_capacity(grow.len());
            for (i, j, beta) in grow {
                let parent = &active[i];
                let (beta_ctc, ctc_state) = match (ctc, &parent.ctc) {
                    (Some(c), Some(state)) => {
                        let (psi, next) = c.extend(state, j)?;
                        (Some(psi), Some(next))
                    }
                    _ => (None, None),
                };
                let joint = joint_score(beta, beta_ctc, gamma);
                if joint.is_nan() || joint == f64::NEG_INFINITY {
                    continue;
                }
                let mut labels = parent.labels.clone();
                labels.push(j);
                next.push((i, labels, beta, ctc_state, beta_ctc, joint));
            }
            // Extensions already below the `width`-th frame-final score can
            // only fall further.
            let floor = if done.len() == width { done[width - 1].joint } else { f64::NEG_INFINITY };
            next.retain(|c| c.5 > floor);
            next.sort_by(|a, b| b.5.total_cmp(&a.5).then_with(|| a.1.cmp(&b.1)));
            next.truncate(width);
            if next.is_empty() {
                break;
            }
            let mut grown = Vec::with_capacity(next.len());
            for (i, labels, beta, ctc_state, beta_ctc, joint) in next {
                let j = *labels.last().unwrap();
                grown.push(Beam {
                    state: s.advance(&active[i].state, j)?,
                    labels,
                    beta,
                    ctc: ctc_state,
                    beta_ctc,
                    joint,
                });
            }
            active = grown;
        }
        // Identical label histories keep their best-scoring copy.
        let mut seen = HashSet::new();
        done.sort_by(rank);
        done.retain(|b| seen.insert(b.labels.clone()));
        done.truncate(width);
        beams = done;
        if beams.is_empty() {
            break;
        }
    }
    // Completed sequences are scored by their full CTC probability.
    let mut out: Vec<TransducerHypothesis> = beams
        .into_iter()
        .map(|b| {
            let beta_ctc = match (ctc, &b.ctc) {
                (Some(c), Some(state)) => Some(c.full(state)),
                _ => None,
            };
            TransducerHypothesis {
                joint: joint_score(b.beta, beta_ctc, gamma),
                labels: b.labels,
                beta: b.beta,
                beta_ctc,
            }
        })
        .collect();
    out.sort_by(|a, b| b.joint.total_cmp(&a.joint).then_with(|| a.labels.cmp(&b.labels)));
    out.truncate(width.max(nbest));
    Ok(out)
}
