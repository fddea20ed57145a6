use super::{attention_nll_tape, attention_targets, ctc_loss_tape, rnnt_loss_tape, ExpandedReference};
use crate::error::{Error, Result};
use crate::model::{Decoder, Model};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Hybrid loss of one utterance on a tape, with its two components.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub primary: f64,
    /// `None` when `λ = 0` and the CTC branch is skipped.
    pub ctc: Option<f64>,
}

/// `(1-λ)·L_primary + λ·L_ctc` for one utterance. `phrases` is the batch's
/// `N × d` phrase matrix, already on the tape.
pub fn utterance_objective<T: Scalar>(
    model: &Model,
    tape: &mut Tape<'_, T>,
    frames: &Tensor,
    phrases: Var,
    reference: &ExpandedReference,
    lambda: f64,
) -> Result<Objective> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda={lambda} outside [0, 1]")));
    }
    reference.validate(tape.dims(phrases).0)?;
    let vocab = &model.vocab;
    let blank = vocab.blank_id();
    let audio = model.audio.forward(tape, frames)?;

    let primary = match &model.decoder {
        Decoder::Attention(dec) => {
            let scores = dec.scores(tape, audio, phrases, &reference.tokens)?;
            attention_nll_tape(tape, scores, &attention_targets(reference, vocab))?
        }
        Decoder::Transducer(tr) => {
            let g = tr.predict(tape, &reference.tokens, phrases)?;
            let z = tr.joint(tape, audio, g, phrases)?;
            let lp = tape.log_softmax_rows(z);
            rnnt_loss_tape(tape, lp, &reference.labels(vocab), blank)?
        }
    };
    let primary_value = tape.scalar_value(primary).to_f64().unwrap();

    if lambda == 0.0 {
        return Ok(Objective {
            total: primary,
            primary: primary_value,
            ctc: None,
        });
    }
    let scores = model.ctc.forward(tape, audio, Some(phrases))?;
    let lp = tape.log_softmax_rows(scores);
    let ctc = ctc_loss_tape(tape, lp, &reference.labels(vocab), blank)?;
    let ctc_value = tape.scalar_value(ctc).to_f64().unwrap();
    let a = tape.scale(primary, T::lit(1.0 - lambda));
    let b = tape.scale(ctc, T::lit(lambda));
    Ok(Objective {
        total: tape.add(a, b)?,
        primary: primary_value,
        ctc: Some(ctc_value),
    })
}
