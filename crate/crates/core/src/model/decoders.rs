use super::config::ModelConfig;
use super::heads::{ExpandedEmbedding, ExpandedOutput};
use super::layers::{add_positions, causal_mask, Builder, DecoderBlock, LayerNorm, Linear, Lstm, LstmState};
use super::vocab::Token;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Transformer decoder over the expanded vocabulary.
#[derive(Clone, Debug)]
pub struct AttentionDecoder {
    pub embedding: ExpandedEmbedding,
    pub blocks: Vec<DecoderBlock>,
    pub final_norm: LayerNorm,
    pub output: ExpandedOutput,
    sos: usize,
}

impl AttentionDecoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig, sos: usize) -> Self {
        Self {
            embedding: ExpandedEmbedding::new(b, "decoder.input", cfg.vocab_size, cfg.d),
            blocks: (0..cfg.decoder_blocks)
                .map(|i| DecoderBlock::new(b, &format!("decoder.block{i}"), cfg.d, cfg.heads, cfg.ff_dim))
                .collect(),
            final_norm: LayerNorm::new(b, "decoder.final_norm", cfg.d),
            output: ExpandedOutput::new(b, "decoder.output", cfg.d, cfg.vocab_size, cfg.d),
            sos,
        }
    }

    /// Embeds `sos` followed by `prefix`, with positions added.
    pub fn embed<T: Scalar>(&self, tape: &mut Tape<'_, T>, prefix: &[Token], phrases: Var) -> Result<Var> {
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(Token::Normal(self.sos));
        inputs.extend_from_slice(prefix);
        let e = self.embedding.forward(tape, &inputs, phrases)?;
        add_positions(tape, e)
    }

    /// Hidden states for every position of an embedded prefix.
    pub fn main_block<T: Scalar>(&self, tape: &mut Tape<'_, T>, audio: Var, embedded: Var) -> Result<Var> {
        let len = tape.dims(embedded).0;
        if len == 0 {
            return Err(Error::Domain("decoder prefix is empty".into()));
        }
        let mask = causal_mask(len);
        let mut x = embedded;
        for block in &self.blocks {
            x = block.forward(tape, x, audio, &mask)?;
        }
        self.final_norm.forward(tape, x)
    }

    /// `(len+1) × (K+N)` teacher-forced scores for `sos + prefix`.
    pub fn scores<T: Scalar>(&self, tape: &mut Tape<'_, T>, audio: Var, phrases: Var, prefix: &[Token]) -> Result<Var> {
        let e = self.embed(tape, prefix, phrases)?;
        let u = self.main_block(tape, audio, e)?;
        self.output.forward(tape, u, Some(phrases))
    }
}

/// Prediction network (one LSTM layer) plus joint network.
#[derive(Clone, Debug)]
pub struct Transducer {
    pub embedding: ExpandedEmbedding,
    pub lstm: Lstm,
    pub encoder_proj: Linear,
    pub predictor_proj: Linear,
    pub output: ExpandedOutput,
    start: usize,
}

impl Transducer {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig, start: usize) -> Self {
        Self {
            embedding: ExpandedEmbedding::new(b, "transducer.input", cfg.vocab_size, cfg.d),
            lstm: Lstm::new(b, "transducer.lstm", cfg.d, cfg.d),
            encoder_proj: Linear::new(b, "transducer.joint_encoder", cfg.d, cfg.joint_dim),
            predictor_proj: Linear::new(b, "transducer.joint_predictor", cfg.d, cfg.joint_dim),
            output: ExpandedOutput::new(b, "transducer.output", cfg.joint_dim, cfg.vocab_size, cfg.d),
            start,
        }
    }

    /// Prediction states `g_0..g_S` for a label sequence (`(S+1) × d`).
    pub fn predict<T: Scalar>(&self, tape: &mut Tape<'_, T>, labels: &[Token], phrases: Var) -> Result<Var> {
        let mut inputs = Vec::with_capacity(labels.len() + 1);
        inputs.push(Token::Normal(self.start));
        inputs.extend_from_slice(labels);
        let e = self.embedding.forward(tape, &inputs, phrases)?;
        Ok(self.lstm.forward(tape, e)?.0)
    }

    pub fn start_token(&self) -> Token {
        Token::Normal(self.start)
    }

    /// Advances the prediction network by one label from a stored state.
    pub fn predict_step<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        label: Token,
        phrases: Var,
        state: Option<(&Tensor<T>, &Tensor<T>)>,
    ) -> Result<LstmState> {
        let e = self.embedding.forward(tape, &[label], phrases)?;
        let state = match state {
            Some((h, c)) => LstmState {
                h: tape.constant_t(h.clone()),
                c: tape.constant_t(c.clone()),
            },
            None => self.lstm.zero_state(tape),
        };
        self.lstm.step(tape, e, &state)
    }

    /// Raw joint scores for every `(t, s)` pair, row `t·(S+1) + s`.
    pub fn joint<T: Scalar>(&self, tape: &mut Tape<'_, T>, audio: Var, predicted: Var, phrases: Var) -> Result<Var> {
        self.joint_with(tape, audio, predicted, Some(phrases))
    }

    /// [`Self::joint`] with the bias branch optional.
    pub fn joint_with<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        audio: Var,
        predicted: Var,
        phrases: Option<Var>,
    ) -> Result<Var> {
        let a = self.encoder_proj.forward(tape, audio)?;
        let p = self.predictor_proj.forward(tape, predicted)?;
        let z = tape.outer_add_rows(a, p)?;
        let z = tape.tanh(z);
        self.output.forward(tape, z, phrases)
    }
}
