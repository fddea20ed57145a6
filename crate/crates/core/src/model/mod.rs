//! Audio encoder, bias encoder and the expanded decoders.
//!
//! Hidden-state matrices are stored time-major: `H` is `T × d`, phrase
//! embeddings are `N × d` and score vectors are rows of width `K + N`.

mod bias_list;
pub mod checkpoint;
mod config;
mod decoders;
mod encoders;
mod heads;
pub mod layers;
mod vocab;

pub use bias_list::{BiasList, PhraseEmbeddings};
pub use config::{Arch, ModelConfig};
pub use decoders::{AttentionDecoder, Transducer};
pub use encoders::{AudioEncoder, BiasEncoder};
pub use heads::{ExpandedEmbedding, ExpandedOutput};
pub use vocab::{StaticVocabulary, Token, CONTINUATION};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::rng::substream;
use layers::Builder;

/// Raw features of one utterance, `T_raw × feat_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub utt_id: String,
    pub frames: Tensor,
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Attention(AttentionDecoder),
    Transducer(Transducer),
}

/// Complete model: parameters plus the layer structure that indexes them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: StaticVocabulary,
    pub params: ParamStore,
    pub audio: AudioEncoder,
    pub bias: BiasEncoder,
    pub ctc: ExpandedOutput,
    pub decoder: Decoder,
}

impl Model {
    /// Fresh model with seeded uniform initialisation.
    pub fn new(config: ModelConfig, vocab: StaticVocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size={} but the vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut params = ParamStore::new();
        let mut rng = substream(config.seed, "init");
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let audio = AudioEncoder::new(&mut b, &config);
        let bias = BiasEncoder::new(&mut b, &config);
        let ctc = ExpandedOutput::new(&mut b, "ctc", config.d, config.vocab_size, config.d);
        let decoder = match config.arch {
            Arch::Attention => Decoder::Attention(AttentionDecoder::new(&mut b, &config, vocab.sos_eos_id())),
            Arch::Transducer => Decoder::Transducer(Transducer::new(&mut b, &config, vocab.sos_eos_id())),
        };
        Ok(Self {
            config,
            vocab,
            params,
            audio,
            bias,
            ctc,
            decoder,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn attention(&self) -> Result<&AttentionDecoder> {
        match &self.decoder {
            Decoder::Attention(a) => Ok(a),
            Decoder::Transducer(_) => Err(Error::Config("model has a transducer decoder".into())),
        }
    }

    pub fn transducer(&self) -> Result<&Transducer> {
        match &self.decoder {
            Decoder::Transducer(t) => Ok(t),
            Decoder::Attention(_) => Err(Error::Config("model has an attention decoder".into())),
        }
    }

    fn tape(&self) -> Tape<'_, f32> {
        Tape::new(&self.params)
    }

    /// `H = AudioEnc(X)`, `T × d`.
    pub fn encode_audio(&self, features: &FeatureSequence) -> Result<Tensor> {
        let mut tape = self.tape();
        let h = self.audio.forward(&mut tape, &features.frames)?;
        Ok(tape.value(h).clone())
    }

    pub fn encode_bias(&self, list: &BiasList) -> Result<PhraseEmbeddings> {
        let mut tape = self.tape();
        let v = self
            .bias
            .forward(&mut tape, list, self.vocab.blank_id(), self.vocab.sos_eos_id())?;
        Ok(PhraseEmbeddings {
            rows: tape.value(v).clone(),
        })
    }

    fn expanded_embedding(&self) -> &ExpandedEmbedding {
        match &self.decoder {
            Decoder::Attention(a) => &a.embedding,
            Decoder::Transducer(t) => &t.embedding,
        }
    }

    /// Decoder input embedding of one expanded token (`1 × d`).
    pub fn embed_expanded(&self, token: Token, phrases: &PhraseEmbeddings) -> Result<Tensor> {
        let mut tape = self.tape();
        let v = tape.constant(&phrases.rows);
        let e = self.expanded_embedding().forward(&mut tape, &[token], v)?;
        Ok(tape.value(e).clone())
    }

    /// Decoder inputs for `sos + prefix`, positions included.
    pub fn embed_prefix(&self, prefix: &[Token], phrases: &PhraseEmbeddings) -> Result<Tensor> {
        let dec = self.attention()?;
        let mut tape = self.tape();
        let v = tape.constant(&phrases.rows);
        let e = dec.embed(&mut tape, prefix, v)?;
        Ok(tape.value(e).clone())
    }

    /// Attention-decoder hidden states for `sos + prefix`, one row per
    /// position.
    pub fn decoder_states(&self, audio: &Tensor, prefix: &[Token], phrases: &PhraseEmbeddings) -> Result<Tensor> {
        let dec = self.attention()?;
        let mut tape = self.tape();
        let h = tape.constant(audio);
        let v = tape.constant(&phrases.rows);
        let e = dec.embed(&mut tape, prefix, v)?;
        let u = dec.main_block(&mut tape, h, e)?;
        Ok(tape.value(u).clone())
    }

    /// `u_i = MainBlock(H, E_prefix)` for an already embedded prefix; returns
    /// the state at the last position.
    pub fn decoder_step(&self, audio: &Tensor, embedded_prefix: &Tensor) -> Result<Tensor> {
        let dec = self.attention()?;
        let mut tape = self.tape();
        let h = tape.constant(audio);
        let e = tape.constant(embedded_prefix);
        let u = dec.main_block(&mut tape, h, e)?;
        let last = tape.dims(u).0 - 1;
        let row = tape.slice_rows(u, last, 1)?;
        Ok(tape.value(row).clone())
    }

    /// Expanded output-layer scores of the attention decoder for state rows.
    pub fn score_expanded(&self, u: &Tensor, phrases: &PhraseEmbeddings) -> Result<Tensor> {
        let dec = self.attention()?;
        let mut tape = self.tape();
        let u = tape.constant(u);
        let v = tape.constant(&phrases.rows);
        let s = dec.output.forward(&mut tape, u, Some(v))?;
        Ok(tape.value(s).clone())
    }

    /// Unnormalised CTC scores, `T × (K+N)`, for encoder output `audio`;
    /// `None` skips the bias branch.
    pub fn ctc_logits(&self, audio: &Tensor, phrases: Option<&PhraseEmbeddings>) -> Result<Tensor> {
        let mut tape = self.tape();
        let h = tape.constant(audio);
        let v = phrases.map(|p| tape.constant(&p.rows));
        let s = self.ctc.forward(&mut tape, h, v)?;
        Ok(tape.value(s).clone())
    }

    /// Per-frame CTC log-probabilities over the expanded vocabulary,
    /// `T × (K+N)`.
    pub fn ctc_frame_scores(&self, audio: &Tensor, phrases: &PhraseEmbeddings) -> Result<Tensor> {
        let mut tape = self.tape();
        let h = tape.constant(audio);
        let v = tape.constant(&phrases.rows);
        let s = self.ctc.forward(&mut tape, h, Some(v))?;
        let s = tape.log_softmax_rows(s);
        Ok(tape.value(s).clone())
    }

    /// Transducer log-probability lattice, shape `T × (S+1) × (K+N)`.
    pub fn rnnt_joint_scores(&self, audio: &Tensor, prefix: &[Token], phrases: &PhraseEmbeddings) -> Result<Tensor> {
        let tr = self.transducer()?;
        let mut tape = self.tape();
        let h = tape.constant(audio);
        let v = tape.constant(&phrases.rows);
        let g = tr.predict(&mut tape, prefix, v)?;
        let z = tr.joint(&mut tape, h, g, v)?;
        let z = tape.log_softmax_rows(z);
        let width = tape.dims(z).1;
        tape.value(z).clone().reshape(vec![audio.rows(), prefix.len() + 1, width])
    }
}
