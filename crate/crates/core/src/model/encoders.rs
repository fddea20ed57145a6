use super::bias_list::BiasList;
use super::config::ModelConfig;
use super::layers::{add_positions, causal_mask, segment_positions, Builder, Embedding, EncoderBlock, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Two strided projections, a linear projection, then transformer blocks.
///
/// Each subsampling layer is a convolution whose kernel equals its stride,
/// so an output step only sees the raw frames it covers.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub subsample1: Linear,
    pub subsample2: Linear,
    pub projection: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: LayerNorm,
    strides: (usize, usize),
    causal: bool,
}

impl AudioEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let strides = cfg.strides();
        let d = cfg.d;
        Self {
            subsample1: Linear::new(b, "audio.subsample1", strides.0 * cfg.feat_dim, d),
            subsample2: Linear::new(b, "audio.subsample2", strides.1 * d, d),
            projection: Linear::new(b, "audio.projection", d, d),
            blocks: (0..cfg.audio_blocks)
                .map(|i| EncoderBlock::new(b, &format!("audio.block{i}"), d, cfg.heads, cfg.ff_dim))
                .collect(),
            final_norm: LayerNorm::new(b, "audio.final_norm", d),
            strides,
            causal: cfg.causal,
        }
    }

    /// Output length for `raw` input frames.
    pub fn output_len(&self, raw: usize) -> usize {
        raw / self.strides.0 / self.strides.1
    }

    /// Encodes `T_raw × feat_dim` frames into `T × d` hidden states.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, frames: &Tensor) -> Result<Var> {
        let (raw, feat) = frames.dims2();
        let (s1, s2) = self.strides;
        let out_len = self.output_len(raw);
        if out_len == 0 {
            return Err(Error::Domain(format!(
                "{raw} frames is shorter than the subsampling stride {}",
                s1 * s2
            )));
        }
        if feat * s1 != self.subsample1.in_dim {
            return Err(Error::Dimension(format!(
                "features have {feat} dims, encoder expects {}",
                self.subsample1.in_dim / s1
            )));
        }
        let first = raw / s1;
        let stacked = Tensor::new(vec![first, s1 * feat], frames.data()[..first * s1 * feat].to_vec())?;
        let x = tape.constant(&stacked);
        let x = self.subsample1.forward(tape, x)?;
        let x = tape.relu(x);
        let d = tape.dims(x).1;
        let x = tape.slice_rows(x, 0, out_len * s2)?;
        let x = tape.reshape(x, out_len, s2 * d)?;
        let x = self.subsample2.forward(tape, x)?;
        let x = tape.relu(x);
        let x = self.projection.forward(tape, x)?;
        let mut x = add_positions(tape, x)?;
        let mask = self.causal.then(|| causal_mask(out_len));
        for block in &self.blocks {
            x = block.forward(tape, x, mask.as_ref())?;
        }
        self.final_norm.forward(tape, x)
    }
}

/// Encodes each bias phrase independently and mean-pools it into one row.
#[derive(Clone, Debug)]
pub struct BiasEncoder {
    pub embedding: Embedding,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: LayerNorm,
    d: usize,
}

impl BiasEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        Self {
            embedding: Embedding::new(b, "bias.embedding", cfg.vocab_size, cfg.d),
            blocks: (0..cfg.bias_blocks)
                .map(|i| EncoderBlock::new(b, &format!("bias.block{i}"), cfg.d, cfg.heads, cfg.ff_dim))
                .collect(),
            final_norm: LayerNorm::new(b, "bias.final_norm", cfg.d),
            d: cfg.d,
        }
    }

    /// `N × d` phrase embeddings; an empty list gives a `0 × d` matrix.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, list: &BiasList, blank_id: usize, sos_eos_id: usize) -> Result<Var> {
        if list.is_empty() {
            return Ok(tape.constant(&Tensor::zeros(&[0, self.d])));
        }
        let lengths: Vec<usize> = list.phrases().iter().map(Vec::len).collect();
        let ids: Vec<usize> = list.phrases().iter().flatten().copied().collect();
        if let Some(&bad) = ids.iter().find(|&&i| i == blank_id || i == sos_eos_id) {
            return Err(Error::Validation(format!("bias phrase contains special token {bad}")));
        }
        let x = self.embedding.forward(tape, &ids)?;
        let pe = tape.constant(&segment_positions(&lengths, self.d));
        let mut x = tape.add(x, pe)?;
        for block in &self.blocks {
            x = block.forward_segments(tape, x, &lengths)?;
        }
        let x = self.final_norm.forward(tape, x)?;
        let mut pooled = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for &len in &lengths {
            let seg = tape.slice_rows(x, start, len)?;
            pooled.push(tape.mean_rows(seg)?);
            start += len;
        }
        tape.concat_rows(&pooled)
    }
}
