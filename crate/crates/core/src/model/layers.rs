//! Building blocks shared by the encoders and decoders.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Init, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Large negative score used to mask attention entries; `exp` of it
/// underflows to exactly zero.
pub(crate) const MASKED: f32 = -1e9;

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        self.store.add(name, shape, Init::Uniform { fan_in }, self.rng)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> ParamId {
        self.store.add(name, shape, Init::Constant(value), self.rng)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: b.uniform(&format!("{name}.weight"), &[in_dim, out_dim], in_dim),
            bias: b.uniform(&format!("{name}.bias"), &[out_dim], in_dim),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize) -> Self {
        Self {
            gain: b.constant(&format!("{name}.gain"), &[dim], 1.0),
            bias: b.constant(&format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm_rows(x, g, b)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(b: &mut Builder<'_>, name: &str, rows: usize, dim: usize) -> Self {
        Self {
            table: b.uniform(&format!("{name}.table"), &[rows, dim], 1),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.gather_rows(t, ids)
    }
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(len, d, |pos, j| {
        let pair = (j / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        (if j % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
    })
}

pub fn add_positions<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    let (len, d) = tape.dims(x);
    let pe = tape.constant(&positional_encoding(len, d));
    tape.add(x, pe)
}

/// Concatenated per-segment position encodings, positions restarting at 0
/// for each segment.
pub fn segment_positions(lengths: &[usize], d: usize) -> Tensor {
    let max = lengths.iter().copied().max().unwrap_or(0);
    let table = positional_encoding(max, d);
    let mut data = Vec::with_capacity(lengths.iter().sum::<usize>() * d);
    for &len in lengths {
        data.extend_from_slice(&table.data()[..len * d]);
    }
    Tensor::new(vec![data.len() / d.max(1), d], data).expect("positions fit")
}

pub fn causal_mask(len: usize) -> Tensor {
    Tensor::from_fn(len, len, |i, j| if j > i { MASKED } else { 0.0 })
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(b, &format!("{name}.query"), d, d),
            key: Linear::new(b, &format!("{name}.key"), d, d),
            value: Linear::new(b, &format!("{name}.value"), d, d),
            output: Linear::new(b, &format!("{name}.output"), d, d),
            heads,
        }
    }

    /// Scaled dot-product attention over already projected `q`, `k`, `v`,
    /// split into heads along columns.
    fn attend<T: Scalar>(&self, tape: &mut Tape<'_, T>, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<Var> {
        let d = tape.dims(q).1;
        let dh = d / self.heads;
        let inv = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_nt(qh, kh)?;
            let mut s = tape.scale(s, inv);
            if let Some(m) = mask {
                s = tape.add(s, m)?;
            }
            let a = tape.softmax_rows(s);
            outs.push(tape.matmul(a, vh)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            tape.concat_cols(&outs)
        }
    }

    /// Attention of `x` rows over `memory` rows; `mask` is additive.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, memory: Var, mask: Option<&Tensor>) -> Result<Var> {
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, memory)?;
        let v = self.value.forward(tape, memory)?;
        let mask = mask.map(|m| tape.constant(m));
        let o = self.attend(tape, q, k, v, mask)?;
        self.output.forward(tape, o)
    }

    /// Self-attention restricted to contiguous row segments of `x`.
    pub fn forward_segments<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, lengths: &[usize]) -> Result<Var> {
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, x)?;
        let v = self.value.forward(tape, x)?;
        let mut parts = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for &len in lengths {
            let qs = tape.slice_rows(q, start, len)?;
            let ks = tape.slice_rows(k, start, len)?;
            let vs = tape.slice_rows(v, start, len)?;
            parts.push(self.attend(tape, qs, ks, vs, None)?);
            start += len;
        }
        let o = tape.concat_rows(&parts)?;
        self.output.forward(tape, o)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, ff: usize) -> Self {
        Self {
            hidden: Linear::new(b, &format!("{name}.hidden"), d, ff),
            output: Linear::new(b, &format!("{name}.output"), ff, d),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        self.output.forward(tape, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderBlock {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, heads: usize, ff: usize) -> Self {
        Self {
            attn_norm: LayerNorm::new(b, &format!("{name}.attn_norm"), d),
            attn: MultiHeadAttention::new(b, &format!("{name}.attn"), d, heads),
            ff_norm: LayerNorm::new(b, &format!("{name}.ff_norm"), d),
            ff: FeedForward::new(b, &format!("{name}.ff"), d, ff),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let n = self.attn_norm.forward(tape, x)?;
        let a = self.attn.forward(tape, n, n, mask)?;
        let x = tape.add(x, a)?;
        self.feed_forward(tape, x)
    }

    pub fn forward_segments<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, lengths: &[usize]) -> Result<Var> {
        let n = self.attn_norm.forward(tape, x)?;
        let a = self.attn.forward_segments(tape, n, lengths)?;
        let x = tape.add(x, a)?;
        self.feed_forward(tape, x)
    }

    fn feed_forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let n = self.ff_norm.forward(tape, x)?;
        let f = self.ff.forward(tape, n)?;
        tape.add(x, f)
    }
}

/// Pre-norm block with causal self-attention and cross-attention.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, heads: usize, ff: usize) -> Self {
        Self {
            self_norm: LayerNorm::new(b, &format!("{name}.self_norm"), d),
            self_attn: MultiHeadAttention::new(b, &format!("{name}.self_attn"), d, heads),
            cross_norm: LayerNorm::new(b, &format!("{name}.cross_norm"), d),
            cross_attn: MultiHeadAttention::new(b, &format!("{name}.cross_attn"), d, heads),
            ff_norm: LayerNorm::new(b, &format!("{name}.ff_norm"), d),
            ff: FeedForward::new(b, &format!("{name}.ff"), d, ff),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, memory: Var, causal: &Tensor) -> Result<Var> {
        let n = self.self_norm.forward(tape, x)?;
        let a = self.self_attn.forward(tape, n, n, Some(causal))?;
        let x = tape.add(x, a)?;
        let n = self.cross_norm.forward(tape, x)?;
        let c = self.cross_attn.forward(tape, n, memory, None)?;
        let x = tape.add(x, c)?;
        let n = self.ff_norm.forward(tape, x)?;
        let f = self.ff.forward(tape, n)?;
        tape.add(x, f)
    }
}

/// Single-layer LSTM.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

/// Hidden and cell state after a step.
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, hidden: usize) -> Self {
        Self {
            input: Linear::new(b, &format!("{name}.input"), in_dim, 4 * hidden),
            recurrent: Linear::new(b, &format!("{name}.recurrent"), hidden, 4 * hidden),
            hidden,
        }
    }

    pub fn zero_state<T: Scalar>(&self, tape: &mut Tape<'_, T>) -> LstmState {
        let h = tape.constant(&Tensor::zeros(&[1, self.hidden]));
        let c = tape.constant(&Tensor::zeros(&[1, self.hidden]));
        LstmState { h, c }
    }

    /// One step given the projected input row `xw` (`1 × 4h`).
    fn cell<T: Scalar>(&self, tape: &mut Tape<'_, T>, xw: Var, state: &LstmState) -> Result<LstmState> {
        let hw = self.recurrent.forward(tape, state.h)?;
        let gates = tape.add(xw, hw)?;
        let h = self.hidden;
        let i = tape.slice_cols(gates, 0, h)?;
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h, h)?;
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let ct = tape.tanh(c);
        let h = tape.mul(o, ct)?;
        Ok(LstmState { h, c })
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, state: &LstmState) -> Result<LstmState> {
        let xw = self.input.forward(tape, x)?;
        self.cell(tape, xw, state)
    }

    /// Runs over all rows of `x`, returning every hidden state (`L × h`).
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<(Var, LstmState)> {
        let len = tape.dims(x).0;
        let xw = self.input.forward(tape, x)?;
        let mut state = self.zero_state(tape);
        let mut hs = Vec::with_capacity(len);
        for t in 0..len {
            let row = tape.slice_rows(xw, t, 1)?;
            state = self.cell(tape, row, &state)?;
            hs.push(state.h);
        }
        let all = tape.concat_rows(&hs)?;
        Ok((all, state))
    }
}
