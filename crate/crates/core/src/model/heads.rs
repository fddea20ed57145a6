//! Embedding and output layers extended with bias tokens.

use super::layers::{Builder, Embedding, Linear};
use super::vocab::Token;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Var};

/// Maps expanded tokens to `d`-dimensional inputs: normal tokens through
/// the static embedding table, bias tokens through their phrase embedding,
/// each followed by its own linear layer.
#[derive(Clone, Debug)]
pub struct ExpandedEmbedding {
    pub embedding: Embedding,
    pub normal: Linear,
    pub bias: Linear,
}

impl ExpandedEmbedding {
    pub fn new(b: &mut Builder<'_>, name: &str, vocab_size: usize, d: usize) -> Self {
        Self {
            embedding: Embedding::new(b, &format!("{name}.embedding"), vocab_size, d),
            normal: Linear::new(b, &format!("{name}.normal_proj"), d, d),
            bias: Linear::new(b, &format!("{name}.bias_proj"), d, d),
        }
    }

    /// One row per token, in order. `phrases` is the `N × d` phrase matrix.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, tokens: &[Token], phrases: Var) -> Result<Var> {
        let n_bias = tape.dims(phrases).0;
        let mut normal_ids = Vec::new();
        let mut bias_ids = Vec::new();
        let mut order = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            match tok {
                Token::Normal(i) => {
                    order.push((false, normal_ids.len()));
                    normal_ids.push(i);
                }
                Token::Bias(n) => {
                    if n >= n_bias {
                        return Err(Error::Index(format!("bias token {n} with only {n_bias} phrases")));
                    }
                    order.push((true, bias_ids.len()));
                    bias_ids.push(n);
                }
                Token::Blank => return Err(Error::Validation("blank is not a decoder input".into())),
            }
        }
        let mut parts = Vec::with_capacity(2);
        if !normal_ids.is_empty() {
            let e = self.embedding.forward(tape, &normal_ids)?;
            parts.push(self.normal.forward(tape, e)?);
        }
        if !bias_ids.is_empty() {
            let v = tape.gather_rows(phrases, &bias_ids)?;
            parts.push(self.bias.forward(tape, v)?);
        }
        if bias_ids.is_empty() {
            return Ok(parts[0]);
        }
        let offset = normal_ids.len();
        let stacked = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
        let index: Vec<usize> = order
            .iter()
            .map(|&(is_bias, i)| if is_bias { offset + i } else { i })
            .collect();
        tape.gather_rows(stacked, &index)
    }
}

/// Scores `[normal | bias]`: a linear layer for the static vocabulary and
/// a scaled inner product between projected hidden states and projected
/// phrase embeddings for the bias tokens.
#[derive(Clone, Debug)]
pub struct ExpandedOutput {
    pub normal: Linear,
    pub query: Linear,
    pub key: Linear,
}

impl ExpandedOutput {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, vocab_size: usize, d: usize) -> Self {
        Self {
            normal: Linear::new(b, &format!("{name}.normal"), in_dim, vocab_size),
            query: Linear::new(b, &format!("{name}.query"), in_dim, d),
            key: Linear::new(b, &format!("{name}.key"), d, d),
        }
    }

    /// `R × (K+N)` scores for hidden rows `u`; with no phrases the result
    /// is the plain normal-token layer.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, u: Var, phrases: Option<Var>) -> Result<Var> {
        let normal = self.normal.forward(tape, u)?;
        let Some(v) = phrases.filter(|&v| tape.dims(v).0 > 0) else {
            return Ok(normal);
        };
        let q = self.query.forward(tape, u)?;
        let k = self.key.forward(tape, v)?;
        let d = T::from_usize(self.key.out_dim).unwrap();
        let s = tape.matmul_nt(q, k)?;
        let s = tape.scale(s, T::one() / d.sqrt());
        tape.concat_cols(&[normal, s])
    }
}
