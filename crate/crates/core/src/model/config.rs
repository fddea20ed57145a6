use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

/// Primary decoder architecture; both variants carry an auxiliary CTC head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Attention,
    Transducer,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Attention => "attention",
            Arch::Transducer => "rnnt",
        })
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "attention" => Ok(Arch::Attention),
            "rnnt" | "transducer" => Ok(Arch::Transducer),
            other => Err(format!("unknown architecture {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Model width.
    pub d: usize,
    pub audio_blocks: usize,
    pub bias_blocks: usize,
    pub decoder_blocks: usize,
    /// Static vocabulary size, specials included.
    pub vocab_size: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub subsample_stride: usize,
    /// Restricts audio self-attention to past frames.
    pub causal: bool,
    pub feat_dim: usize,
    pub arch: Arch,
    /// Joint-network width of the transducer.
    pub joint_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            audio_blocks: 2,
            bias_blocks: 2,
            decoder_blocks: 2,
            vocab_size: 42,
            heads: 4,
            ff_dim: 128,
            subsample_stride: 4,
            causal: false,
            feat_dim: 16,
            arch: Arch::Attention,
            joint_dim: 32,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("d", self.d),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("subsample_stride", self.subsample_stride),
            ("feat_dim", self.feat_dim),
            ("joint_dim", self.joint_dim),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d={} is not divisible by heads={}", self.d, self.heads)));
        }
        if self.d < 2 || self.joint_dim < 2 {
            return Err(Error::Config("layer norm needs d >= 2".into()));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocabulary needs blank, sos/eos and one content token".into()));
        }
        Ok(())
    }

    /// Per-layer strides of the two-layer subsampler; their product is
    /// `subsample_stride`.
    pub fn strides(&self) -> (usize, usize) {
        let s = self.subsample_stride;
        let first = (1..=s).filter(|f| s.is_multiple_of(*f) && f * f <= s).max().unwrap_or(1);
        (first, s / first)
    }

    pub fn write_kv(&self, w: &mut kv::Writer) {
        w.put("d", self.d)
            .put("audio_blocks", self.audio_blocks)
            .put("bias_blocks", self.bias_blocks)
            .put("decoder_blocks", self.decoder_blocks)
            .put("vocab_size", self.vocab_size)
            .put("heads", self.heads)
            .put("ff_dim", self.ff_dim)
            .put("subsample_stride", self.subsample_stride)
            .put("causal", self.causal)
            .put("feat_dim", self.feat_dim)
            .put("arch", self.arch)
            .put("joint_dim", self.joint_dim)
            .put("model_seed", self.seed);
    }

    /// Applies one key; `Ok(false)` when the key is not a model key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<bool> {
        match key {
            "d" => self.d = kv::value(key, raw)?,
            "audio_blocks" => self.audio_blocks = kv::value(key, raw)?,
            "bias_blocks" => self.bias_blocks = kv::value(key, raw)?,
            "decoder_blocks" => self.decoder_blocks = kv::value(key, raw)?,
            "vocab_size" => self.vocab_size = kv::value(key, raw)?,
            "heads" => self.heads = kv::value(key, raw)?,
            "ff_dim" => self.ff_dim = kv::value(key, raw)?,
            "subsample_stride" => self.subsample_stride = kv::value(key, raw)?,
            "causal" => self.causal = kv::value(key, raw)?,
            "feat_dim" => self.feat_dim = kv::value(key, raw)?,
            "arch" => self.arch = kv::value(key, raw)?,
            "joint_dim" => self.joint_dim = kv::value(key, raw)?,
            "model_seed" => self.seed = kv::value(key, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
