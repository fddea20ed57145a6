//! `DVM1` model checkpoints.
//!
//! Byte layout (all integers little-endian `u32`):
//!
//! ```text
//! "DVM1"
//! header_len, header bytes      UTF-8 key=value lines
//! per parameter, in declaration order:
//!   name_len, name bytes        UTF-8
//!   ndim, dims[ndim]
//!   data                        prod(dims) little-endian f32
//! ```
//!
//! The header carries every [`ModelConfig`] key plus `blank_id`,
//! `sos_eos_id` and `vocab` (tokens separated by single spaces, in id order).

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, StaticVocabulary};
use crate::error::{Error, Result};
use crate::kv;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"DVM1";

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = kv::Writer::default();
    model.config.write_kv(&mut w);
    w.put("blank_id", model.vocab.blank_id())
        .put("sos_eos_id", model.vocab.sos_eos_id())
        .put("vocab", model.vocab.tokens().join(" "));
    let header = w.finish();

    let mut out = Vec::with_capacity(8 + header.len() + 4 * model.num_parameters() + 64 * model.params.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, header.len());
    out.extend_from_slice(header.as_bytes());
    for p in model.params.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |reason: String| Error::format("checkpoint", path, reason);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(&bad)? != MAGIC {
        return Err(bad("missing DVM1 magic".into()));
    }
    let header_len = r.u32().map_err(&bad)?;
    let header = std::str::from_utf8(r.take(header_len).map_err(&bad)?).map_err(|e| bad(format!("header: {e}")))?;

    let mut config = ModelConfig::default();
    let (mut blank, mut sos, mut tokens) = (None, None, None);
    for (k, v) in kv::parse(header).map_err(|e| bad(e.to_string()))? {
        match k.as_str() {
            "blank_id" => blank = Some(kv::value::<usize>(&k, &v).map_err(|e| bad(e.to_string()))?),
            "sos_eos_id" => sos = Some(kv::value::<usize>(&k, &v).map_err(|e| bad(e.to_string()))?),
            "vocab" => tokens = Some(v.split(' ').map(str::to_string).collect::<Vec<_>>()),
            _ => {
                if !config.set(&k, &v).map_err(|e| bad(e.to_string()))? {
                    return Err(bad(format!("unknown header key {k:?}")));
                }
            }
        }
    }
    let (Some(blank), Some(sos), Some(tokens)) = (blank, sos, tokens) else {
        return Err(bad("header lacks vocabulary".into()));
    };
    let vocab = StaticVocabulary::new(tokens, blank, sos).map_err(|e| bad(e.to_string()))?;
    let mut model = Model::new(config, vocab).map_err(|e| bad(e.to_string()))?;

    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name_len = r.u32().map_err(&bad)?;
        let name = std::str::from_utf8(r.take(name_len).map_err(&bad)?).map_err(|e| bad(format!("name: {e}")))?;
        let expected = &model.params.get(id).name;
        if name != expected {
            return Err(bad(format!("parameter {name:?} where {expected:?} was expected")));
        }
        let ndim = r.u32().map_err(&bad)?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32().map_err(&bad)?);
        }
        if shape != model.params.get(id).value.shape() {
            return Err(bad(format!("parameter {name}: shape {shape:?} does not match the config")));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4).map_err(&bad)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        model.params.set_value(id, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;

    fn small(arch: Arch) -> Model {
        let vocab = StaticVocabulary::with_specials(["a", "b", "c"]).unwrap();
        let config = ModelConfig {
            d: 8,
            heads: 2,
            ff_dim: 16,
            vocab_size: vocab.len(),
            feat_dim: 3,
            joint_dim: 8,
            arch,
            ..ModelConfig::default()
        };
        Model::new(config, vocab).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for arch in [Arch::Attention, Arch::Transducer] {
            let m = small(arch);
            let bytes = to_bytes(&m);
            assert_eq!(&bytes[..4], MAGIC);
            let back = from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = to_bytes(&small(Arch::Attention));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 1], Path::new("x")),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad, Path::new("x")).is_err());
    }
}
