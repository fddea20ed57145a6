//! Synthetic "speech": word sequences from a sparse Markov chain rendered
//! as noisy per-word codebook frames.
//!
//! Evaluation utterances each contain one reserved phrase whose internal
//! word transitions are absent from the chain, so no training utterance can
//! contain it. The phrase is entered and left through ordinary chain
//! transitions.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::kv;
use crate::losses::ctc_min_frames;
use crate::model::{FeatureSequence, StaticVocabulary};
use crate::numerics::Tensor;
use crate::rng::substream;

pub const FEATURE_MAGIC: &[u8; 4] = b"DVF1";
const CODEBOOK_DRAWS: usize = 100_000;
const MIN_CODE_DISTANCE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub k_content: usize,
    pub feat_dim: usize,
    pub frames_per_token: (usize, usize),
    pub noise_std: f64,
    pub num_train: usize,
    pub num_eval: usize,
    pub utt_len: (usize, usize),
    /// Successors per word in the transcript chain.
    pub branching: usize,
    /// Reserved evaluation phrases.
    pub num_phrases: usize,
    pub phrase_len: (usize, usize),
    /// Extra phrases in the evaluation bias list that never occur.
    pub num_distractors: usize,
    /// Fraction of training utterances carrying a fresh off-chain run.
    pub rare_rate: f64,
    /// Encoder subsampling the frame counts must survive.
    pub subsample_stride: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_content: 40,
            feat_dim: 16,
            frames_per_token: (8, 12),
            noise_std: 1.5,
            num_train: 2000,
            num_eval: 200,
            utt_len: (5, 10),
            branching: 5,
            num_phrases: 20,
            phrase_len: (3, 5),
            num_distractors: 10,
            rare_rate: 0.3,
            subsample_stride: 4,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_content < 2 || self.feat_dim == 0 {
            return bad("k_content must be at least 2 and feat_dim at least 1".into());
        }
        if self.frames_per_token.0 < 1 || self.frames_per_token.0 > self.frames_per_token.1 {
            return bad(format!("frames_per_token={:?} must satisfy 1 <= min <= max", self.frames_per_token));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std={} must be non-negative", self.noise_std));
        }
        if self.utt_len.0 < 1 || self.utt_len.0 > self.utt_len.1 {
            return bad(format!("utt_len={:?} must satisfy 1 <= min <= max", self.utt_len));
        }
        if self.phrase_len.0 < 2 || self.phrase_len.0 > self.phrase_len.1 {
            return bad(format!("phrase_len={:?} must satisfy 2 <= min <= max", self.phrase_len));
        }
        if self.num_eval > 0 && (self.num_phrases == 0 || self.phrase_len.1 > self.utt_len.1) {
            return bad("evaluation needs phrases no longer than the longest utterance".into());
        }
        if !(0.0..=1.0).contains(&self.rare_rate) {
            return bad(format!("rare_rate={} outside [0, 1]", self.rare_rate));
        }
        if self.branching == 0 || self.branching + 1 >= self.k_content {
            return bad(format!("branching={} must be in 1..k_content-1", self.branching));
        }
        if self.subsample_stride == 0 {
            return bad("subsample_stride must be at least 1".into());
        }
        Ok(())
    }

    pub fn write_kv(&self, w: &mut kv::Writer) {
        w.put("k_content", self.k_content)
            .put("synth_feat_dim", self.feat_dim)
            .put("frames_per_token", kv::format_range(self.frames_per_token))
            .put("noise_std", self.noise_std)
            .put("num_train", self.num_train)
            .put("num_eval", self.num_eval)
            .put("utt_len", kv::format_range(self.utt_len))
            .put("branching", self.branching)
            .put("num_phrases", self.num_phrases)
            .put("phrase_len", kv::format_range(self.phrase_len))
            .put("num_distractors", self.num_distractors)
            .put("rare_rate", self.rare_rate)
            .put("synth_subsample_stride", self.subsample_stride)
            .put("synth_seed", self.seed);
    }

    /// Applies one key; `Ok(false)` when the key is not a synthesis key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<bool> {
        match key {
            "k_content" => self.k_content = kv::value(key, raw)?,
            "synth_feat_dim" => self.feat_dim = kv::value(key, raw)?,
            "frames_per_token" => self.frames_per_token = kv::range(key, raw)?,
            "noise_std" => self.noise_std = kv::value(key, raw)?,
            "num_train" => self.num_train = kv::value(key, raw)?,
            "num_eval" => self.num_eval = kv::value(key, raw)?,
            "utt_len" => self.utt_len = kv::range(key, raw)?,
            "branching" => self.branching = kv::value(key, raw)?,
            "num_phrases" => self.num_phrases = kv::value(key, raw)?,
            "phrase_len" => self.phrase_len = kv::range(key, raw)?,
            "num_distractors" => self.num_distractors = kv::value(key, raw)?,
            "rare_rate" => self.rare_rate = kv::value(key, raw)?,
            "synth_subsample_stride" => self.subsample_stride = kv::value(key, raw)?,
            "synth_seed" => self.seed = kv::value(key, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Pronounceable word for content index `i`.
pub fn word_name(i: usize) -> String {
    const C: [&str; 8] = ["k", "s", "t", "n", "h", "m", "r", "p"];
    const V: [&str; 5] = ["a", "i", "u", "e", "o"];
    let base = format!("{}{}", C[(i / V.len()) % C.len()], V[i % V.len()]);
    match i / (C.len() * V.len()) {
        0 => base,
        round => format!("{base}{round}"),
    }
}

pub fn vocabulary(cfg: &SynthConfig) -> Result<StaticVocabulary> {
    StaticVocabulary::with_specials((0..cfg.k_content).map(word_name))
}

/// Per-word frame means, pairwise at least 1.0 apart.
pub fn build_codebook(cfg: &SynthConfig) -> Result<Tensor> {
    let mut rng = substream(cfg.seed, "synthesis/codebook");
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(cfg.k_content);
    for _ in 0..CODEBOOK_DRAWS {
        if rows.len() == cfg.k_content {
            break;
        }
        let cand: Vec<f32> = (0..cfg.feat_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let far = rows.iter().all(|r| {
            let d2: f64 = r.iter().zip(&cand).map(|(a, b)| f64::from(a - b).powi(2)).sum();
            d2.sqrt() >= MIN_CODE_DISTANCE
        });
        if far {
            rows.push(cand);
        }
    }
    if rows.len() < cfg.k_content {
        return Err(Error::Config(format!(
            "codebook: could not place {} codewords {MIN_CODE_DISTANCE} apart in {} dimensions after {CODEBOOK_DRAWS} draws; raise feat_dim",
            cfg.k_content, cfg.feat_dim
        )));
    }
    Tensor::new(vec![cfg.k_content, cfg.feat_dim], rows.concat())
}

/// Content index of a vocabulary id.
fn content_index(vocab: &StaticVocabulary, id: usize) -> Result<usize> {
    if !vocab.is_content(id) {
        return Err(Error::Contract(format!("token {id} is not a content token")));
    }
    Ok(vocab.content_ids().position(|c| c == id).expect("content id"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub tokens: Vec<usize>,
    pub features: FeatureSequence,
}

/// Renders `tokens` (content ids of the synthetic vocabulary) as frames.
/// Frame counts grow until the subsampled sequence can carry a CTC
/// alignment.
pub fn synth_utterance(
    utt_id: &str,
    tokens: &[usize],
    codebook: &Tensor,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Utterance> {
    let vocab = vocabulary(cfg)?;
    let rows: Vec<usize> = tokens.iter().map(|&t| content_index(&vocab, t)).collect::<Result<_>>()?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let need = ctc_min_frames(tokens);
    let (mut lo, mut hi) = cfg.frames_per_token;
    loop {
        let counts: Vec<usize> = rows.iter().map(|_| rng.random_range(lo..=hi)).collect();
        let raw: usize = counts.iter().sum();
        if raw / cfg.subsample_stride >= need.max(1) {
            let mut data = Vec::with_capacity(raw * cfg.feat_dim);
            for (&row, &r) in rows.iter().zip(&counts) {
                for _ in 0..r {
                    data.extend(codebook.row(row).iter().map(|&m| m + noise.sample(rng) as f32));
                }
            }
            return Ok(Utterance {
                utt_id: utt_id.to_string(),
                tokens: tokens.to_vec(),
                features: FeatureSequence {
                    utt_id: utt_id.to_string(),
                    frames: Tensor::new(vec![raw, cfg.feat_dim], data)?,
                },
            });
        }
        lo += 1;
        hi = hi.max(lo);
    }
}

/// Transcript structure shared by all utterances of a corpus.
#[derive(Clone, Debug)]
pub struct Chain {
    /// Allowed successors per content index.
    pub successors: Vec<Vec<usize>>,
    pub phrases: Vec<Vec<usize>>,
    pub distractors: Vec<Vec<usize>>,
}

impl Chain {
    pub fn build(cfg: &SynthConfig) -> Result<Self> {
        let k = cfg.k_content;
        let mut rng = substream(cfg.seed, "synthesis/chain");
        let successors: Vec<Vec<usize>> = (0..k)
            .map(|w| {
                let others: Vec<usize> = (0..k).filter(|&o| o != w).collect();
                let mut s: Vec<usize> = others.choose_multiple(&mut rng, cfg.branching).copied().collect();
                s.sort_unstable();
                s
            })
            .collect();
        let mut chain = Self {
            successors,
            phrases: Vec::new(),
            distractors: Vec::new(),
        };
        let mut seen = HashSet::new();
        let total = cfg.num_phrases + cfg.num_distractors;
        let mut attempts = 0;
        while chain.phrases.len() + chain.distractors.len() < total {
            attempts += 1;
            if attempts > CODEBOOK_DRAWS {
                return Err(Error::Config("could not draw distinct off-chain phrases".into()));
            }
            let len = rng.random_range(cfg.phrase_len.0..=cfg.phrase_len.1);
            let p = chain.off_chain_run(len, &mut rng);
            if !chain.predecessors(p[0]).is_empty() && seen.insert(p.clone()) {
                if chain.phrases.len() < cfg.num_phrases {
                    chain.phrases.push(p);
                } else {
                    chain.distractors.push(p);
                }
            }
        }
        Ok(chain)
    }

    /// Random run of `len` words where every transition is off the chain.
    pub fn off_chain_run(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = self.successors.len();
        let mut p = vec![rng.random_range(0..k)];
        while p.len() < len {
            let last = *p.last().unwrap();
            let off: Vec<usize> = (0..k).filter(|&o| o != last && !self.successors[last].contains(&o)).collect();
            p.push(*off.choose(rng).expect("off-chain successor"));
        }
        p
    }

    /// Training transcript: a chain walk, with probability `rare_rate`
    /// carrying a fresh off-chain run. Never contains a reserved phrase or
    /// distractor.
    pub fn training_sentence(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = rng.random_range(cfg.utt_len.0..=cfg.utt_len.1);
        loop {
            let words = if rng.random_bool(cfg.rare_rate) {
                let run_len = rng.random_range(cfg.phrase_len.0..=cfg.phrase_len.1).min(len);
                let run = self.off_chain_run(run_len, rng);
                self.sentence_with(&run, len, rng)
            } else {
                self.sentence(len, rng)
            };
            if !self.phrases.iter().chain(&self.distractors).any(|p| contains_run(&words, p)) {
                return words;
            }
        }
    }

    pub fn predecessors(&self, w: usize) -> Vec<usize> {
        (0..self.successors.len()).filter(|&p| self.successors[p].contains(&w)).collect()
    }

    fn walk(&self, start: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = vec![start];
        while out.len() < len {
            let last = *out.last().unwrap();
            out.push(*self.successors[last].choose(rng).expect("successor"));
        }
        out
    }

    /// Chain walk of `len` words.
    pub fn sentence(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let start = rng.random_range(0..self.successors.len());
        self.walk(start, len, rng)
    }

    /// Chain walk of `len` words with `phrase` spliced in at a random
    /// position, entered and left through chain transitions.
    pub fn sentence_with(&self, phrase: &[usize], len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = len.max(phrase.len());
        let before = rng.random_range(0..=len - phrase.len());
        let mut prefix = Vec::with_capacity(before);
        let mut head = phrase[0];
        while prefix.len() < before {
            let preds = self.predecessors(head);
            let Some(&p) = preds.choose(rng) else { break };
            prefix.push(p);
            head = p;
        }
        prefix.reverse();
        let mut out = prefix;
        out.extend_from_slice(phrase);
        let after = len - out.len();
        if after > 0 {
            let tail = self.walk(*phrase.last().unwrap(), after + 1, rng);
            out.extend_from_slice(&tail[1..]);
        }
        out
    }
}

/// Whether `needle` occurs contiguously in `hay`.
pub fn contains_run(hay: &[usize], needle: &[usize]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

pub fn write_features(path: &Path, frames: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * frames.numel());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for &x in frames.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format("feature", path, reason);
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing DVF1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (t, f) = (word(4), word(8));
    if bytes.len() != 12 + 4 * t * f {
        return Err(bad(&format!("{} bytes for {t}×{f} frames", bytes.len())));
    }
    let data = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(vec![t, f], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    /// Feature path relative to the manifest's directory.
    pub features: String,
    pub text: String,
}

impl ManifestEntry {
    pub fn load(&self, manifest_dir: &Path) -> Result<FeatureSequence> {
        Ok(FeatureSequence {
            utt_id: self.utt_id.clone(),
            frames: read_features(&manifest_dir.join(&self.features))?,
        })
    }
}

fn read_tsv(path: &Path, kind: &'static str, columns: usize) -> Result<Vec<Vec<String>>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() < columns {
            return Err(Error::format(kind, path, format!("line {}: expected {columns} tab-separated fields", i + 1)));
        }
        rows.push(fields);
    }
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    Ok(read_tsv(path, "manifest", 3)?
        .into_iter()
        .map(|mut f| ManifestEntry {
            text: f.swap_remove(2),
            features: f.swap_remove(1),
            utt_id: f.swap_remove(0),
        })
        .collect())
}

/// `(utt_id, text)` rows of a two-column TSV.
pub fn read_pairs(path: &Path, kind: &'static str) -> Result<Vec<(String, String)>> {
    Ok(read_tsv(path, kind, 2)?
        .into_iter()
        .map(|mut f| (f.swap_remove(0), f.swap_remove(0)))
        .collect())
}

/// Paths written by [`gen_corpus`].
#[derive(Clone, Debug)]
pub struct CorpusPaths {
    pub root: PathBuf,
}

impl CorpusPaths {
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train.tsv")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval.tsv")
    }
    /// Reference transcripts of the evaluation set.
    pub fn eval_ref(&self) -> PathBuf {
        self.root.join("eval.ref.tsv")
    }
    /// The reserved phrase injected into each evaluation utterance.
    pub fn eval_targets(&self) -> PathBuf {
        self.root.join("eval.bias.tsv")
    }
    /// Reserved phrases plus distractors, one per line.
    pub fn eval_bias_list(&self) -> PathBuf {
        self.root.join("eval.bias_list.txt")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("synth.conf")
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Content ids of the chain's content indices.
fn ids(vocab: &StaticVocabulary, idx: &[usize]) -> Vec<usize> {
    let content: Vec<usize> = vocab.content_ids().collect();
    idx.iter().map(|&i| content[i]).collect()
}

/// Writes the training and evaluation sets with their sidecars.
pub fn gen_corpus(cfg: &SynthConfig, out: &Path) -> Result<CorpusPaths> {
    cfg.validate()?;
    let vocab = vocabulary(cfg)?;
    let codebook = build_codebook(cfg)?;
    let chain = Chain::build(cfg)?;
    let paths = CorpusPaths { root: out.to_path_buf() };
    let feats = out.join("feats");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;

    let mut vocab_body = String::new();
    for id in vocab.content_ids() {
        vocab_body.push_str(vocab.token(id).unwrap());
        vocab_body.push('\n');
    }
    write_file(&paths.vocab(), &vocab_body)?;
    let mut conf = kv::Writer::default();
    cfg.write_kv(&mut conf);
    write_file(&paths.config(), &conf.finish())?;

    let mut manifest = String::new();
    for i in 0..cfg.num_train {
        let utt_id = format!("train{i:05}");
        let mut rng = substream(cfg.seed, &format!("synthesis/{utt_id}"));
        let words = chain.training_sentence(cfg, &mut rng);
        let tokens = ids(&vocab, &words);
        let utt = synth_utterance(&utt_id, &tokens, &codebook, cfg, &mut rng)?;
        let rel = format!("feats/{utt_id}.dvf");
        write_features(&out.join(&rel), &utt.features.frames)?;
        manifest.push_str(&format!("{utt_id}\t{rel}\t{}\n", vocab.detokenize(&tokens)?));
    }
    write_file(&paths.train(), &manifest)?;

    let (mut manifest, mut refs, mut targets) = (String::new(), String::new(), String::new());
    let mut order: Vec<usize> = (0..cfg.num_phrases).collect();
    let mut rng = substream(cfg.seed, "synthesis/eval-order");
    for i in 0..cfg.num_eval {
        if i % cfg.num_phrases == 0 {
            order.shuffle(&mut rng);
        }
        let phrase = &chain.phrases[order[i % cfg.num_phrases]];
        let utt_id = format!("eval{i:05}");
        let mut rng = substream(cfg.seed, &format!("synthesis/{utt_id}"));
        let len = rng.random_range(cfg.utt_len.0..=cfg.utt_len.1);
        let words = chain.sentence_with(phrase, len, &mut rng);
        let tokens = ids(&vocab, &words);
        let utt = synth_utterance(&utt_id, &tokens, &codebook, cfg, &mut rng)?;
        let rel = format!("feats/{utt_id}.dvf");
        write_features(&out.join(&rel), &utt.features.frames)?;
        let text = vocab.detokenize(&tokens)?;
        manifest.push_str(&format!("{utt_id}\t{rel}\t{text}\n"));
        refs.push_str(&format!("{utt_id}\t{text}\n"));
        targets.push_str(&format!("{utt_id}\t{}\n", vocab.detokenize(&ids(&vocab, phrase))?));
    }
    write_file(&paths.eval(), &manifest)?;
    write_file(&paths.eval_ref(), &refs)?;
    write_file(&paths.eval_targets(), &targets)?;
    let mut list = String::new();
    for p in chain.phrases.iter().chain(&chain.distractors) {
        list.push_str(&vocab.detokenize(&ids(&vocab, p))?);
        list.push('\n');
    }
    write_file(&paths.eval_bias_list(), &list)?;
    Ok(paths)
}

/// Reads the content-token list written by [`gen_corpus`].
pub fn read_vocabulary(path: &Path) -> Result<StaticVocabulary> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StaticVocabulary::with_specials(body.lines().filter(|l| !l.trim().is_empty()).map(str::trim))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            k_content: 10,
            feat_dim: 8,
            num_train: 30,
            num_eval: 6,
            utt_len: (3, 6),
            branching: 2,
            num_phrases: 3,
            phrase_len: (3, 4),
            num_distractors: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn codebook_is_deterministic_and_spread() {
        let cfg = SynthConfig {
            k_content: 2,
            feat_dim: 8,
            ..SynthConfig::default()
        };
        let a = build_codebook(&cfg).unwrap();
        assert_eq!(a, build_codebook(&cfg).unwrap());
        let d: f32 = a.row(0).iter().zip(a.row(1)).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(d.sqrt() >= 1.0);
        let crowded = SynthConfig {
            k_content: 50,
            feat_dim: 1,
            ..SynthConfig::default()
        };
        assert!(matches!(build_codebook(&crowded), Err(Error::Config(_))));
    }

    #[test]
    fn noise_free_frames_repeat_the_codeword() {
        let cfg = SynthConfig {
            frames_per_token: (2, 2),
            noise_std: 0.0,
            subsample_stride: 1,
            ..small()
        };
        let cb = build_codebook(&cfg).unwrap();
        let mut rng = substream(0, "t");
        let u = synth_utterance("u", &[2], &cb, &cfg, &mut rng).unwrap();
        assert_eq!(u.features.frames.rows(), 2);
        assert_eq!(u.features.frames.row(0), cb.row(0));
        assert_eq!(u.features.frames.row(1), cb.row(0));
    }

    #[test]
    fn frame_counts_survive_subsampling() {
        let cfg = SynthConfig {
            frames_per_token: (1, 2),
            ..small()
        };
        let cb = build_codebook(&cfg).unwrap();
        let mut rng = substream(0, "t");
        let tokens = [2, 3, 3, 4];
        let u = synth_utterance("u", &tokens, &cb, &cfg, &mut rng).unwrap();
        assert!(u.features.frames.rows() / cfg.subsample_stride >= ctc_min_frames(&tokens));
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dvf");
        let t = Tensor::from_fn(3, 2, |r, c| (r * 2 + c) as f32 - 1.5);
        write_features(&p, &t).unwrap();
        assert_eq!(read_features(&p).unwrap(), t);
        fs::write(&p, b"DVF1\x01\0\0\0").unwrap();
        assert!(read_features(&p).is_err());
    }

    #[test]
    fn corpus_counts_and_phrase_structure() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let paths = gen_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(read_manifest(&paths.train()).unwrap().len(), cfg.num_train);
        assert_eq!(read_manifest(&paths.eval()).unwrap().len(), cfg.num_eval);
        let chain = Chain::build(&cfg).unwrap();
        for p in chain.phrases.iter().chain(&chain.distractors) {
            assert!(p.windows(2).all(|w| !chain.successors[w[0]].contains(&w[1])));
        }
    }
}
