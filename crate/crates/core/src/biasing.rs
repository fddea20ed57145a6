//! Bias-list sampling for training, reference rewriting and the dynamic
//! vocabulary that maps expanded tokens back to text.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{ExpandedReference, TrainConfig};
use crate::model::{BiasList, StaticVocabulary, Token};

/// Static vocabulary plus the bias tokens of one list.
#[derive(Clone, Copy, Debug)]
pub struct DynamicVocabulary<'a> {
    pub vocab: &'a StaticVocabulary,
    pub bias: &'a BiasList,
}

impl<'a> DynamicVocabulary<'a> {
    pub fn new(vocab: &'a StaticVocabulary, bias: &'a BiasList) -> Self {
        Self { vocab, bias }
    }

    pub fn len(&self) -> usize {
        self.vocab.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Display form of one token; bias tokens render as `<text>`.
    pub fn display(&self, token: Token) -> Result<String> {
        match token {
            Token::Normal(i) => self
                .vocab
                .token(i)
                .map(str::to_string)
                .ok_or_else(|| Error::Index(format!("token id {i} outside the vocabulary"))),
            Token::Bias(n) => {
                self.check_bias(n)?;
                Ok(format!("<{}>", self.bias.text(n)))
            }
            Token::Blank => Ok(self.vocab.token(self.vocab.blank_id()).unwrap_or("<blank>").to_string()),
        }
    }

    fn check_bias(&self, n: usize) -> Result<()> {
        if n >= self.bias.len() {
            return Err(Error::Index(format!("bias token {n} with only {} phrases", self.bias.len())));
        }
        Ok(())
    }

    /// Static token ids of an expanded sequence, with bias tokens spelled
    /// out. Blanks and specials are dropped.
    pub fn expand(&self, tokens: &[Token]) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            match tok {
                Token::Normal(i) => ids.push(i),
                Token::Bias(n) => {
                    self.check_bias(n)?;
                    ids.extend_from_slice(self.bias.phrase(n));
                }
                Token::Blank => {}
            }
        }
        Ok(ids)
    }

    /// Text of an expanded sequence; bias tokens become their phrase text.
    pub fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        self.vocab.detokenize(&self.expand(tokens)?)
    }
}

/// A sampled batch bias list and the number of draws that had to be
/// dropped because an utterance was too short or already covered.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBiasList {
    pub list: BiasList,
    pub clamped: usize,
}

/// Draws up to `n_utt` non-overlapping contiguous phrases per reference,
/// with lengths uniform in `i_min..=min(i_max, len)`, and pools them over
/// the batch keeping the first occurrence of each distinct phrase.
pub fn sample_bias_list(
    refs: &[Vec<usize>],
    cfg: &TrainConfig,
    vocab: &StaticVocabulary,
    rng: &mut impl Rng,
) -> Result<SampledBiasList> {
    let mut seen = HashSet::new();
    let mut phrases = Vec::new();
    let mut clamped = 0;
    for r in refs {
        let mut used = vec![false; r.len()];
        for _ in 0..cfg.n_utt {
            let hi = cfg.i_max.min(r.len());
            if hi < cfg.i_min {
                clamped += 1;
                continue;
            }
            let len = rng.random_range(cfg.i_min..=hi);
            let starts: Vec<usize> = (0..=r.len() - len)
                .filter(|&s| used[s..s + len].iter().all(|u| !u))
                .collect();
            if starts.is_empty() {
                clamped += 1;
                continue;
            }
            let s = starts[rng.random_range(0..starts.len())];
            used[s..s + len].iter_mut().for_each(|u| *u = true);
            let phrase = r[s..s + len].to_vec();
            if seen.insert(phrase.clone()) {
                phrases.push(phrase);
            }
        }
    }
    Ok(SampledBiasList {
        list: BiasList::new(phrases, vocab)?,
        clamped,
    })
}

/// Appends `per_phrase` variants of every phrase that keep a random
/// non-empty proper prefix and draw the remaining tokens uniformly from the
/// content vocabulary. Variants equal to an existing phrase are dropped.
pub fn add_prefix_variants(list: &BiasList, per_phrase: usize, vocab: &StaticVocabulary, rng: &mut impl Rng) -> Result<BiasList> {
    let content: Vec<usize> = vocab.content_ids().collect();
    let mut seen: HashSet<Vec<usize>> = list.phrases().iter().cloned().collect();
    let mut phrases = list.phrases().to_vec();
    for p in list.phrases() {
        if p.len() < 2 {
            continue;
        }
        for _ in 0..per_phrase {
            let keep = rng.random_range(1..p.len());
            let mut v = p[..keep].to_vec();
            v.extend((keep..p.len()).map(|_| content[rng.random_range(0..content.len())]));
            if seen.insert(v.clone()) {
                phrases.push(v);
            }
        }
    }
    BiasList::new(phrases, vocab)
}

/// Left-to-right scan replacing the longest phrase that matches at each
/// position with its bias token; ties go to the lowest index.
pub fn rewrite_reference(tokens: &[usize], bias: &BiasList, source_text: &str) -> ExpandedReference {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let mut best: Option<(usize, usize)> = None;
        for (n, p) in bias.phrases().iter().enumerate() {
            if tokens[i..].starts_with(p) && best.is_none_or(|(_, len)| p.len() > len) {
                best = Some((n, p.len()));
            }
        }
        match best {
            Some((n, len)) => {
                out.push(Token::Bias(n));
                i += len;
            }
            None => {
                out.push(Token::Normal(tokens[i]));
                i += 1;
            }
        }
    }
    ExpandedReference {
        tokens: out,
        source_text: source_text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn nelly() -> StaticVocabulary {
        StaticVocabulary::with_specials(["Hi", "N", "##el", "##ly", "a", "b", "c"]).unwrap()
    }

    #[test]
    fn hi_nelly() {
        let v = nelly();
        let y = v.tokenize("Hi Nelly").unwrap();
        assert_eq!(y.len(), 4);
        let b = BiasList::new(vec![v.tokenize("Nelly").unwrap()], &v).unwrap();
        let r = rewrite_reference(&y, &b, "Hi Nelly");
        assert_eq!(r.tokens, vec![Token::Normal(v.id("Hi").unwrap()), Token::Bias(0)]);
        let dv = DynamicVocabulary::new(&v, &b);
        assert_eq!(dv.detokenize(&r.tokens).unwrap(), "Hi Nelly");
        assert_eq!(dv.display(Token::Bias(0)).unwrap(), "<Nelly>");
        assert_eq!(dv.detokenize(&[]).unwrap(), "");
        assert!(matches!(dv.detokenize(&[Token::Bias(1)]), Err(Error::Index(_))));
    }

    #[test]
    fn empty_list_is_identity() {
        let y = vec![6, 7, 8];
        let r = rewrite_reference(&y, &BiasList::empty(), "");
        assert_eq!(r.tokens, y.iter().map(|&i| Token::Normal(i)).collect::<Vec<_>>());
    }

    #[test]
    fn longest_match_wins() {
        let v = nelly();
        let (a, b, c) = (6, 7, 8);
        for phrases in [vec![vec![a, b], vec![a, b, c]], vec![vec![a, b, c], vec![a, b]]] {
            let list = BiasList::new(phrases.clone(), &v).unwrap();
            let r = rewrite_reference(&[a, b, c], &list, "");
            let long = phrases.iter().position(|p| p.len() == 3).unwrap();
            assert_eq!(r.tokens, vec![Token::Bias(long)]);
        }
        // Equal lengths: lowest index.
        let list = BiasList::new(vec![vec![a, b], vec![a, b]], &v).unwrap();
        assert_eq!(rewrite_reference(&[a, b], &list, "").tokens, vec![Token::Bias(0)]);
    }

    #[test]
    fn sampling_edge_cases() {
        let v = nelly();
        let mut rng = substream(1, "sampling");
        let cfg = TrainConfig {
            n_utt: 0,
            ..TrainConfig::default()
        };
        let s = sample_bias_list(&[vec![6, 7, 8]], &cfg, &v, &mut rng).unwrap();
        assert!(s.list.is_empty());

        let cfg = TrainConfig {
            n_utt: 1,
            i_min: 3,
            i_max: 3,
            ..TrainConfig::default()
        };
        let s = sample_bias_list(&[vec![6, 7, 8]], &cfg, &v, &mut rng).unwrap();
        assert_eq!(s.list.phrases(), &[vec![6, 7, 8]]);

        let s = sample_bias_list(&[vec![6, 7]], &cfg, &v, &mut rng).unwrap();
        assert!(s.list.is_empty());
        assert_eq!(s.clamped, 1);
    }
}
