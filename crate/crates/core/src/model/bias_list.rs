use super::vocab::StaticVocabulary;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Phrases that make up the dynamic vocabulary of one request or batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiasList {
    phrases: Vec<Vec<usize>>,
    texts: Vec<String>,
}

impl BiasList {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates every phrase and derives its display text.
    pub fn new(phrases: Vec<Vec<usize>>, vocab: &StaticVocabulary) -> Result<Self> {
        let mut texts = Vec::with_capacity(phrases.len());
        for (n, p) in phrases.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Validation(format!("bias phrase {n} is empty")));
            }
            if let Some(&bad) = p.iter().find(|&&id| !vocab.is_content(id)) {
                return Err(Error::Validation(format!(
                    "bias phrase {n} contains non-content token id {bad}"
                )));
            }
            texts.push(vocab.detokenize(p)?);
        }
        Ok(Self { phrases, texts })
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrases(&self) -> &[Vec<usize>] {
        &self.phrases
    }

    pub fn phrase(&self, n: usize) -> &[usize] {
        &self.phrases[n]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, n: usize) -> &str {
        &self.texts[n]
    }

    /// Longest phrase length, 0 for an empty list.
    pub fn max_len(&self) -> usize {
        self.phrases.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Reorders the list so that entry `i` of the result is entry `perm[i]`
    /// of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            phrases: perm.iter().map(|&i| self.phrases[i].clone()).collect(),
            texts: perm.iter().map(|&i| self.texts[i].clone()).collect(),
        }
    }

    /// Parses a bias-list file body: one phrase per line, blank lines
    /// ignored. Every line that does not segment is reported.
    pub fn parse(body: &str, vocab: &StaticVocabulary) -> Result<Self> {
        let mut phrases = Vec::new();
        let mut failures = Vec::new();
        for (lineno, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match vocab.tokenize(line) {
                Ok(ids) => phrases.push(ids),
                Err(e) => failures.push(format!("line {}: {e}", lineno + 1)),
            }
        }
        if !failures.is_empty() {
            return Err(Error::Validation(format!(
                "untokenizable bias phrases: {}",
                failures.join("; ")
            )));
        }
        Self::new(phrases, vocab)
    }

    pub fn to_file_body(&self) -> String {
        let mut s = String::new();
        for t in &self.texts {
            s.push_str(t);
            s.push('\n');
        }
        s
    }
}

/// Pooled phrase embeddings, one row per bias phrase (`N × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct PhraseEmbeddings {
    pub rows: Tensor,
}

impl PhraseEmbeddings {
    pub fn empty(d: usize) -> Self {
        Self {
            rows: Tensor::zeros(&[0, d]),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, n: usize) -> &[f32] {
        self.rows.row(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reports_line_numbers() {
        let v = StaticVocabulary::with_specials(["ka", "ro"]).unwrap();
        let err = BiasList::parse("ka ro\n\nzz\nro\nqq\n", &v).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("line 5"), "{err}");
        let ok = BiasList::parse("ka ro\n\nro\n", &v).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok.max_len(), 2);
        assert_eq!(ok.text(0), "ka ro");
    }

    #[test]
    fn rejects_specials_and_empty() {
        let v = StaticVocabulary::with_specials(["ka"]).unwrap();
        assert!(BiasList::new(vec![vec![0]], &v).is_err());
        assert!(BiasList::new(vec![vec![2, 1]], &v).is_err());
        assert!(BiasList::new(vec![vec![]], &v).is_err());
        assert_eq!(BiasList::empty().max_len(), 0);
    }
}
