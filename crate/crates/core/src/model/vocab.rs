use std::collections::HashMap;

use crate::error::{Error, Result};

/// Prefix marking a subword piece that continues the previous word.
pub const CONTINUATION: &str = "##";

/// The fixed token inventory a model is trained over, blank and sos/eos
/// included.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticVocabulary {
    tokens: Vec<String>,
    blank_id: usize,
    sos_eos_id: usize,
    index: HashMap<String, usize>,
}

impl StaticVocabulary {
    pub fn new(tokens: Vec<String>, blank_id: usize, sos_eos_id: usize) -> Result<Self> {
        if blank_id == sos_eos_id {
            return Err(Error::Validation("blank and sos/eos must differ".into()));
        }
        if blank_id >= tokens.len() || sos_eos_id >= tokens.len() {
            return Err(Error::Validation("special token id outside the vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("token {i} {t:?} is empty or has whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            blank_id,
            sos_eos_id,
            index,
        })
    }

    /// Vocabulary with `<blank>` at 0, `<sos/eos>` at 1, then `content`.
    pub fn with_specials<S: Into<String>>(content: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut tokens = vec!["<blank>".to_string(), "<sos/eos>".to_string()];
        tokens.extend(content.into_iter().map(Into::into));
        Self::new(tokens, 0, 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> usize {
        self.blank_id
    }

    pub fn sos_eos_id(&self) -> usize {
        self.sos_eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// True for ids that may appear in transcripts and bias phrases.
    pub fn is_content(&self, id: usize) -> bool {
        id < self.tokens.len() && id != self.blank_id && id != self.sos_eos_id
    }

    pub fn content_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tokens.len()).filter(|&i| self.is_content(i))
    }

    /// Greedy longest-prefix segmentation of whitespace-separated words.
    /// The first piece of a word is looked up as-is, later pieces with the
    /// continuation prefix.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut rest = word;
            let mut first = true;
            while !rest.is_empty() {
                let mut found = None;
                for end in (1..=rest.len()).rev().filter(|&e| rest.is_char_boundary(e)) {
                    let piece = &rest[..end];
                    let key = if first {
                        piece.to_string()
                    } else {
                        format!("{CONTINUATION}{piece}")
                    };
                    if let Some(id) = self.id(&key).filter(|&id| self.is_content(id)) {
                        found = Some((id, end));
                        break;
                    }
                }
                let (id, end) = found
                    .ok_or_else(|| Error::Validation(format!("cannot segment {rest:?} in word {word:?}")))?;
                out.push(id);
                rest = &rest[end..];
                first = false;
            }
        }
        Ok(out)
    }

    /// Joins tokens with spaces, gluing continuation pieces to the previous
    /// word. Special tokens are dropped.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::Index(format!("token id {id} of {}", self.len())))?;
            if !self.is_content(id) {
                continue;
            }
            match tok.strip_prefix(CONTINUATION) {
                Some(piece) if !out.is_empty() => out.push_str(piece),
                Some(piece) => out.push_str(piece),
                None => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        Ok(out)
    }
}

/// A label of the expanded output space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    /// Static-vocabulary id (sos/eos included).
    Normal(usize),
    /// Index into the current bias list.
    Bias(usize),
    Blank,
}

impl Token {
    /// Position in the concatenated `[normal | bias]` score vector.
    pub fn expanded_index(self, vocab: &StaticVocabulary) -> usize {
        match self {
            Token::Normal(i) => i,
            Token::Bias(n) => vocab.len() + n,
            Token::Blank => vocab.blank_id(),
        }
    }

    pub fn from_expanded(index: usize, vocab: &StaticVocabulary) -> Token {
        if index == vocab.blank_id() {
            Token::Blank
        } else if index < vocab.len() {
            Token::Normal(index)
        } else {
            Token::Bias(index - vocab.len())
        }
    }
}
