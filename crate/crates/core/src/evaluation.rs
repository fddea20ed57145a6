//! Word error rate split into words inside bias phrases (B-WER) and
//! outside them (U-WER).

use std::collections::HashSet;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Match,
    Substitution,
    Deletion,
    Insertion,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentOp {
    pub kind: OpKind,
    pub ref_word: Option<String>,
    pub hyp_word: Option<String>,
}

fn distance_table<S: AsRef<str>>(r: &[S], h: &[S]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; h.len() + 1]; r.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=r.len() {
        for j in 1..=h.len() {
            let diag = d[i - 1][j - 1] + usize::from(r[i - 1].as_ref() != h[j - 1].as_ref());
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// Minimum-edit alignment with unit costs. The backtrace prefers match,
/// then substitution, deletion and insertion.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Vec<AlignmentOp> {
    let d = distance_table(reference, hypothesis);
    let (mut i, mut j) = (reference.len(), hypothesis.len());
    let mut ops = Vec::with_capacity(i.max(j));
    let word = |w: &S| Some(w.as_ref().to_string());
    while i > 0 || j > 0 {
        let op = if i > 0 && j > 0 && reference[i - 1].as_ref() == hypothesis[j - 1].as_ref() && d[i][j] == d[i - 1][j - 1] {
            OpKind::Match
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            OpKind::Substitution
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            OpKind::Deletion
        } else {
            OpKind::Insertion
        };
        let (ref_word, hyp_word) = match op {
            OpKind::Match | OpKind::Substitution => {
                i -= 1;
                j -= 1;
                (word(&reference[i]), word(&hypothesis[j]))
            }
            OpKind::Deletion => {
                i -= 1;
                (word(&reference[i]), None)
            }
            OpKind::Insertion => {
                j -= 1;
                (None, word(&hypothesis[j]))
            }
        };
        ops.push(AlignmentOp { kind: op, ref_word, hyp_word });
    }
    ops.reverse();
    ops
}

/// Marks reference words covered by a bias-phrase occurrence, matching the
/// longest phrase first while scanning left to right.
pub fn bias_word_mask<S: AsRef<str>>(reference: &[S], phrases: &[Vec<String>]) -> Vec<bool> {
    let mut mask = vec![false; reference.len()];
    let mut i = 0;
    while i < reference.len() {
        let longest = phrases
            .iter()
            .filter(|p| !p.is_empty() && i + p.len() <= reference.len())
            .filter(|p| p.iter().zip(&reference[i..]).all(|(a, b)| a == b.as_ref()))
            .map(Vec::len)
            .max();
        match longest {
            Some(n) => {
                mask[i..i + n].iter_mut().for_each(|m| *m = true);
                i += n;
            }
            None => i += 1,
        }
    }
    mask
}

/// Insertions are charged to the bias class when the inserted word occurs
/// in any bias phrase.
pub fn insertion_is_bias(word: &str, bias_words: &HashSet<&str>) -> bool {
    bias_words.contains(word)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl ClassCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Error fraction; zero when the class has no reference words.
    pub fn rate(&self) -> f64 {
        if self.ref_words == 0 {
            0.0
        } else {
            self.errors() as f64 / self.ref_words as f64
        }
    }

    fn add(&mut self, other: &ClassCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_words += other.ref_words;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BiasedScore {
    pub unbiased: ClassCounts,
    pub biased: ClassCounts,
}

impl BiasedScore {
    pub fn total(&self) -> ClassCounts {
        let mut t = self.unbiased;
        t.add(&self.biased);
        t
    }

    pub fn wer(&self) -> f64 {
        self.total().rate()
    }

    pub fn u_wer(&self) -> f64 {
        self.unbiased.rate()
    }

    pub fn b_wer(&self) -> f64 {
        self.biased.rate()
    }

    /// False when no reference word belongs to a bias phrase, in which case
    /// B-WER is reported as zero.
    pub fn has_bias_words(&self) -> bool {
        self.biased.ref_words > 0
    }

    /// Headline line followed by `key=value` counts.
    pub fn report(&self) -> String {
        let t = self.total();
        let mut out = format!("WER (U-WER/B-WER)\n{self}\n");
        let mut kv = crate::kv::Writer::default();
        kv.put("wer", format!("{:.2}", 100.0 * self.wer()))
            .put("u_wer", format!("{:.2}", 100.0 * self.u_wer()))
            .put("b_wer", format!("{:.2}", 100.0 * self.b_wer()))
            .put("b_wer_defined", self.has_bias_words());
        for (name, c) in [("total", &t), ("unbiased", &self.unbiased), ("biased", &self.biased)] {
            kv.put(&format!("{name}_ref_words"), c.ref_words)
                .put(&format!("{name}_sub"), c.substitutions)
                .put(&format!("{name}_del"), c.deletions)
                .put(&format!("{name}_ins"), c.insertions)
                .put(&format!("{name}_errors"), c.errors());
        }
        out.push_str(&kv.finish());
        out
    }
}

impl fmt::Display for BiasedScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2}/{:.2})", 100.0 * self.wer(), 100.0 * self.u_wer(), 100.0 * self.b_wer())
    }
}

/// Adds one utterance's alignment errors to `score`.
pub fn score_utterance<S: AsRef<str>>(score: &mut BiasedScore, reference: &[S], hypothesis: &[S], phrases: &[Vec<String>]) {
    let mask = bias_word_mask(reference, phrases);
    let bias_words: HashSet<&str> = phrases.iter().flatten().map(String::as_str).collect();
    for &b in &mask {
        if b {
            score.biased.ref_words += 1;
        } else {
            score.unbiased.ref_words += 1;
        }
    }
    let mut i = 0;
    for op in align(reference, hypothesis) {
        let class = match op.kind {
            OpKind::Insertion => {
                let w = op.hyp_word.as_deref().unwrap_or_default();
                insertion_is_bias(w, &bias_words)
            }
            _ => {
                i += 1;
                mask[i - 1]
            }
        };
        let counts = if class { &mut score.biased } else { &mut score.unbiased };
        match op.kind {
            OpKind::Match => {}
            OpKind::Substitution => counts.substitutions += 1,
            OpKind::Deletion => counts.deletions += 1,
            OpKind::Insertion => counts.insertions += 1,
        }
    }
}

/// Scores whitespace-separated reference and hypothesis texts.
pub fn score_biased<S: AsRef<str>>(refs: &[S], hyps: &[S], phrases: &[Vec<String>]) -> BiasedScore {
    let mut score = BiasedScore::default();
    for (r, h) in refs.iter().zip(hyps) {
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        score_utterance(&mut score, &r, &h, phrases);
    }
    score
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn alignment_examples() {
        let ops = align(&words("a b c"), &words("a b c"));
        assert!(ops.iter().all(|o| o.kind == OpKind::Match));
        let ops = align(&words("a"), &[]);
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].kind, OpKind::Deletion);
        let kinds: Vec<OpKind> = align(&words("hi nelly"), &words("hi kelly")).iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![OpKind::Match, OpKind::Substitution]);
    }

    #[test]
    fn hi_nelly_attribution() {
        let bias = vec![vec!["nelly".to_string()]];
        let same = score_biased(&["hi nelly"], &["hi nelly"], &bias);
        assert_eq!((same.wer(), same.u_wer(), same.b_wer()), (0.0, 0.0, 0.0));
        let s = score_biased(&["hi nelly"], &["hi kelly"], &bias);
        assert_eq!(s.unbiased, ClassCounts { ref_words: 1, ..Default::default() });
        assert_eq!(s.biased.errors(), 1);
        assert_eq!(s.biased.ref_words, 1);
        assert_eq!(s.wer(), 0.5);
        assert_eq!(s.to_string(), "50.00 (0.00/100.00)");
    }

    #[test]
    fn empty_bias_list_degenerates() {
        let s = score_biased(&["a b c"], &["a x"], &[]);
        assert!(!s.has_bias_words());
        assert_eq!(s.b_wer(), 0.0);
        assert_eq!(s.wer(), s.u_wer());
        assert!(s.report().contains("b_wer_defined=false"));
    }

    #[test]
    fn longest_match_marking() {
        let bias = vec![vec!["a".to_string()], vec!["a".to_string(), "b".to_string()]];
        assert_eq!(bias_word_mask(&words("x a b a"), &bias), vec![false, true, true, true]);
    }

    #[test]
    fn insertion_attribution() {
        let bias = vec![vec!["nelly".to_string()]];
        let s = score_biased(&["hi"], &["hi nelly there"], &bias);
        assert_eq!(s.biased.insertions, 1);
        assert_eq!(s.unbiased.insertions, 1);
    }
}
