//! Incremental CTC prefix probabilities for joint decoding.

use crate::error::{Error, Result};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward variables of one prefix: log-probabilities that frames `0..=t`
/// yield the prefix ending in a label (`r_n`) or in blank (`r_b`).
#[derive(Clone, Debug, PartialEq)]
pub struct CtcPrefixState {
    r_n: Vec<f64>,
    r_b: Vec<f64>,
    last: Option<usize>,
}

/// Scores prefixes against per-frame `T × W` log-probabilities.
#[derive(Clone, Debug)]
pub struct CtcPrefixScorer {
    lp: Vec<f64>,
    t_len: usize,
    width: usize,
    blank: usize,
}

impl CtcPrefixScorer {
    pub fn new(lp: Vec<f64>, t_len: usize, width: usize, blank: usize) -> Result<Self> {
        if lp.len() != t_len * width || t_len == 0 {
            return Err(Error::Dimension(format!("{} log-probabilities for {t_len}×{width} frames", lp.len())));
        }
        if blank >= width {
            return Err(Error::Index(format!("blank {blank} outside width {width}")));
        }
        Ok(Self { lp, t_len, width, blank })
    }

    fn x(&self, t: usize, k: usize) -> f64 {
        self.lp[t * self.width + k]
    }

    pub fn initial(&self) -> CtcPrefixState {
        let mut r_b = Vec::with_capacity(self.t_len);
        let mut acc = 0.0;
        for t in 0..self.t_len {
            acc += self.x(t, self.blank);
            r_b.push(acc);
        }
        CtcPrefixState {
            r_n: vec![NEG_INF; self.t_len],
            r_b,
            last: None,
        }
    }

    /// Prefix score `log P(h·c …)` of the extension and its state.
    pub fn extend(&self, g: &CtcPrefixState, c: usize) -> Result<(f64, CtcPrefixState)> {
        if c >= self.width || c == self.blank {
            return Err(Error::Index(format!("cannot extend a CTC prefix with label {c}")));
        }
        let t_len = self.t_len;
        let mut r_n = vec![NEG_INF; t_len];
        let mut r_b = vec![NEG_INF; t_len];
        // Mass available to start `c` right after frame t-1.
        let phi = |t: usize| {
            if g.last == Some(c) {
                g.r_b[t]
            } else {
                lse(g.r_n[t], g.r_b[t])
            }
        };
        if g.last.is_none() {
            r_n[0] = self.x(0, c);
        }
        let mut psi = r_n[0];
        for t in 1..t_len {
            let start = phi(t - 1);
            r_n[t] = lse(r_n[t - 1], start) + self.x(t, c);
            r_b[t] = lse(r_b[t - 1], r_n[t - 1]) + self.x(t, self.blank);
            psi = lse(psi, start + self.x(t, c));
        }
        Ok((
            psi,
            CtcPrefixState {
                r_n,
                r_b,
                last: Some(c),
            },
        ))
    }

    /// Probability that the whole output equals the prefix.
    pub fn full(&self, g: &CtcPrefixState) -> f64 {
        lse(g.r_n[self.t_len - 1], g.r_b[self.t_len - 1])
    }
}

/// `log P(output starts with prefix)`; zero for the empty prefix.
pub fn ctc_prefix_score(lp: &[f64], t_len: usize, width: usize, prefix: &[usize], blank: usize) -> Result<f64> {
    let scorer = CtcPrefixScorer::new(lp.to_vec(), t_len, width, blank)?;
    let mut state = scorer.initial();
    let mut score = 0.0;
    for &c in prefix {
        let (s, next) = scorer.extend(&state, c)?;
        score = s;
        state = next;
    }
    Ok(score)
}

/// `log P(output equals seq)`.
pub fn ctc_full_score(lp: &[f64], t_len: usize, width: usize, seq: &[usize], blank: usize) -> Result<f64> {
    let scorer = CtcPrefixScorer::new(lp.to_vec(), t_len, width, blank)?;
    let mut state = scorer.initial();
    for &c in seq {
        state = scorer.extend(&state, c)?.1;
    }
    Ok(scorer.full(&state))
}
