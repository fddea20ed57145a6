//! CTC and transducer alignment likelihoods by forward-backward, plus an
//! exhaustive enumeration used to check them.
//!
//! Log-probabilities arrive as row-major `f64` slices of width `W = K+N`:
//! CTC uses `T × W`, the transducer lattice `T·(S+1) × W` with row
//! `t·(S+1) + s`. Returned gradients are with respect to those entries.

use crate::error::{Error, Result};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse2(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// An alignment's negative log-likelihood and its gradient.
#[derive(Clone, Debug)]
pub struct AlignmentLoss {
    pub nll: f64,
    pub grad: Vec<f64>,
}

fn check_shape(log_probs: &[f64], rows: usize, width: usize, labels: &[usize], blank: usize) -> Result<()> {
    if log_probs.len() != rows * width {
        return Err(Error::Dimension(format!(
            "{} log-probabilities for a {rows}×{width} layout",
            log_probs.len()
        )));
    }
    if blank >= width {
        return Err(Error::Index(format!("blank id {blank} outside width {width}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= width || l == blank) {
        return Err(Error::Validation(format!("reference label {bad} is blank or outside width {width}")));
    }
    Ok(())
}

/// Fewest frames that can carry `labels` under CTC.
pub fn ctc_min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC over `t_len × width` per-frame log-probabilities.
pub fn ctc(log_probs: &[f64], t_len: usize, width: usize, labels: &[usize], blank: usize) -> Result<AlignmentLoss> {
    check_shape(log_probs, t_len, width, labels, blank)?;
    let need = ctc_min_frames(labels);
    if t_len < need.max(1) {
        return Err(Error::Infeasible(format!(
            "{t_len} frames cannot carry {} labels ({need} frames needed)",
            labels.len()
        )));
    }
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    let l = ext.len();
    let lp = |t: usize, s: usize| log_probs[t * width + ext[s]];
    // A skip from s-2 to s is allowed onto a label differing from the one
    // two back.
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![NEG_INF; t_len * l];
    alpha[0] = lp(0, 0);
    if l > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..l {
            let prev = &alpha[(t - 1) * l..t * l];
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            alpha[t * l + s] = if a == NEG_INF { NEG_INF } else { a + lp(t, s) };
        }
    }
    let last = &alpha[(t_len - 1) * l..];
    let ll = if l > 1 { lse2(last[l - 1], last[l - 2]) } else { last[0] };
    if !ll.is_finite() {
        return Err(Error::Numeric(format!("CTC log-likelihood is {ll}")));
    }

    let mut beta = vec![NEG_INF; t_len * l];
    beta[(t_len - 1) * l + l - 1] = 0.0;
    if l > 1 {
        beta[(t_len - 1) * l + l - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..l {
            let next = |s2: usize| beta[(t + 1) * l + s2] + lp(t + 1, s2);
            let mut b = next(s);
            if s + 1 < l {
                b = lse2(b, next(s + 1));
            }
            if s + 2 < l && skip(s + 2) {
                b = lse2(b, next(s + 2));
            }
            beta[t * l + s] = b;
        }
    }

    let mut grad = vec![0.0; log_probs.len()];
    for t in 0..t_len {
        for s in 0..l {
            let occ = alpha[t * l + s] + beta[t * l + s] - ll;
            if occ > NEG_INF {
                grad[t * width + ext[s]] -= occ.exp();
            }
        }
    }
    Ok(AlignmentLoss { nll: -ll, grad })
}

/// Transducer loss over the `t_len·(S+1) × width` lattice. Every alignment
/// ends with a blank emitted at `(T-1, S)`.
pub fn rnnt(lattice: &[f64], t_len: usize, width: usize, labels: &[usize], blank: usize) -> Result<AlignmentLoss> {
    let u = labels.len() + 1;
    check_shape(lattice, t_len * u, width, labels, blank)?;
    if t_len == 0 {
        return Err(Error::Infeasible("transducer loss over zero frames".into()));
    }
    let blank_at = |t: usize, s: usize| lattice[(t * u + s) * width + blank];
    let label_at = |t: usize, s: usize| lattice[(t * u + s) * width + labels[s]];

    let mut alpha = vec![NEG_INF; t_len * u];
    for t in 0..t_len {
        for s in 0..u {
            alpha[t * u + s] = if t == 0 && s == 0 {
                0.0
            } else {
                let from_left = if t > 0 { alpha[(t - 1) * u + s] + blank_at(t - 1, s) } else { NEG_INF };
                let from_below = if s > 0 { alpha[t * u + s - 1] + label_at(t, s - 1) } else { NEG_INF };
                lse2(from_left, from_below)
            };
        }
    }
    let ll = alpha[t_len * u - 1] + blank_at(t_len - 1, u - 1);
    if !ll.is_finite() {
        return Err(Error::Numeric(format!("transducer log-likelihood is {ll}")));
    }

    let mut beta = vec![NEG_INF; t_len * u];
    for t in (0..t_len).rev() {
        for s in (0..u).rev() {
            beta[t * u + s] = if t == t_len - 1 && s == u - 1 {
                blank_at(t, s)
            } else {
                let right = if t + 1 < t_len { blank_at(t, s) + beta[(t + 1) * u + s] } else { NEG_INF };
                let up = if s + 1 < u { label_at(t, s) + beta[t * u + s + 1] } else { NEG_INF };
                lse2(right, up)
            };
        }
    }

    let mut grad = vec![0.0; lattice.len()];
    for t in 0..t_len {
        for s in 0..u {
            let a = alpha[t * u + s];
            let after_blank = if t + 1 < t_len {
                beta[(t + 1) * u + s]
            } else if s == u - 1 {
                0.0
            } else {
                NEG_INF
            };
            let g = a + blank_at(t, s) + after_blank - ll;
            grad[(t * u + s) * width + blank] -= g.exp();
            if s + 1 < u {
                let g = a + label_at(t, s) + beta[t * u + s + 1] - ll;
                grad[(t * u + s) * width + labels[s]] -= g.exp();
            }
        }
    }
    Ok(AlignmentLoss { nll: -ll, grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentMode {
    Ctc,
    Rnnt,
}

pub const BRUTE_FORCE_MAX_FRAMES: usize = 8;
pub const BRUTE_FORCE_MAX_LABELS: usize = 4;
pub const BRUTE_FORCE_MAX_WIDTH: usize = 12;

/// Sums every alignment path explicitly. Refuses inputs beyond
/// `T ≤ 8`, `S ≤ 4`, `W ≤ 12`.
pub fn brute_force_alignment_nll(
    log_probs: &[f64],
    t_len: usize,
    width: usize,
    labels: &[usize],
    blank: usize,
    mode: AlignmentMode,
) -> Result<f64> {
    if t_len > BRUTE_FORCE_MAX_FRAMES || labels.len() > BRUTE_FORCE_MAX_LABELS || width > BRUTE_FORCE_MAX_WIDTH {
        return Err(Error::Guard(format!(
            "T={t_len}, S={}, W={width} exceeds T≤{BRUTE_FORCE_MAX_FRAMES}, S≤{BRUTE_FORCE_MAX_LABELS}, W≤{BRUTE_FORCE_MAX_WIDTH}",
            labels.len()
        )));
    }
    let rows = match mode {
        AlignmentMode::Ctc => t_len,
        AlignmentMode::Rnnt => t_len * (labels.len() + 1),
    };
    check_shape(log_probs, rows, width, labels, blank)?;
    let total = match mode {
        AlignmentMode::Ctc => brute_ctc(log_probs, t_len, width, labels, blank),
        AlignmentMode::Rnnt => brute_rnnt(log_probs, t_len, width, labels, blank),
    };
    if total == 0.0 {
        return Err(Error::Infeasible("no alignment has non-zero probability".into()));
    }
    Ok(-total.ln())
}

/// Frame paths over `{blank} ∪ labels`; any other symbol cannot collapse
/// to the reference.
fn brute_ctc(lp: &[f64], t_len: usize, width: usize, labels: &[usize], blank: usize) -> f64 {
    let mut alphabet = vec![blank];
    for &l in labels {
        if !alphabet.contains(&l) {
            alphabet.push(l);
        }
    }
    let a = alphabet.len();
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    for code in 0..a.pow(t_len as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = alphabet[c % a];
            c /= a;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &sym in &path {
            if Some(sym) != prev && sym != blank {
                collapsed.push(sym);
            }
            prev = Some(sym);
        }
        if collapsed == labels {
            let logp: f64 = path.iter().enumerate().map(|(t, &k)| lp[t * width + k]).sum();
            total += logp.exp();
        }
    }
    total
}

/// Interleavings of `S` label emissions among `T-1+S` slots, followed by
/// the final blank.
fn brute_rnnt(lp: &[f64], t_len: usize, width: usize, labels: &[usize], blank: usize) -> f64 {
    let u = labels.len() + 1;
    let slots = t_len - 1 + labels.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << slots) {
        if mask.count_ones() as usize != labels.len() {
            continue;
        }
        let (mut t, mut s, mut logp) = (0, 0, 0.0);
        for i in 0..slots {
            let row = (t * u + s) * width;
            if mask & (1 << i) != 0 {
                logp += lp[row + labels[s]];
                s += 1;
            } else {
                logp += lp[row + blank];
                t += 1;
            }
        }
        logp += lp[(t * u + s) * width + blank];
        total += logp.exp();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_HALF: f64 = -std::f64::consts::LN_2;

    #[test]
    fn ctc_hand_examples() {
        // width 2: blank = 0, a = 1, uniform.
        let cases: [(usize, &[usize], f64); 3] = [(1, &[1], 0.5), (2, &[1], 0.75), (3, &[1, 1], 0.125)];
        for (t, labels, p) in cases {
            let lp = vec![LN_HALF; t * 2];
            let got = ctc(&lp, t, 2, labels, 0).unwrap().nll;
            assert!((got + p.ln()).abs() < 1e-12, "T={t}");
            let brute = brute_force_alignment_nll(&lp, t, 2, labels, 0, AlignmentMode::Ctc).unwrap();
            assert!((brute - got).abs() < 1e-6);
        }
    }

    #[test]
    fn ctc_infeasible_is_distinct() {
        let lp = vec![LN_HALF; 2 * 2];
        assert!(matches!(ctc(&lp, 2, 2, &[1, 1], 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn rnnt_hand_examples() {
        let third = (1.0f64 / 3.0).ln();
        let lp = vec![third; 2 * 2 * 3];
        let got = rnnt(&lp, 2, 3, &[1], 0).unwrap().nll;
        assert!((got + (2.0f64 / 27.0).ln()).abs() < 1e-12);

        // T=1, S=1: emit y at (0,0), blank at (0,1).
        let lp: Vec<f64> = [0.2f64, 0.5, 0.3, 0.6, 0.1, 0.3].iter().map(|p| p.ln()).collect();
        let got = rnnt(&lp, 1, 3, &[1], 0).unwrap().nll;
        assert!((got + (0.5f64 * 0.6).ln()).abs() < 1e-12);
        let brute = brute_force_alignment_nll(&lp, 1, 3, &[1], 0, AlignmentMode::Rnnt).unwrap();
        assert!((brute - got).abs() < 1e-6);
    }

    #[test]
    fn empty_reference_is_one_blank() {
        let lp: Vec<f64> = [0.25f64, 0.75].iter().map(|p| p.ln()).collect();
        for mode in [AlignmentMode::Ctc, AlignmentMode::Rnnt] {
            let b = brute_force_alignment_nll(&lp, 1, 2, &[], 0, mode).unwrap();
            assert!((b + 0.25f64.ln()).abs() < 1e-12);
        }
        assert!((ctc(&lp, 1, 2, &[], 0).unwrap().nll + 0.25f64.ln()).abs() < 1e-12);
        assert!((rnnt(&lp, 1, 2, &[], 0).unwrap().nll + 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn guard_refuses_large_inputs() {
        let lp = vec![0.0; 9 * 2];
        assert!(matches!(
            brute_force_alignment_nll(&lp, 9, 2, &[1], 0, AlignmentMode::Ctc),
            Err(Error::Guard(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let width = 4;
        let raw: Vec<f64> = (0..5 * 3 * width).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let norm = |x: &[f64], rows: usize| -> Vec<f64> {
            let mut out = x.to_vec();
            for r in 0..rows {
                let row = &mut out[r * width..(r + 1) * width];
                let m = row.iter().copied().fold(NEG_INF, f64::max);
                let z = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= z);
            }
            out
        };
        // The losses are differentiated with respect to the log-probability
        // entries themselves, as if they were free inputs.
        let check = |lp: &[f64], f: &dyn Fn(&[f64]) -> AlignmentLoss| {
            let g = f(lp).grad;
            for i in 0..lp.len() {
                let mut plus = lp.to_vec();
                plus[i] += 1e-6;
                let mut minus = lp.to_vec();
                minus[i] -= 1e-6;
                let fd = (f(&plus).nll - f(&minus).nll) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-6, "entry {i}: {fd} vs {}", g[i]);
            }
        };
        let lp = norm(&raw[..5 * width], 5);
        check(&lp, &|x| ctc(x, 5, width, &[1, 2], 0).unwrap());
        let lp = norm(&raw, 15);
        check(&lp, &|x| rnnt(x, 5, width, &[3, 3], 0).unwrap());
    }
}
