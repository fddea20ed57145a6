use crate::error::{Error, Result};

/// `[1; K] ++ [μ; N]`.
pub fn bias_weight_vector(k: usize, n: usize, mu: f64) -> Result<Vec<f64>> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!("bias weight mu={mu} must be finite and non-negative")));
    }
    let mut w = vec![1.0; k + n];
    w[k..].iter_mut().for_each(|x| *x = mu);
    Ok(w)
}

/// `log(w_j exp(α_j) / Σ_k w_k exp(α_k))`, i.e. log-softmax of `α + log w`
/// with `log 0 = -∞`.
pub fn weighted_log_softmax(alpha: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != w.len() {
        return Err(Error::Dimension(format!("{} scores, {} weights", alpha.len(), w.len())));
    }
    if let Some(bad) = w.iter().find(|x| x.is_nan() || **x < 0.0) {
        return Err(Error::Domain(format!("negative bias weight {bad}")));
    }
    let mut x: Vec<f64> = alpha
        .iter()
        .zip(w)
        .map(|(&a, &wj)| if wj == 1.0 { a } else { a + wj.ln() })
        .collect();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("weighted softmax has no finite mass".into()));
    }
    let sum: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    x.iter_mut().for_each(|v| *v -= lse);
    Ok(x)
}

pub fn weighted_softmax(alpha: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    Ok(weighted_log_softmax(alpha, w)?.into_iter().map(f64::exp).collect())
}
