use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` builds the loss on the tape it is handed. Perturbations are
/// applied on the tape in `T` precision, so the store is never modified.
/// At most `max_entries` entries are probed (a fixed-seed subsample when the
/// model is larger). Returns the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn check_gradients<T, F>(store: &ParamStore, epsilon: f64, max_entries: usize, loss_fn: F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    if !(1e-5..=1e-3).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [1e-5, 1e-3]")));
    }
    let mut tape = Tape::<T>::new(store);
    let loss = loss_fn(&mut tape)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value:?}")));
    }
    let grads = tape.backward(loss)?;

    let entries: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).value.numel()).map(move |e| (id, e)))
        .collect();
    let probe: Vec<(ParamId, usize)> = if entries.len() <= max_entries {
        entries
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let mut picked: Vec<usize> = sample(&mut rng, entries.len(), max_entries).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| entries[i]).collect()
    };

    let eval = |id: ParamId, entry: usize, delta: f64| -> Result<f64> {
        let mut t = Tape::<T>::with_nudge(store, id, entry, T::lit(delta));
        let l = loss_fn(&mut t)?;
        let v = t.scalar_value(l).to_f64().unwrap();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("perturbed loss is {v}")));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for (id, entry) in probe {
        let analytic = grads
            .param_grad(id)
            .map_or(0.0, |g| g.data()[entry].to_f64().unwrap());
        let numeric = (eval(id, entry, epsilon)? - eval(id, entry, -epsilon)?) / (2.0 * epsilon);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::Init;
    use crate::numerics::tensor::Tensor;

    fn store_with(shape: &[usize], seed: u64) -> (ParamStore, ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let id = store.add("w", shape, Init::Uniform { fan_in: 1 }, &mut rng);
        (store, id)
    }

    #[test]
    fn sum_of_squares_is_exact() {
        let (store, id) = store_with(&[1, 6], 1);
        let err = check_gradients::<f64, _>(&store, 1e-4, 1000, |t| {
            let w = t.param(id);
            let sq = t.mul(w, w)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn empty_model_is_vacuous() {
        let store = ParamStore::new();
        let err = check_gradients::<f64, _>(&store, 1e-4, 10, |t| {
            let c = t.constant(&Tensor::scalar(2.0));
            Ok(t.sum(c))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_finite_loss() {
        let (store, id) = store_with(&[1, 2], 2);
        let r = check_gradients::<f64, _>(&store, 1e-4, 10, |t| {
            let w = t.param(id);
            let s = t.scale(w, f64::INFINITY);
            Ok(t.sum(s))
        });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn rejects_epsilon_outside_range() {
        let store = ParamStore::new();
        let r = check_gradients::<f64, _>(&store, 0.1, 10, |t| {
            let c = t.constant(&Tensor::scalar(1.0));
            Ok(t.sum(c))
        });
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    /// Every primitive with a hand-written adjoint, composed into one loss.
    #[test]
    fn primitive_adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let a = store.add("a", &[3, 4], Init::Uniform { fan_in: 1 }, &mut rng);
        let b = store.add("b", &[4, 5], Init::Uniform { fan_in: 1 }, &mut rng);
        let c = store.add("c", &[2, 4], Init::Uniform { fan_in: 1 }, &mut rng);
        let bias = store.add("bias", &[5], Init::Uniform { fan_in: 1 }, &mut rng);
        let gain = store.add("gain", &[5], Init::Uniform { fan_in: 1 }, &mut rng);
        let err = check_gradients::<f64, _>(&store, 1e-4, 10_000, |t| {
            let (a, b, c, bias, gain) = (t.param(a), t.param(b), t.param(c), t.param(bias), t.param(gain));
            let ab = t.matmul(a, b)?;
            let ab = t.add_row(ab, bias)?;
            let ln = t.layer_norm_rows(ab, gain, bias)?;
            let th = t.tanh(ln);
            let sg = t.sigmoid(ab);
            let prod = t.mul(th, sg)?;
            let ca = t.matmul_nt(c, a)?; // 2x3
            let sm = t.softmax_rows(ca);
            let mixed = t.matmul(sm, prod)?; // 2x5
            let rl = t.relu(mixed);
            let lsm = t.log_softmax_rows(mixed);
            let cat = t.concat_cols(&[rl, lsm])?;
            let sl = t.slice_cols(cat, 3, 5)?;
            let rows = t.concat_rows(&[sl, prod])?;
            let sr = t.slice_rows(rows, 1, 3)?;
            let g = t.gather_rows(sr, &[0, 2, 2])?;
            let resh = t.reshape(g, 15, 1)?;
            let resh = t.reshape(resh, 3, 5)?;
            let o = t.outer_add_rows(resh, sr)?;
            let o = t.reshape(o, 15 * 3, 1)?;
            let m = t.mean_rows(o)?;
            let p = t.pick(lsm, &[0, 7, 9])?;
            let sp = t.sum(p);
            let both = t.concat_cols(&[m, sp])?;
            let sc = t.scale(both, 0.7);
            Ok(t.sum(sc))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
