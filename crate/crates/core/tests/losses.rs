use dynvocab::losses::{
    attention_nll, brute_force_alignment_nll, ctc_loss, ctc_min_frames, rnnt_loss, utterance_objective, AlignmentMode,
    ExpandedReference,
};
use dynvocab::model::{Arch, BiasList, Model, ModelConfig, StaticVocabulary, Token};
use dynvocab::numerics::{check_gradients, Tensor};
use dynvocab::rng::substream;
use proptest::prelude::*;
use rand::Rng;

/// Row-wise log-softmax computed independently of the crate.
fn normalise(raw: &[f64], width: usize) -> Vec<f64> {
    raw.chunks(width)
        .flat_map(|row| {
            let z: f64 = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            row.iter().map(move |v| v - z).collect::<Vec<_>>()
        })
        .collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.iter().map(|&x| x as f32).collect()).unwrap()
}

fn case() -> impl Strategy<Value = (usize, usize, Vec<usize>, Vec<f64>, Vec<f64>)> {
    (1usize..=5, 2usize..=6, 0usize..=3).prop_flat_map(|(t, w, s)| {
        (
            Just(t),
            Just(w),
            prop::collection::vec(1..w, s),
            prop::collection::vec(-3.0f64..3.0, t * w),
            prop::collection::vec(-3.0f64..3.0, t * (s + 1) * w),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn alignment_losses_match_enumeration((t, w, labels, ctc_raw, rnnt_raw) in case()) {
        // Values are rounded through f32 first so both sides see identical
        // inputs.
        let ctc_lp: Vec<f64> = normalise(&ctc_raw, w).iter().map(|&x| x as f32 as f64).collect();
        let rnnt_lp: Vec<f64> = normalise(&rnnt_raw, w).iter().map(|&x| x as f32 as f64).collect();

        let brute = brute_force_alignment_nll(&rnnt_lp, t, w, &labels, 0, AlignmentMode::Rnnt).unwrap();
        let got = rnnt_loss(&tensor(&[t, labels.len() + 1, w], &rnnt_lp), &labels, 0).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - brute).abs() < 1e-5, "rnnt {} vs {}", got, brute);

        let ctc = ctc_loss(&tensor(&[t, w], &ctc_lp), &labels, 0);
        if t >= ctc_min_frames(&labels) {
            let brute = brute_force_alignment_nll(&ctc_lp, t, w, &labels, 0, AlignmentMode::Ctc).unwrap();
            let got = ctc.unwrap();
            prop_assert!(got >= 0.0);
            prop_assert!((got - brute).abs() < 1e-5, "ctc {} vs {}", got, brute);
        } else {
            prop_assert!(matches!(ctc, Err(dynvocab::Error::Infeasible(_))));
        }
    }

    #[test]
    fn attention_nll_is_shift_invariant(shift in -50.0f32..50.0, seed in 0u64..1000) {
        let v = StaticVocabulary::with_specials(["a", "b", "c", "d"]).unwrap();
        let mut rng = substream(seed, "logits");
        let logits = Tensor::from_fn(3, 8, |_, _| rng.random_range(-4.0f32..4.0));
        let shifted = Tensor::from_fn(3, 8, |r, c| logits.at(r, c) + shift);
        let r = ExpandedReference { tokens: vec![Token::Normal(3), Token::Bias(1)], source_text: String::new() };
        let a = attention_nll(&logits, &r, &v).unwrap();
        let b = attention_nll(&shifted, &r, &v).unwrap();
        prop_assert!((a - b).abs() < 1e-4 * a.abs().max(1.0));
    }
}

#[test]
fn attention_nll_matches_explicit_softmax() {
    let v = StaticVocabulary::with_specials(["a", "b", "c"]).unwrap();
    let mut rng = substream(3, "logits");
    let logits = Tensor::from_fn(2, 6, |_, _| rng.random_range(-2.0f32..2.0));
    let r = ExpandedReference {
        tokens: vec![Token::Bias(0)],
        source_text: String::new(),
    };
    // Targets: bias 0 sits at index K = 5, then eos = 1.
    let mut expect = 0.0f64;
    for (row, y) in [(0, 5), (1, 1)] {
        let e: Vec<f64> = (0..6).map(|c| f64::from(logits.at(row, c)).exp()).collect();
        expect -= (e[y] / e.iter().sum::<f64>()).ln();
    }
    assert!((attention_nll(&logits, &r, &v).unwrap() - expect).abs() < 1e-6);
}

fn tiny(arch: Arch) -> Model {
    let vocab = StaticVocabulary::with_specials(["a", "b", "c"]).unwrap();
    let config = ModelConfig {
        d: 4,
        heads: 2,
        ff_dim: 6,
        audio_blocks: 1,
        bias_blocks: 1,
        decoder_blocks: 1,
        vocab_size: vocab.len(),
        feat_dim: 2,
        joint_dim: 4,
        arch,
        ..ModelConfig::default()
    };
    Model::new(config, vocab).unwrap()
}

#[test]
fn hybrid_objective_gradients_pass_check() {
    for arch in [Arch::Attention, Arch::Transducer] {
        let m = tiny(arch);
        let mut rng = substream(5, "features");
        let frames = Tensor::from_fn(16, 2, |_, _| rng.random_range(-1.0f32..1.0));
        let list = BiasList::new(vec![vec![2, 3], vec![4]], &m.vocab).unwrap();
        let reference = ExpandedReference {
            tokens: vec![Token::Normal(3), Token::Bias(0)],
            source_text: String::new(),
        };
        let err = check_gradients::<f64, _>(&m.params, 1e-4, 400, |tape| {
            let v = m.bias.forward(tape, &list, m.vocab.blank_id(), m.vocab.sos_eos_id())?;
            Ok(utterance_objective(&m, tape, &frames, v, &reference, 0.3)?.total)
        })
        .unwrap();
        assert!(err < 1e-3, "{arch}: max relative error {err}");
    }
}
