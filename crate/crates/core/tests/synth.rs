use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dynvocab::rng::substream;
use dynvocab::synth::{build_codebook, gen_corpus, read_manifest, read_pairs, synth_utterance, vocabulary, Chain, SynthConfig};

fn config() -> SynthConfig {
    SynthConfig {
        num_train: 300,
        num_eval: 40,
        ..SynthConfig::default()
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn reserved_phrases_never_occur_in_training() {
    let dir = tempfile::tempdir().unwrap();
    let paths = gen_corpus(&config(), dir.path()).unwrap();
    let train: Vec<Vec<String>> = read_manifest(&paths.train())
        .unwrap()
        .iter()
        .map(|e| e.text.split(' ').map(str::to_string).collect())
        .collect();
    let eval = read_manifest(&paths.eval()).unwrap();
    let targets = read_pairs(&paths.eval_targets(), "targets").unwrap();
    assert_eq!(targets.len(), eval.len());
    for ((utt, phrase), entry) in targets.iter().zip(&eval) {
        assert_eq!(utt, &entry.utt_id);
        let p: Vec<&str> = phrase.split(' ').collect();
        assert!((3..=5).contains(&p.len()));
        let words: Vec<&str> = entry.text.split(' ').collect();
        assert!(words.windows(p.len()).any(|w| w == p.as_slice()), "{utt} lacks {phrase}");
        for sentence in &train {
            for start in 0..sentence.len() {
                let end = (start + p.len()).min(sentence.len());
                assert_ne!(&sentence[start..end], p.as_slice());
            }
        }
    }
    let list = fs::read_to_string(paths.eval_bias_list()).unwrap();
    assert!(list.lines().count() >= targets.iter().map(|t| &t.1).collect::<std::collections::HashSet<_>>().len() + 5);
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig {
        num_train: 40,
        num_eval: 10,
        ..SynthConfig::default()
    };
    gen_corpus(&cfg, a.path()).unwrap();
    gen_corpus(&cfg, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 4 + 40 + 10 + 3);
    assert_eq!(ta, tb);
}

#[test]
fn noise_free_frames_classify_perfectly() {
    let cfg = SynthConfig {
        noise_std: 0.0,
        ..config()
    };
    let vocab = vocabulary(&cfg).unwrap();
    let cb = build_codebook(&cfg).unwrap();
    let chain = Chain::build(&cfg).unwrap();
    let content: Vec<usize> = vocab.content_ids().collect();
    for i in 0..50u64 {
        let mut rng = substream(i, "centroid");
        let words = chain.sentence(8, &mut rng);
        let tokens: Vec<usize> = words.iter().map(|&w| content[w]).collect();
        let utt = synth_utterance("u", &tokens, &cb, &cfg, &mut rng).unwrap();
        let frames = &utt.features.frames;
        let mut decoded = Vec::new();
        for t in 0..frames.rows() {
            let nearest = (0..cb.rows())
                .min_by(|&a, &b| {
                    let d = |r: usize| -> f32 { cb.row(r).iter().zip(frames.row(t)).map(|(x, y)| (x - y).powi(2)).sum() };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            if decoded.last() != Some(&nearest) {
                decoded.push(nearest);
            }
        }
        assert_eq!(decoded, words);
    }
}

#[test]
fn fixed_seed_replays_features() {
    let cfg = config();
    let cb = build_codebook(&cfg).unwrap();
    let run = || synth_utterance("u", &[2, 5, 9], &cb, &cfg, &mut substream(3, "replay")).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.features.frames.data(), b.features.frames.data());
    let raw = a.features.frames.rows();
    assert!((3 * cfg.frames_per_token.0..=3 * cfg.frames_per_token.1).contains(&raw));
}
