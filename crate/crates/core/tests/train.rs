use dynvocab::biasing::rewrite_reference;
use dynvocab::losses::{utterance_objective, TrainConfig};
use dynvocab::model::{Arch, BiasList, Model, ModelConfig, Token};
use dynvocab::numerics::Tape;
use dynvocab::rng::substream;
use dynvocab::synth::{build_codebook, synth_utterance, vocabulary, SynthConfig};
use dynvocab::train::{clip_gradients, learning_rate, Adam, Example};
use rand::Rng;

fn batch(synth: &SynthConfig, model: &Model) -> Vec<Example> {
    let codebook = build_codebook(synth).unwrap();
    let content: Vec<usize> = model.vocab.content_ids().collect();
    let mut rng = substream(5, "memorize");
    (0..4)
        .map(|i| {
            let tokens: Vec<usize> = (0..4).map(|_| content[rng.random_range(0..content.len())]).collect();
            let utt = synth_utterance(&format!("m{i}"), &tokens, &codebook, synth, &mut rng).unwrap();
            Example {
                utt_id: utt.features.utt_id.clone(),
                text: model.vocab.detokenize(&tokens).unwrap(),
                tokens,
                frames: utt.features.frames,
            }
        })
        .collect()
}

fn memorizes(arch: Arch) {
    let synth = SynthConfig {
        k_content: 8,
        feat_dim: 8,
        noise_std: 0.0,
        ..SynthConfig::default()
    };
    let vocab = vocabulary(&synth).unwrap();
    let config = ModelConfig {
        d: 16,
        heads: 2,
        ff_dim: 32,
        audio_blocks: 1,
        bias_blocks: 1,
        decoder_blocks: 1,
        joint_dim: 16,
        vocab_size: vocab.len(),
        feat_dim: synth.feat_dim,
        arch,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, vocab).unwrap();
    let examples = batch(&synth, &model);
    let list = BiasList::new(vec![examples[0].tokens[1..3].to_vec(), examples[2].tokens[..3].to_vec()], &model.vocab).unwrap();
    let refs: Vec<_> = examples.iter().map(|e| rewrite_reference(&e.tokens, &list, &e.text)).collect();
    assert!(refs[0].tokens.contains(&Token::Bias(0)) && refs[2].tokens.contains(&Token::Bias(1)));
    let cfg = TrainConfig {
        lr: 3e-3,
        warmup_steps: 20,
        ..TrainConfig::default()
    };
    let mut opt = Adam::new(&model.params);
    let mut losses = Vec::new();
    for step in 1..=200 {
        let mut tape = Tape::<f32>::new(&model.params);
        let v = model.bias.forward(&mut tape, &list, model.vocab.blank_id(), model.vocab.sos_eos_id()).unwrap();
        let mut total = None;
        for (e, r) in examples.iter().zip(&refs) {
            let obj = utterance_objective(&model, &mut tape, &e.frames, v, r, cfg.lambda).unwrap().total;
            total = Some(match total {
                Some(t) => tape.add(t, obj).unwrap(),
                None => obj,
            });
        }
        let loss = tape.scale(total.unwrap(), 1.0 / examples.len() as f32);
        losses.push(f64::from(tape.scalar_value(loss)));
        let grads = tape.backward(loss).unwrap();
        model.params.zero_grad();
        grads.accumulate_into(&mut model.params);
        clip_gradients(&mut model.params, cfg.clip_norm);
        opt.step(&mut model.params, learning_rate(&cfg, step));
    }
    assert!(losses.iter().all(|&l| l >= 0.0));
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    assert!(last < 0.1 * first, "{arch:?}: {first} -> {last}");
}

#[test]
fn attention_hybrid_memorizes_a_batch() {
    memorizes(Arch::Attention);
}

#[test]
fn transducer_hybrid_memorizes_a_batch() {
    memorizes(Arch::Transducer);
}
