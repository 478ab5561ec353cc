use duplex_core::modality::{Direction, Domain, Model, ModelConfig, STACK_PREFIXES};
use duplex_core::transformer::TransformerConfig;
use duplex_tensor::kernels::{sigmoid, softmax_rows};
use duplex_tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type NoRng = ChaCha8Rng;

fn config(vocab: usize) -> ModelConfig {
    ModelConfig {
        transformer: TransformerConfig {
            num_layers: 1,
            model_dim: 8,
            ffn_dim: 16,
            num_heads: 2,
            dropout: 0.1,
            max_len: 64,
        },
        n_mels: 6,
        vocab_size: vocab,
        prenet_hidden: 8,
        prenet_dropout: 0.5,
        postnet_channels: 4,
        postnet_kernel: 5,
        postnet_layers: 5,
    }
}

fn frames(rows: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, 6, (0..rows * 6).map(|_| rng.gen_range(-2.0..1.0)).collect()).unwrap()
}

#[test]
fn parameter_census() {
    let m = Model::new(config(10), 1).unwrap();
    let groups = [
        "speech_encoder.",
        "speech_decoder.",
        "text_encoder.",
        "text_decoder.",
        "prenet.",
        "mel_head.",
        "stop_head.",
        "postnet.",
        "phoneme_embedding",
        "start.",
    ];
    for (_, name, _) in m.params.iter() {
        assert!(groups.iter().any(|g| name.starts_with(g)), "unexpected parameter {name}");
    }
    for p in STACK_PREFIXES {
        assert!(m.params.iter().any(|(_, n, _)| n.starts_with(&format!("{p}."))));
    }
    let starts: Vec<_> = m.params.iter().filter(|(_, n, _)| n.starts_with("start.")).collect();
    assert_eq!(starts.len(), 4);
    let mut ids = m.start.to_vec();
    ids.sort_by_key(|id| id.index());
    ids.dedup();
    assert_eq!(ids.len(), 4);
    for (_, _, t) in starts {
        assert_eq!(t.shape(), &[1, 8]);
    }
}

#[test]
fn start_indices_cover_four_pairs() {
    let mut seen = Vec::new();
    for dom in [Domain::Speech, Domain::Text] {
        for dir in Direction::BOTH {
            seen.push(Model::start_index(dom, dir));
        }
    }
    seen.sort();
    assert_eq!(seen, vec![0, 1, 2, 3]);
}

#[test]
fn speech_input_shapes_and_per_frame_independence() {
    let m = Model::new(config(10), 2).unwrap();
    let mut g = Graph::inference(&m.params);
    let one = m.speech_input::<NoRng>(&mut g, &frames(1, 1), None);
    assert_eq!(g.value(one).shape(), &[1, 8]);
    let zeros = m.speech_input::<NoRng>(&mut g, &Tensor::zeros(&[3, 6]), None);
    assert!(g.value(zeros).is_finite());

    let a = frames(4, 3);
    let mut b = a.clone();
    for v in &mut b.data_mut()[2 * 6..3 * 6] {
        *v += 1.5;
    }
    let ya = m.speech_input::<NoRng>(&mut g, &a, None);
    let yb = m.speech_input::<NoRng>(&mut g, &b, None);
    let (ya, yb) = (g.value(ya).clone(), g.value(yb).clone());
    for r in 0..4 {
        if r == 2 {
            assert_ne!(ya.row(r), yb.row(r));
        } else {
            assert_eq!(ya.row(r), yb.row(r));
        }
    }
}

#[test]
#[should_panic(expected = "-dim")]
fn wrong_frame_width_is_rejected() {
    let m = Model::new(config(10), 2).unwrap();
    let mut g = Graph::inference(&m.params);
    m.speech_input::<NoRng>(&mut g, &Tensor::zeros(&[2, 5]), None);
}

#[test]
fn post_net_starts_as_identity_and_is_the_exact_residual() {
    let mut m = Model::new(config(10), 3).unwrap();
    let hidden = Tensor::matrix(5, 8, (0..40).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
    {
        let mut g = Graph::inference(&m.params);
        let h = g.constant(hidden.clone());
        let out = m.speech_output(&mut g, h);
        assert_eq!(g.value(out.mel_before), g.value(out.mel_after));
    }
    let last = m.postnet.last().unwrap().weight;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for v in m.params.get_mut(last).data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let mut g = Graph::inference(&m.params);
    let h = g.constant(hidden);
    let out = m.speech_output(&mut g, h);
    let refinement = m.postnet_forward(&mut g, out.mel_before);
    let (before, after, r) = (
        g.value(out.mel_before).clone(),
        g.value(out.mel_after).clone(),
        g.value(refinement).clone(),
    );
    assert_ne!(before, after);
    for i in 0..before.len() {
        assert_eq!(after.data()[i], before.data()[i] + r.data()[i]);
    }
    assert_eq!(sigmoid(0.0), 0.5);
}

#[test]
fn post_net_receptive_field_spans_21_frames() {
    let mut m = Model::new(config(10), 5).unwrap();
    let last = m.postnet.last().unwrap().weight;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for v in m.params.get_mut(last).data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let len = 31;
    let centre = 15;
    let mut g = Graph::new(&m.params);
    let mel = g.leaf(frames(len, 7));
    let out = m.postnet_forward(&mut g, mel);
    let row = g.slice_rows(out, centre, 1);
    let loss = g.sum(row);
    let grad = g.backward_leaves(loss, &[mel]).unwrap().remove(0);
    for j in 0..len {
        let touched = grad.row(j).iter().any(|&v| v != 0.0);
        assert_eq!(touched, centre.abs_diff(j) <= 10, "frame {j}");
    }
}

#[test]
fn tied_embedding_self_score_is_the_squared_row_norm() {
    let m = Model::new(config(10), 8).unwrap();
    let table = m.params.get(m.phoneme_embedding).clone();
    let mut g = Graph::inference(&m.params);
    for k in 0..10 {
        let h = g.constant(Tensor::matrix(1, 8, table.row(k).to_vec()).unwrap());
        let logits = m.text_output(&mut g, h);
        let norm: f64 = table.row(k).iter().map(|v| v * v).sum();
        assert!((g.value(logits).at(0, k) - norm).abs() < 1e-12);
    }
}

#[test]
fn updating_an_embedding_row_moves_its_logit_and_its_input() {
    let mut m = Model::new(config(10), 9).unwrap();
    let hidden = Tensor::matrix(2, 8, (0..16).map(|i| 0.1 * i as f64 - 0.7).collect()).unwrap();
    let run = |m: &Model| {
        let mut g = Graph::inference(&m.params);
        let h = g.constant(hidden.clone());
        let logits = m.text_output(&mut g, h);
        let emb = m.text_input(&mut g, &[4]);
        (g.value(logits).clone(), g.value(emb).clone())
    };
    let (l0, e0) = run(&m);
    let emb = m.phoneme_embedding;
    for v in &mut m.params.get_mut(emb).data_mut()[4 * 8..5 * 8] {
        *v += 0.25;
    }
    let (l1, e1) = run(&m);
    assert_ne!(e0, e1);
    for r in 0..2 {
        for k in 0..10 {
            assert_eq!(l0.at(r, k) != l1.at(r, k), k == 4, "row {r} logit {k}");
        }
    }
}

#[test]
fn single_entry_vocabulary_is_certain() {
    let m = Model::new(config(1), 10).unwrap();
    let mut g = Graph::inference(&m.params);
    let h = g.constant(Tensor::matrix(3, 8, (0..24).map(|i| i as f64).collect()).unwrap());
    let logits = m.text_output(&mut g, h);
    let p = softmax_rows(g.value(logits).data(), 3, 1, None);
    assert_eq!(p, vec![1.0; 3]);
}

#[test]
fn start_embeddings_receive_gradient_only_from_their_own_terms() {
    let m = Model::new(config(10), 11).unwrap();
    let mut g = Graph::new(&m.params);
    let enc = m.encode_text::<NoRng>(&mut g, &[4, 5, 6, 1], None);
    let logits = m.decode_text::<NoRng>(&mut g, enc, &[6, 5, 4, 1], Direction::RightToLeft, true, None);
    let loss = g.nll(logits, &[6, 5, 4, 1], 1.0);
    let grads = g.backward(loss).unwrap();
    let text_r2l = m.start[Model::start_index(Domain::Text, Direction::RightToLeft)];
    assert!(grads.get(text_r2l).data().iter().any(|&v| v != 0.0));
    for (dom, dir) in [
        (Domain::Speech, Direction::LeftToRight),
        (Domain::Speech, Direction::RightToLeft),
        (Domain::Text, Direction::LeftToRight),
    ] {
        let id = m.start[Model::start_index(dom, dir)];
        assert!(grads.get(id).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn unlearned_start_is_a_zero_constant() {
    let m = Model::new(config(10), 12).unwrap();
    let mut g = Graph::inference(&m.params);
    let s = m.start_frame(&mut g, Domain::Speech, Direction::LeftToRight, false);
    assert_eq!(g.value(s), &Tensor::zeros(&[1, 8]));
}

#[test]
fn generation_respects_caps_and_never_emits_pad_or_mask() {
    let m = Model::new(config(10), 13).unwrap();
    let mut g = Graph::inference(&m.params);
    let enc = m.encode_speech::<NoRng>(&mut g, &frames(6, 14), None);
    let text = m.generate_text(&mut g, enc, Direction::LeftToRight, true, 5);
    assert!(text.output.len() <= 5);
    assert_eq!(*text.output.last().unwrap(), duplex_core::text::EOS);
    assert!(!text.output.contains(&duplex_core::text::PAD));
    assert!(!text.output.contains(&duplex_core::text::MASK));

    let enc = m.encode_text::<NoRng>(&mut g, &[4, 5, 1], None);
    let speech = m.generate_speech(&mut g, enc, Direction::LeftToRight, true, 7);
    assert!(speech.output.rows() <= 7);
    assert_eq!(speech.output.cols(), 6);
    if speech.truncated {
        assert_eq!(speech.output.rows(), 7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn incremental_text_decoding_matches_teacher_forcing(seed in 0u64..500, len in 1usize..6) {
        let m = Model::new(config(10), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(4..10)).collect();
        let mut g = Graph::inference(&m.params);
        let enc = m.encode_text::<NoRng>(&mut g, &[5, 6, 7, 1], None);
        let logits = m.decode_text::<NoRng>(&mut g, enc, &target, Direction::LeftToRight, true, None);
        let full = g.value(logits).clone();
        // Rebuild the same decoder inputs one row at a time.
        let table = m.params.get(m.phoneme_embedding).clone();
        let start = m.params.get(m.start[Model::start_index(Domain::Text, Direction::LeftToRight)]).clone();
        let pe = duplex_core::transformer::positional_encoding(len, 8, 0);
        let mut inputs = Vec::new();
        for t in 0..len {
            let base: Vec<f64> = if t == 0 {
                start.row(0).to_vec()
            } else {
                table.row(target[t - 1]).iter().map(|v| v * 8f64.sqrt()).collect()
            };
            let row: Vec<f64> = base.iter().zip(pe.row(t)).map(|(a, b)| a + b).collect();
            inputs.push(g.constant(Tensor::matrix(1, 8, row).unwrap()));
        }
        let hidden = m.incremental_hidden(&mut g, enc, Domain::Text, &inputs);
        for (t, h) in hidden.into_iter().enumerate() {
            let l = m.text_output(&mut g, h);
            for (a, b) in g.value(l).data().iter().zip(full.row(t)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
