use duplex_core::corpus::{split_dataset, synthesize_toy_corpus, Components, CorpusPartition, Family, SplitConfig, ToySpec};
use duplex_core::modality::{Direction, Model, ModelConfig, SpeechOutput};
use duplex_core::text::{EOS, MASK};
use duplex_core::training::{
    corrupt_speech, corrupt_text, orient_text, reverse_speech, reverse_text, speech_loss, stop_targets, text_loss,
    CorruptionConfig, SpeechNorm, TrainConfig, Trainer, LOSS_CSV_HEADER,
};
use duplex_core::transformer::TransformerConfig;
use duplex_tensor::{AdamConfig, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn masking(p: f64) -> CorruptionConfig {
    CorruptionConfig {
        mask_prob: p,
        swap_window: None,
    }
}

#[test]
fn zero_probability_corruption_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ids = vec![5, 9, 7, 7, 12, EOS];
    assert_eq!(corrupt_text(&ids, &masking(0.0), &mut rng), ids);
    let frames = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 - 3.5).collect()).unwrap();
    assert_eq!(corrupt_speech(&frames, &masking(0.0), &mut rng), frames);
}

#[test]
fn unit_probability_masks_every_content_element() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = corrupt_text(&[5, 9, 7, EOS], &masking(1.0), &mut rng);
    assert_eq!(out, vec![MASK, MASK, MASK, EOS]);
    let frames = Tensor::matrix(4, 3, vec![1.5; 12]).unwrap();
    assert_eq!(corrupt_speech(&frames, &masking(1.0), &mut rng), Tensor::zeros(&[4, 3]));
}

#[test]
fn masked_fraction_matches_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let trials = 100_000;
    let ids: Vec<usize> = (0..trials).map(|i| 4 + i % 20).collect();
    let out = corrupt_text(&ids, &masking(0.3), &mut rng);
    let frac = out.iter().filter(|&&t| t == MASK).count() as f64 / trials as f64;
    assert!((frac - 0.3).abs() < 0.01, "{frac}");

    let frames = Tensor::matrix(trials, 1, vec![1.0; trials]).unwrap();
    let out = corrupt_speech(&frames, &masking(0.3), &mut rng);
    let frac = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / trials as f64;
    assert!((frac - 0.3).abs() < 0.01, "{frac}");
}

#[test]
fn swap_window_only_permutes_inside_windows() {
    let cfg = CorruptionConfig {
        mask_prob: 0.0,
        swap_window: Some(3),
    };
    let ids: Vec<usize> = (4..14).chain([EOS]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = corrupt_text(&ids, &cfg, &mut rng);
    assert_eq!(out.last(), Some(&EOS));
    for (a, b) in ids[..10].chunks(3).zip(out[..10].chunks(3)) {
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
    assert!(CorruptionConfig { mask_prob: 0.1, swap_window: Some(1) }.validate().is_err());
    assert!(masking(1.5).validate().is_err());
}

#[test]
fn text_loss_of_flat_logits_is_log_vocab() {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let logits = g.constant(Tensor::zeros(&[4, 7]));
    let loss = text_loss(&mut g, logits, &[4, 5, 6, EOS], 3, 6);
    let expected = 3.0 * 7f64.ln() / 6.0;
    assert!((g.value(loss).data()[0] - expected).abs() < 1e-12);
}

#[test]
fn speech_loss_hand_case() {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let target = Tensor::matrix(4, 2, vec![0.5; 8]).unwrap();
    // Unit error on every element; zero stop logits.
    let out = SpeechOutput {
        mel_before: g.constant(target.map(|v| v + 1.0)),
        mel_after: g.constant(target.map(|v| v - 1.0)),
        stop_logits: g.constant(Tensor::zeros(&[4, 1])),
    };
    let loss = speech_loss(&mut g, &out, &target, 3, SpeechNorm { elements: 6, frames: 3 }, 5.0);
    let ln2 = 2f64.ln();
    assert!((g.value(loss.mse).data()[0] - 2.0).abs() < 1e-12);
    // Two negatives at ln 2, one positive at 5 ln 2, over 3 frames.
    assert!((g.value(loss.stop).data()[0] - 7.0 * ln2 / 3.0).abs() < 1e-12);
    assert!((g.value(loss.total).data()[0] - (2.0 + 7.0 * ln2 / 3.0)).abs() < 1e-12);
    assert_eq!(stop_targets(3), vec![0.0, 0.0, 1.0]);
}

fn tiny_setup(components: Components, seed: u64) -> (CorpusPartition, Trainer) {
    let spec = ToySpec {
        num_phonemes: 6,
        n_mels: 12,
        frames_per_phoneme: 2,
        min_len: 2,
        max_len: 4,
        bump_width: 1.0,
        count: 40,
        ..ToySpec::default()
    };
    let toy = synthesize_toy_corpus(&spec, 3).unwrap();
    let split = SplitConfig {
        train: 30,
        val: 5,
        test: 5,
        paired: 6,
        disjoint_halves: true,
    };
    let part = split_dataset(&toy.utterances, &split, 3).unwrap();
    let model = Model::new(
        ModelConfig {
            transformer: TransformerConfig {
                num_layers: 1,
                model_dim: 16,
                ffn_dim: 32,
                num_heads: 2,
                dropout: 0.1,
                max_len: 64,
            },
            n_mels: 12,
            vocab_size: toy.vocab.len(),
            prenet_hidden: 16,
            postnet_channels: 8,
            ..ModelConfig::default()
        },
        5,
    )
    .unwrap();
    let cfg = TrainConfig {
        components,
        group_size: 2,
        adam: AdamConfig {
            model_dim: 16,
            warmup_steps: 20,
            ..AdamConfig::default()
        },
        seed,
        ..TrainConfig::default()
    };
    (part, Trainer::new(model, cfg).unwrap())
}

#[test]
fn report_total_is_the_sum_of_its_terms() {
    let (part, mut t) = tiny_setup(Components::FULL, 1);
    let r = t.train_step(&part).unwrap();
    assert_eq!(r.step, 1);
    assert_eq!(r.terms.len(), 16);
    assert!((r.total - r.six_terms_sum()).abs() < 1e-9 * r.total.abs().max(1.0));
    let family = |f: Family, d: Direction| {
        r.terms.iter().filter(|(t, _)| t.family() == f && t.direction() == d).map(|(_, v)| v).sum::<f64>()
    };
    assert_eq!(family(Family::Dae, Direction::LeftToRight), r.dae_l2r);
    assert_eq!(family(Family::Dt, Direction::RightToLeft), r.dt_r2l);
    assert_eq!(family(Family::Sup, Direction::LeftToRight), r.sup_l2r);
    assert!((r.speech_mse + r.stop_bce + r.text_nll - r.total).abs() < 1e-9 * r.total.max(1.0));
    assert!(r.terms.iter().all(|(_, v)| v.is_finite() && *v > 0.0));

    let csv = r.csv_rows();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("1,dae_l2r,"));
    assert_eq!(LOSS_CSV_HEADER, "step,term,value\n");
}

#[test]
fn bsm_off_keeps_left_to_right_terms_only() {
    let (part, mut t) = tiny_setup(Components { dae: true, dt: true, bsm: false }, 1);
    let r = t.train_step(&part).unwrap();
    assert_eq!(r.terms.len(), 6);
    assert_eq!((r.dae_r2l, r.dt_r2l, r.sup_r2l), (0.0, 0.0, 0.0));
    assert!(r.terms.iter().all(|(t, _)| t.direction() == Direction::LeftToRight));
}

#[test]
fn equal_seeds_give_identical_runs() {
    let run = |seed| {
        let (part, mut t) = tiny_setup(Components::FULL, seed);
        let reports: Vec<_> = (0..3).map(|_| t.train_step(&part).unwrap()).collect();
        let params: Vec<Tensor> = t.model.params.iter().map(|(_, _, p)| p.clone()).collect();
        (reports, params)
    };
    let (a, pa) = run(4);
    let (b, pb) = run(4);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let (c, _) = run(5);
    assert_ne!(a[0].total, c[0].total);

    let draw = |step| Trainer::step_rng(9, step).gen::<u64>();
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn supervised_training_fits_a_few_pairs() {
    let (part, mut t) = tiny_setup(Components::PAIR_ONLY, 2);
    t.config.group_size = 6;
    let first = t.train_step(&part).unwrap().total;
    let mut recent = Vec::new();
    for _ in 0..400 {
        recent.push(t.train_step(&part).unwrap().total);
    }
    let last = recent[recent.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(last < 0.25 * first, "{first} -> {last}");
}

proptest! {
    #[test]
    fn reversal_is_an_involution(content in prop::collection::vec(4usize..30, 0..20), eos in any::<bool>()) {
        let mut ids = content.clone();
        if eos {
            ids.push(EOS);
        }
        let r = reverse_text(&ids);
        prop_assert_eq!(reverse_text(&r), ids.clone());
        prop_assert_eq!(r.len(), ids.len());
        if eos {
            prop_assert_eq!(r.last(), Some(&EOS));
        }
        prop_assert_eq!(orient_text(&ids, Direction::LeftToRight), ids);
    }

    #[test]
    fn speech_reversal_is_an_involution(rows in 1usize..12, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let r = reverse_speech(&x);
        prop_assert_eq!(r.row(0), x.row(rows - 1));
        prop_assert_eq!(reverse_speech(&r), x);
    }

    #[test]
    fn corruption_preserves_shape_and_eos(
        content in prop::collection::vec(4usize..30, 1..20),
        p in 0.0f64..=1.0,
        window in prop::option::of(2usize..5),
        seed in any::<u64>(),
    ) {
        let mut ids = content;
        ids.push(EOS);
        let cfg = CorruptionConfig { mask_prob: p, swap_window: window };
        let out = corrupt_text(&ids, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.len(), ids.len());
        prop_assert_eq!(out.last(), Some(&EOS));
        prop_assert!(out.iter().all(|t| *t == MASK || ids.contains(t)));
    }
}
