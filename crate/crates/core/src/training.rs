//! Corruption and reversal operators, speech/text losses, on-the-fly dual
//! transformation and the unified training step.

use std::collections::HashMap;

use duplex_tensor::{Adam, AdamConfig, Gradients, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batch, BatchGroup, Components, CorpusPartition, Family, Term};
use crate::modality::{Direction, Generated, Model, SpeechOutput};
use crate::text::{EOS, MASK};
use crate::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionConfig {
    pub mask_prob: f64,
    /// Elements are shuffled inside consecutive windows of this size after
    /// masking. Disabled when `None`.
    pub swap_window: Option<usize>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            mask_prob: 0.3,
            swap_window: None,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(CoreError::Config(format!("mask probability {} outside [0, 1]", self.mask_prob)));
        }
        if matches!(self.swap_window, Some(w) if w < 2) {
            return Err(CoreError::Config("swap window must be at least 2".into()));
        }
        Ok(())
    }
}

fn window_shuffle<T, R: Rng>(items: &mut [T], window: Option<usize>, rng: &mut R) {
    if let Some(w) = window {
        for chunk in items.chunks_mut(w) {
            chunk.shuffle(rng);
        }
    }
}

/// Replaces each content token with MASK with the configured probability. A
/// trailing EOS is kept.
pub fn corrupt_text<R: Rng>(ids: &[usize], cfg: &CorruptionConfig, rng: &mut R) -> Vec<usize> {
    let content = content_len(ids);
    let mut out = ids.to_vec();
    for t in &mut out[..content] {
        if rng.gen::<f64>() < cfg.mask_prob {
            *t = MASK;
        }
    }
    window_shuffle(&mut out[..content], cfg.swap_window, rng);
    out
}

/// Replaces each frame with a zero frame with the configured probability.
pub fn corrupt_speech<R: Rng>(frames: &Tensor, cfg: &CorruptionConfig, rng: &mut R) -> Tensor {
    let width = frames.cols();
    let mut rows: Vec<Vec<f64>> = (0..frames.rows()).map(|t| frames.row(t).to_vec()).collect();
    for row in &mut rows {
        if rng.gen::<f64>() < cfg.mask_prob {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    window_shuffle(&mut rows, cfg.swap_window, rng);
    Tensor::matrix(rows.len(), width, rows.concat()).expect("same shape as input")
}

fn content_len(ids: &[usize]) -> usize {
    if ids.last() == Some(&EOS) {
        ids.len() - 1
    } else {
        ids.len()
    }
}

/// Reverses the content; a trailing EOS stays last.
pub fn reverse_text(ids: &[usize]) -> Vec<usize> {
    let n = content_len(ids);
    let mut out: Vec<usize> = ids[..n].iter().rev().copied().collect();
    out.extend_from_slice(&ids[n..]);
    out
}

pub fn reverse_speech(frames: &Tensor) -> Tensor {
    let rows: Vec<&[f64]> = (0..frames.rows()).rev().map(|t| frames.row(t)).collect();
    Tensor::matrix(frames.rows(), frames.cols(), rows.concat()).expect("same shape as input")
}

/// The sequence as read in direction `dir` (natural order for left-to-right).
pub fn orient_text(ids: &[usize], dir: Direction) -> Vec<usize> {
    match dir {
        Direction::LeftToRight => ids.to_vec(),
        Direction::RightToLeft => reverse_text(ids),
    }
}

pub fn orient_speech(frames: &Tensor, dir: Direction) -> Tensor {
    match dir {
        Direction::LeftToRight => frames.clone(),
        Direction::RightToLeft => reverse_speech(frames),
    }
}

/// Group-level normalizers so that per-sequence losses sum to group means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeechNorm {
    pub elements: usize,
    pub frames: usize,
}

impl SpeechNorm {
    pub fn single(target: &Tensor) -> Self {
        Self {
            elements: target.len(),
            frames: target.rows(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpeechLoss {
    pub mse: Var,
    pub stop: Var,
    pub total: Var,
}

/// Stop targets: 1 on the final frame, 0 elsewhere.
pub fn stop_targets(len: usize) -> Vec<f64> {
    (0..len).map(|t| if t + 1 == len { 1.0 } else { 0.0 }).collect()
}

/// Masked-mean MSE of `mel_before` and of `mel_after` against `target`, plus
/// stop BCE with positive weight. Only the first `valid` frames count.
pub fn speech_loss(
    g: &mut Graph,
    out: &SpeechOutput,
    target: &Tensor,
    valid: usize,
    norm: SpeechNorm,
    pos_weight: f64,
) -> SpeechLoss {
    assert!(valid > 0 && norm.frames > 0, "speech loss over no frames");
    assert_eq!(g.value(out.mel_before).rows(), target.rows(), "prediction and target lengths differ");
    let width = target.cols();
    let tgt = Tensor::matrix(valid, width, target.data()[..valid * width].to_vec()).expect("positive dims");
    let (before, after, stop) = if valid < target.rows() {
        (
            g.slice_rows(out.mel_before, 0, valid),
            g.slice_rows(out.mel_after, 0, valid),
            g.slice_rows(out.stop_logits, 0, valid),
        )
    } else {
        (out.mel_before, out.mel_after, out.stop_logits)
    };
    let scale = 1.0 / norm.elements as f64;
    let a = g.mse(before, &tgt, scale);
    let b = g.mse(after, &tgt, scale);
    let mse = g.add(a, b);
    let stop = g.bce_with_logits(stop, &stop_targets(valid), pos_weight, 1.0 / norm.frames as f64);
    let total = g.add(mse, stop);
    SpeechLoss { mse, stop, total }
}

/// Masked-mean negative log-likelihood over the first `valid` positions,
/// normalized by `tokens`.
pub fn text_loss(g: &mut Graph, logits: Var, target: &[usize], valid: usize, tokens: usize) -> Var {
    assert!(valid > 0 && tokens > 0, "text loss over no tokens");
    let logits = if valid < g.value(logits).rows() {
        g.slice_rows(logits, 0, valid)
    } else {
        logits
    };
    g.nll(logits, &target[..valid], 1.0 / tokens as f64)
}

/// Upper bounds on greedy decode lengths relative to the source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeLimits {
    /// Max text tokens per source frame.
    pub text_per_frame: f64,
    /// Max speech frames per source token.
    pub frames_per_token: f64,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        Self {
            text_per_frame: 0.5,
            frames_per_token: 8.0,
        }
    }
}

impl DecodeLimits {
    pub fn text_len(&self, frames: usize) -> usize {
        ((frames as f64 * self.text_per_frame).ceil() as usize).max(1)
    }

    pub fn speech_len(&self, tokens: usize) -> usize {
        ((tokens as f64 * self.frames_per_token).ceil() as usize).max(1)
    }
}

/// Greedy recognition of natural-order speech; a right-to-left decode reads
/// the reversed source. The output is in decode order.
pub fn asr_transform(
    model: &Model,
    speech: &Tensor,
    dir: Direction,
    learned_start: bool,
    limits: DecodeLimits,
) -> Generated<Vec<usize>> {
    let mut g = Graph::inference(&model.params);
    let src = orient_speech(speech, dir);
    let enc = model.encode_speech::<ChaCha8Rng>(&mut g, &src, None);
    model.generate_text(&mut g, enc, dir, learned_start, limits.text_len(speech.rows()))
}

/// Greedy synthesis from natural-order text, output in decode order.
pub fn tts_transform(
    model: &Model,
    text: &[usize],
    dir: Direction,
    learned_start: bool,
    limits: DecodeLimits,
) -> Generated<Tensor> {
    let mut g = Graph::inference(&model.params);
    let src = orient_text(text, dir);
    let enc = model.encode_text::<ChaCha8Rng>(&mut g, &src, None);
    model.generate_speech(&mut g, enc, dir, learned_start, limits.speech_len(text.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub components: Components,
    /// Sequences per loss term.
    pub group_size: usize,
    pub corruption: CorruptionConfig,
    pub stop_pos_weight: f64,
    pub limits: DecodeLimits,
    pub adam: AdamConfig,
    /// Rescale gradients whose global norm exceeds this. Off when `None`.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            components: Components::FULL,
            group_size: 32,
            corruption: CorruptionConfig::default(),
            stop_pos_weight: 5.0,
            limits: DecodeLimits::default(),
            adam: AdamConfig::default(),
            clip_norm: None,
            seed: 1,
        }
    }
}

/// Loss values of one step. The six named terms are sums over their groups;
/// `total` is their sum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub dae_l2r: f64,
    pub dae_r2l: f64,
    pub dt_l2r: f64,
    pub dt_r2l: f64,
    pub sup_l2r: f64,
    pub sup_r2l: f64,
    pub total: f64,
    pub speech_mse: f64,
    pub stop_bce: f64,
    pub text_nll: f64,
    pub learning_rate: f64,
    /// Value of every evaluated term, in batch order.
    pub terms: Vec<(Term, f64)>,
}

impl LossReport {
    /// Named values in a fixed order, as written to the loss log.
    pub fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("dae_l2r", self.dae_l2r),
            ("dae_r2l", self.dae_r2l),
            ("dt_l2r", self.dt_l2r),
            ("dt_r2l", self.dt_r2l),
            ("sup_l2r", self.sup_l2r),
            ("sup_r2l", self.sup_r2l),
            ("total", self.total),
            ("speech_mse", self.speech_mse),
            ("stop_bce", self.stop_bce),
            ("text_nll", self.text_nll),
        ]
    }

    pub fn six_terms_sum(&self) -> f64 {
        self.dae_l2r + self.dae_r2l + self.dt_l2r + self.dt_r2l + self.sup_l2r + self.sup_r2l
    }

    /// CSV rows `step,term,value` (no header).
    pub fn csv_rows(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{},{},{:e}\n", self.step, k, v))
            .collect()
    }

    fn add(&mut self, term: Term, value: f64) {
        let slot = match (term.family(), term.direction()) {
            (Family::Dae, Direction::LeftToRight) => &mut self.dae_l2r,
            (Family::Dae, Direction::RightToLeft) => &mut self.dae_r2l,
            (Family::Dt, Direction::LeftToRight) => &mut self.dt_l2r,
            (Family::Dt, Direction::RightToLeft) => &mut self.dt_r2l,
            (Family::Sup, Direction::LeftToRight) => &mut self.sup_l2r,
            (Family::Sup, Direction::RightToLeft) => &mut self.sup_r2l,
        };
        *slot += value;
        self.terms.push((term, value));
    }
}

pub const LOSS_CSV_HEADER: &str = "step,term,value\n";

/// Per-step cache of on-the-fly generations, keyed by pool index and
/// generation direction.
#[derive(Default)]
struct Transforms {
    text: HashMap<(usize, Direction), Vec<usize>>,
    speech: HashMap<(usize, Direction), Tensor>,
}

/// Model, optimizer and configuration for the unified training loop.
pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.corruption.validate()?;
        if config.group_size == 0 {
            return Err(CoreError::Config("group size must be positive".into()));
        }
        let optimizer = Adam::new(config.adam.clone(), &model.params);
        Ok(Self {
            model,
            optimizer,
            config,
        })
    }

    /// Number of completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.optimizer.step_count()
    }

    pub fn learned_start(&self) -> bool {
        self.config.components.bsm
    }

    /// The RNG for step `step` (0-based): independent of all earlier steps, so
    /// a resumed run draws the same numbers.
    pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        rng
    }

    /// Greedy left-to-right recognition, returned in natural order.
    pub fn recognize(&self, speech: &Tensor, dir: Direction) -> Generated<Vec<usize>> {
        let gen = asr_transform(&self.model, speech, dir, self.learned_start(), self.config.limits);
        Generated {
            output: orient_text(&gen.output, dir),
            truncated: gen.truncated,
        }
    }

    /// Greedy synthesis, returned in natural order.
    pub fn synthesize(&self, text: &[usize], dir: Direction) -> Generated<Tensor> {
        let gen = tts_transform(&self.model, text, dir, self.learned_start(), self.config.limits);
        Generated {
            output: orient_speech(&gen.output, dir),
            truncated: gen.truncated,
        }
    }

    /// Samples the step's batch plan, evaluates every term, back-propagates the
    /// summed loss and applies one Adam update.
    pub fn train_step(&mut self, partition: &CorpusPartition) -> Result<LossReport> {
        let step = self.step();
        let mut rng = Self::step_rng(self.config.seed, step);
        let plan = make_batch(partition, self.config.components, self.config.group_size, &mut rng)?;
        let mut grads = Gradients::zeros_like(&self.model.params);
        let mut report = LossReport {
            step: step + 1,
            ..LossReport::default()
        };
        let mut transforms = Transforms::default();
        for group in &plan.groups {
            let value = self.group_loss(group, &mut transforms, &mut grads, &mut report, &mut rng)?;
            if !value.is_finite() {
                return Err(CoreError::NonFinite {
                    term: group.term.name(),
                    step: step + 1,
                });
            }
            report.add(group.term, value);
        }
        report.total = report.six_terms_sum();
        if !report.total.is_finite() || !grads.is_finite() {
            return Err(CoreError::NonFinite {
                term: "total".into(),
                step: step + 1,
            });
        }
        if let Some(limit) = self.config.clip_norm {
            let norm = grads.global_norm();
            if norm > limit {
                grads.scale(limit / norm);
            }
        }
        report.learning_rate = self.optimizer.step(&mut self.model.params, &grads)?;
        Ok(report)
    }

    /// Generation for a dual-transformation item, cached within the step.
    fn generated_text(&self, cache: &mut Transforms, index: usize, speech: &Tensor, dir: Direction) -> Vec<usize> {
        let model = &self.model;
        let (learned, limits) = (self.learned_start(), self.config.limits);
        cache
            .text
            .entry((index, dir))
            .or_insert_with(|| orient_text(&asr_transform(model, speech, dir, learned, limits).output, dir))
            .clone()
    }

    fn generated_speech(&self, cache: &mut Transforms, index: usize, text: &[usize], dir: Direction) -> Tensor {
        let model = &self.model;
        let (learned, limits) = (self.learned_start(), self.config.limits);
        cache
            .speech
            .entry((index, dir))
            .or_insert_with(|| orient_speech(&tts_transform(model, text, dir, learned, limits).output, dir))
            .clone()
    }

    fn group_loss(
        &self,
        group: &BatchGroup,
        transforms: &mut Transforms,
        grads: &mut Gradients,
        report: &mut LossReport,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let term = group.term;
        let dir = term.direction();
        let learned = self.learned_start();
        let speech_seqs: Vec<Tensor> = group
            .speech
            .as_ref()
            .map(|s| (0..s.len()).map(|i| s.sequence(i)).collect())
            .unwrap_or_default();
        let text_seqs: Vec<Vec<usize>> = group
            .text
            .as_ref()
            .map(|t| (0..t.ids.len()).map(|i| t.sequence(i)).collect())
            .unwrap_or_default();
        let speech_norm = SpeechNorm {
            elements: speech_seqs.iter().map(Tensor::len).sum(),
            frames: speech_seqs.iter().map(Tensor::rows).sum(),
        };
        let tokens: usize = text_seqs.iter().map(Vec::len).sum();
        let mut total = 0.0;
        for (i, &index) in group.indices.iter().enumerate() {
            // Sources are prepared before the tape so generation never records.
            let source = match term {
                Term::DaeSpeech(_) => Source::Speech(corrupt_speech(
                    &orient_speech(&speech_seqs[i], dir),
                    &self.config.corruption,
                    rng,
                )),
                Term::DaeText(_) => Source::Text(corrupt_text(
                    &orient_text(&text_seqs[i], dir),
                    &self.config.corruption,
                    rng,
                )),
                Term::DtSpeech { generated, .. } => {
                    let y_hat = self.generated_text(transforms, index, &speech_seqs[i], generated);
                    Source::Text(orient_text(&y_hat, dir))
                }
                Term::DtText { generated, .. } => {
                    let x_hat = self.generated_speech(transforms, index, &text_seqs[i], generated);
                    Source::Speech(orient_speech(&x_hat, dir))
                }
                Term::SupSpeech(_) => Source::Text(orient_text(&text_seqs[i], dir)),
                Term::SupText(_) => Source::Speech(orient_speech(&speech_seqs[i], dir)),
            };
            let mut g = Graph::new(&self.model.params);
            let encoded = match &source {
                Source::Speech(x) => self.model.encode_speech(&mut g, x, Some(&mut *rng)),
                Source::Text(y) => self.model.encode_text(&mut g, y, Some(&mut *rng)),
            };
            let loss = match term {
                Term::DaeSpeech(_) | Term::DtSpeech { .. } | Term::SupSpeech(_) => {
                    let target = orient_speech(&speech_seqs[i], dir);
                    let out = self.model.decode_speech(&mut g, encoded, &target, dir, learned, Some(&mut *rng));
                    let l = speech_loss(&mut g, &out, &target, target.rows(), speech_norm, self.config.stop_pos_weight);
                    report.speech_mse += g.value(l.mse).item();
                    report.stop_bce += g.value(l.stop).item();
                    l.total
                }
                Term::DaeText(_) | Term::DtText { .. } | Term::SupText(_) => {
                    let target = orient_text(&text_seqs[i], dir);
                    let logits = self.model.decode_text(&mut g, encoded, &target, dir, learned, Some(&mut *rng));
                    let l = text_loss(&mut g, logits, &target, target.len(), tokens);
                    report.text_nll += g.value(l).item();
                    l
                }
            };
            total += g.value(loss).item();
            g.backward_into(loss, grads)?;
        }
        Ok(total)
    }
}

enum Source {
    Speech(Tensor),
    Text(Vec<usize>),
}
