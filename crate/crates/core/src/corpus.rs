//! Utterances, train/val/test partitioning, the per-step batch plan and the
//! synthetic toy corpus.

use std::collections::HashSet;

use duplex_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::modality::Direction;
use crate::text::{PhonemeVocab, EOS, PAD};
use crate::{CoreError, Result};

/// One item of speech (`[frames, n_mels]` log-mel), text (phoneme ids ending
/// in EOS), or both.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speech: Option<Tensor>,
    pub text: Option<Vec<usize>>,
}

impl Utterance {
    pub fn paired(id: impl Into<String>, speech: Tensor, text: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            speech: Some(speech),
            text: Some(text),
        }
    }

    pub fn is_paired(&self) -> bool {
        self.speech.is_some() && self.text.is_some()
    }

    fn speech_only(&self) -> Self {
        Self {
            id: self.id.clone(),
            speech: self.speech.clone(),
            text: None,
        }
    }

    fn text_only(&self) -> Self {
        Self {
            id: self.id.clone(),
            speech: None,
            text: self.text.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub paired: usize,
    /// Draw unpaired speech and unpaired text from disjoint halves of the
    /// unpaired training utterances, so no implicit alignment exists.
    pub disjoint_halves: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 12_500,
            val: 300,
            test: 300,
            paired: 200,
            disjoint_halves: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusPartition {
    pub paired: Vec<Utterance>,
    /// Unpaired speech; transcripts removed.
    pub speech: Vec<Utterance>,
    /// Unpaired text; audio removed.
    pub text: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// Number of unpaired training utterances before pooling.
    pub unpaired_count: usize,
}

impl CorpusPartition {
    pub fn train_ids(&self) -> HashSet<&str> {
        self.paired
            .iter()
            .chain(&self.speech)
            .chain(&self.text)
            .map(|u| u.id.as_str())
            .collect()
    }
}

/// Deterministic shuffle, then test, val and train slices; the first `paired`
/// training utterances keep both sides, the rest become unpaired pools.
pub fn split_dataset(all: &[Utterance], cfg: &SplitConfig, seed: u64) -> Result<CorpusPartition> {
    let need = cfg.train + cfg.val + cfg.test;
    if all.len() < need {
        return Err(CoreError::Data(format!(
            "split needs {need} utterances, corpus has {}",
            all.len()
        )));
    }
    if cfg.paired > cfg.train || cfg.paired == 0 {
        return Err(CoreError::Data(format!(
            "paired count {} must be in 1..={}",
            cfg.paired, cfg.train
        )));
    }
    if let Some(u) = all.iter().find(|u| !u.is_paired()) {
        return Err(CoreError::Data(format!("utterance {} lacks speech or text", u.id)));
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: std::ops::Range<usize>| -> Vec<Utterance> { order[r].iter().map(|&i| all[i].clone()).collect() };
    let test = pick(0..cfg.test);
    let val = pick(cfg.test..cfg.test + cfg.val);
    let train = pick(cfg.test + cfg.val..need);
    let (paired, unpaired) = train.split_at(cfg.paired);
    let (speech, text) = if cfg.disjoint_halves {
        let half = unpaired.len().div_ceil(2);
        (
            unpaired[..half].iter().map(Utterance::speech_only).collect(),
            unpaired[half..].iter().map(Utterance::text_only).collect(),
        )
    } else {
        (
            unpaired.iter().map(Utterance::speech_only).collect(),
            unpaired.iter().map(Utterance::text_only).collect(),
        )
    };
    Ok(CorpusPartition {
        paired: paired.to_vec(),
        speech,
        text,
        val,
        test,
        unpaired_count: unpaired.len(),
    })
}

/// Repeat factor for the paired pool, `⌈unpaired / paired⌉`, at least 1.
pub fn upsample_factor(paired: usize, unpaired: usize) -> usize {
    assert!(paired > 0, "paired pool is empty");
    unpaired.div_ceil(paired).max(1)
}

/// Paired pool indices repeated by [`upsample_factor`].
pub fn upsample_paired(partition: &CorpusPartition) -> Vec<usize> {
    let n = partition.paired.len();
    let factor = upsample_factor(n, partition.unpaired_count);
    (0..factor).flat_map(|_| 0..n).collect()
}

/// One loss term of the training objective; each consumes one group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    /// Speech reconstructed from its corrupted copy.
    DaeSpeech(Direction),
    /// Text reconstructed from its corrupted copy.
    DaeText(Direction),
    /// TTS trained on speech against text recognized on the fly in `generated`
    /// direction; the target runs in `target` direction.
    DtSpeech { target: Direction, generated: Direction },
    /// ASR trained on text against speech synthesized on the fly.
    DtText { target: Direction, generated: Direction },
    SupSpeech(Direction),
    SupText(Direction),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Speech,
    Text,
    Paired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Dae,
    Dt,
    Sup,
}

impl Term {
    pub fn pool(self) -> Pool {
        match self {
            Term::DaeSpeech(_) | Term::DtSpeech { .. } => Pool::Speech,
            Term::DaeText(_) | Term::DtText { .. } => Pool::Text,
            Term::SupSpeech(_) | Term::SupText(_) => Pool::Paired,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Term::DaeSpeech(_) | Term::DaeText(_) => Family::Dae,
            Term::DtSpeech { .. } | Term::DtText { .. } => Family::Dt,
            Term::SupSpeech(_) | Term::SupText(_) => Family::Sup,
        }
    }

    /// Direction of the sequence being reconstructed.
    pub fn direction(self) -> Direction {
        match self {
            Term::DaeSpeech(d) | Term::DaeText(d) | Term::SupSpeech(d) | Term::SupText(d) => d,
            Term::DtSpeech { target, .. } | Term::DtText { target, .. } => target,
        }
    }

    pub fn name(self) -> String {
        match self {
            Term::DaeSpeech(d) => format!("dae_speech_{}", d.tag()),
            Term::DaeText(d) => format!("dae_text_{}", d.tag()),
            Term::DtSpeech { target, generated } => format!("dt_speech_{}_from_{}", target.tag(), generated.tag()),
            Term::DtText { target, generated } => format!("dt_text_{}_from_{}", target.tag(), generated.tag()),
            Term::SupSpeech(d) => format!("sup_speech_{}", d.tag()),
            Term::SupText(d) => format!("sup_text_{}", d.tag()),
        }
    }
}

/// Which parts of the objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    pub dae: bool,
    pub dt: bool,
    /// Bidirectional modeling: right-to-left terms and learned start elements.
    pub bsm: bool,
}

impl Components {
    pub const FULL: Components = Components {
        dae: true,
        dt: true,
        bsm: true,
    };
    pub const PAIR_ONLY: Components = Components {
        dae: false,
        dt: false,
        bsm: false,
    };

    pub fn directions(self) -> &'static [Direction] {
        if self.bsm {
            &Direction::BOTH
        } else {
            &Direction::BOTH[..1]
        }
    }
}

/// The ordered list of terms one training step evaluates: denoising, then dual
/// transformation, then supervised.
pub fn batch_terms(c: Components) -> Vec<Term> {
    let dirs = c.directions();
    let mut terms = Vec::new();
    if c.dae {
        for &d in dirs {
            terms.push(Term::DaeSpeech(d));
            terms.push(Term::DaeText(d));
        }
    }
    if c.dt {
        for &target in dirs {
            for &generated in dirs {
                terms.push(Term::DtSpeech { target, generated });
            }
            for &generated in dirs {
                terms.push(Term::DtText { target, generated });
            }
        }
    }
    for &d in dirs {
        terms.push(Term::SupSpeech(d));
        terms.push(Term::SupText(d));
    }
    terms
}

/// Speech sequences padded to the longest; `mask[i][t]` is true on real frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSpeech {
    /// `[batch, max_frames, n_mels]`
    pub frames: Tensor,
    pub mask: Vec<Vec<bool>>,
}

impl PaddedSpeech {
    pub fn new(seqs: &[&Tensor]) -> Self {
        let max = seqs.iter().map(|s| s.rows()).max().expect("non-empty group");
        let dim = seqs[0].cols();
        let mut data = vec![0.0; seqs.len() * max * dim];
        let mut mask = Vec::with_capacity(seqs.len());
        for (i, s) in seqs.iter().enumerate() {
            assert_eq!(s.cols(), dim, "frame width mismatch in group");
            data[i * max * dim..i * max * dim + s.len()].copy_from_slice(s.data());
            mask.push((0..max).map(|t| t < s.rows()).collect());
        }
        Self {
            frames: Tensor::new(vec![seqs.len(), max, dim], data).expect("sizes agree"),
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Sequence `i` without its padded tail.
    pub fn sequence(&self, i: usize) -> Tensor {
        let shape = self.frames.shape();
        let (max, dim) = (shape[1], shape[2]);
        let len = self.mask[i].iter().filter(|&&m| m).count();
        let start = i * max * dim;
        Tensor::matrix(len, dim, self.frames.data()[start..start + len * dim].to_vec()).expect("non-empty sequence")
    }
}

/// Id sequences padded with PAD; `mask[i][t]` is true on real tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedText {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl PaddedText {
    pub fn new(seqs: &[&[usize]]) -> Self {
        let max = seqs.iter().map(|s| s.len()).max().expect("non-empty group");
        let ids = seqs
            .iter()
            .map(|s| s.iter().copied().chain(std::iter::repeat(PAD)).take(max).collect())
            .collect();
        let mask = seqs.iter().map(|s| (0..max).map(|t| t < s.len()).collect()).collect();
        Self { ids, mask }
    }

    pub fn sequence(&self, i: usize) -> Vec<usize> {
        self.ids[i].iter().zip(&self.mask[i]).filter(|(_, &m)| m).map(|(&t, _)| t).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchGroup {
    pub term: Term,
    /// Indices into the term's pool (paired indices for supervised terms).
    pub indices: Vec<usize>,
    pub speech: Option<PaddedSpeech>,
    pub text: Option<PaddedText>,
}

impl BatchGroup {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub groups: Vec<BatchGroup>,
}

impl BatchPlan {
    pub fn total_sequences(&self) -> usize {
        self.groups.iter().map(BatchGroup::len).sum()
    }
}

/// Samples `group_size` items per term, with replacement, from the term's pool.
/// Supervised groups draw from the upsampled paired pool.
pub fn make_batch<R: Rng>(
    partition: &CorpusPartition,
    components: Components,
    group_size: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    assert!(group_size > 0, "group size must be positive");
    let upsampled = upsample_paired(partition);
    let groups = batch_terms(components)
        .into_iter()
        .map(|term| {
            let (pool, len): (&[Utterance], usize) = match term.pool() {
                Pool::Speech => (&partition.speech, partition.speech.len()),
                Pool::Text => (&partition.text, partition.text.len()),
                Pool::Paired => (&partition.paired, upsampled.len()),
            };
            if len == 0 {
                return Err(CoreError::Data(format!("empty {:?} pool for {}", term.pool(), term.name())));
            }
            let indices: Vec<usize> = (0..group_size)
                .map(|_| {
                    let k = rng.gen_range(0..len);
                    if term.pool() == Pool::Paired {
                        upsampled[k]
                    } else {
                        k
                    }
                })
                .collect();
            let items: Vec<&Utterance> = indices.iter().map(|&i| &pool[i]).collect();
            let speech = match term.pool() {
                Pool::Speech | Pool::Paired => Some(PaddedSpeech::new(
                    &items.iter().map(|u| u.speech.as_ref().expect("speech in pool")).collect::<Vec<_>>(),
                )),
                Pool::Text => None,
            };
            let text = match term.pool() {
                Pool::Text | Pool::Paired => Some(PaddedText::new(
                    &items.iter().map(|u| u.text.as_deref().expect("text in pool")).collect::<Vec<_>>(),
                )),
                Pool::Speech => None,
            };
            Ok(BatchGroup {
                term,
                indices,
                speech,
                text,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchPlan { groups })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub num_phonemes: usize,
    pub frames_per_phoneme: usize,
    pub n_mels: usize,
    /// Standard deviation of the additive Gaussian frame noise.
    pub noise: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of following the phoneme's preferred successors; the rest
    /// of the time the next phoneme is uniform.
    pub grammar_strength: f64,
    pub successors: usize,
    pub bump_height: f64,
    pub bump_width: f64,
    pub count: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            num_phonemes: 20,
            frames_per_phoneme: 4,
            n_mels: 80,
            noise: 0.1,
            min_len: 5,
            max_len: 20,
            grammar_strength: 0.8,
            successors: 3,
            bump_height: 2.5,
            bump_width: 2.0,
            count: 600,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_phonemes < 2 || self.frames_per_phoneme == 0 || self.n_mels == 0 || self.count == 0 {
            return Err(CoreError::Config("toy sizes must be positive (at least 2 phonemes)".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(CoreError::Config(format!(
                "toy length range {}..={} is invalid",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.grammar_strength) || self.successors == 0 || self.successors > self.num_phonemes {
            return Err(CoreError::Config("toy grammar settings are invalid".into()));
        }
        if self.noise < 0.0 || self.bump_width <= 0.0 {
            return Err(CoreError::Config("toy noise and width must be non-negative/positive".into()));
        }
        Ok(())
    }

    /// One smooth bump per phoneme, centres spread evenly over the bins.
    pub fn patterns(&self) -> Vec<Vec<f64>> {
        (0..self.num_phonemes)
            .map(|p| {
                let centre = (p as f64 + 0.5) * self.n_mels as f64 / self.num_phonemes as f64;
                (0..self.n_mels)
                    .map(|b| {
                        let z = (b as f64 - centre) / self.bump_width;
                        -1.0 + self.bump_height * (-0.5 * z * z).exp()
                    })
                    .collect()
            })
            .collect()
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub spec: ToySpec,
    pub vocab: PhonemeVocab,
    pub patterns: Vec<Vec<f64>>,
    /// Every utterance with both sides, so ground truth is always available.
    pub utterances: Vec<Utterance>,
}

/// Text from a sparse bigram grammar; speech is each phoneme's pattern held
/// for a fixed number of frames, plus Gaussian noise. Values are rounded to
/// 32-bit floats so the in-memory corpus equals its feature files.
pub fn synthesize_toy_corpus(spec: &ToySpec, seed: u64) -> Result<ToyCorpus> {
    spec.validate()?;
    let patterns = spec.patterns();
    let needed = 4.0 * spec.noise * (spec.n_mels as f64).sqrt();
    for i in 0..patterns.len() {
        for j in i + 1..patterns.len() {
            let d = l2(&patterns[i], &patterns[j]);
            if d <= needed {
                return Err(CoreError::Config(format!(
                    "toy patterns {i} and {j} are {d:.3} apart, need more than {needed:.3}"
                )));
            }
        }
    }
    let vocab = PhonemeVocab::toy(spec.num_phonemes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let successors: Vec<Vec<usize>> = (0..spec.num_phonemes)
        .map(|_| {
            let mut all: Vec<usize> = (0..spec.num_phonemes).collect();
            all.shuffle(&mut rng);
            all.truncate(spec.successors);
            all
        })
        .collect();
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let width = format!("{}", spec.count.saturating_sub(1)).len();
    let utterances = (0..spec.count)
        .map(|n| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut phones = vec![rng.gen_range(0..spec.num_phonemes)];
            while phones.len() < len {
                let prev = *phones.last().expect("non-empty");
                let next = if rng.gen::<f64>() < spec.grammar_strength {
                    successors[prev][rng.gen_range(0..spec.successors)]
                } else {
                    rng.gen_range(0..spec.num_phonemes)
                };
                phones.push(next);
            }
            let mut data = Vec::with_capacity(len * spec.frames_per_phoneme * spec.n_mels);
            for &p in &phones {
                for _ in 0..spec.frames_per_phoneme {
                    for &v in &patterns[p] {
                        let noisy = if spec.noise > 0.0 { v + normal.sample(&mut rng) } else { v };
                        data.push(noisy as f32 as f64);
                    }
                }
            }
            let speech = Tensor::matrix(len * spec.frames_per_phoneme, spec.n_mels, data).expect("positive dims");
            let mut text: Vec<usize> = phones.iter().map(|&p| vocab.phoneme_id(p)).collect();
            text.push(EOS);
            Utterance::paired(format!("toy{n:0width$}"), speech, text)
        })
        .collect();
    Ok(ToyCorpus {
        spec: spec.clone(),
        vocab,
        patterns,
        utterances,
    })
}

/// Nearest pattern (Euclidean) for one frame.
pub fn nearest_pattern(frame: &[f64], patterns: &[Vec<f64>]) -> usize {
    patterns
        .iter()
        .enumerate()
        .map(|(i, p)| (i, l2(frame, p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .expect("at least one pattern")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_arithmetic() {
        assert_eq!(upsample_factor(200, 12_300), 62);
        assert_eq!(upsample_factor(50, 50), 1);
        assert_eq!(upsample_factor(10, 0), 1);
    }

    #[test]
    fn term_census() {
        let full = batch_terms(Components::FULL);
        assert_eq!(full.len(), 16);
        assert_eq!(full.iter().filter(|t| t.family() == Family::Dae).count(), 4);
        assert_eq!(full.iter().filter(|t| t.family() == Family::Dt).count(), 8);
        assert_eq!(full.iter().filter(|t| t.family() == Family::Sup).count(), 4);
        let names: HashSet<String> = full.iter().map(|t| t.name()).collect();
        assert_eq!(names.len(), 16);
        assert_eq!(batch_terms(Components::PAIR_ONLY).len(), 2);
    }

    #[test]
    fn padded_text_round_trip() {
        let a = [5, 6, EOS];
        let b = [7, EOS];
        let p = PaddedText::new(&[&a, &b]);
        assert_eq!(p.ids[1], vec![7, EOS, PAD]);
        assert_eq!(p.mask[1], vec![true, true, false]);
        assert_eq!(p.sequence(0), a.to_vec());
        assert_eq!(p.sequence(1), b.to_vec());
    }
}
