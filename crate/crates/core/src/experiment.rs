//! End-to-end toy runs: synthesize, split, train, evaluate recognition.

use crate::config::RunConfig;
use crate::corpus::{split_dataset, synthesize_toy_corpus, CorpusPartition, SplitConfig, ToyCorpus, ToySpec, Utterance};
use crate::eval::{right_half_per, PerSummary};
use crate::modality::{Direction, Model, ModelConfig};
use crate::store::{load_corpus, StoredCorpus};
use crate::text::EOS;
use crate::training::{LossReport, TrainConfig, Trainer};
use crate::{CoreError, Result};

/// Strips a trailing EOS; PER compares phonemes only.
pub fn phonemes_only(ids: &[usize]) -> &[usize] {
    match ids.split_last() {
        Some((&EOS, rest)) => rest,
        _ => ids,
    }
}

/// Greedy recognition PER over utterances with both sides.
pub fn evaluate_recognition(trainer: &Trainer, utterances: &[Utterance], dir: Direction) -> Result<PerSummary> {
    let mut refs = Vec::with_capacity(utterances.len());
    let mut hyps = Vec::with_capacity(utterances.len());
    for u in utterances {
        let (Some(speech), Some(text)) = (&u.speech, &u.text) else {
            return Err(CoreError::Data(format!("utterance {} is not paired", u.id)));
        };
        let hyp = trainer.recognize(speech, dir).output;
        refs.push(phonemes_only(text).to_vec());
        hyps.push(phonemes_only(&hyp).to_vec());
    }
    right_half_per(&refs, &hyps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyExperiment {
    pub toy: ToySpec,
    pub corpus_seed: u64,
    pub split: SplitConfig,
    pub split_seed: u64,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub steps: u64,
}

pub struct ToyOutcome {
    pub trainer: Trainer,
    pub corpus: ToyCorpus,
    pub partition: CorpusPartition,
    pub losses: Vec<LossReport>,
    pub test: PerSummary,
}

impl ToyExperiment {
    pub fn prepare(&self) -> Result<(ToyCorpus, CorpusPartition, Trainer)> {
        let corpus = synthesize_toy_corpus(&self.toy, self.corpus_seed)?;
        let partition = split_dataset(&corpus.utterances, &self.split, self.split_seed)?;
        let mut model_cfg = self.model.clone();
        model_cfg.vocab_size = corpus.vocab.len();
        model_cfg.n_mels = self.toy.n_mels;
        let trainer = Trainer::new(Model::new(model_cfg, self.model_seed)?, self.train.clone())?;
        Ok((corpus, partition, trainer))
    }

    /// Trains for `steps` and evaluates on the test split. `observe` sees every
    /// step's report.
    pub fn run(&self, mut observe: impl FnMut(&LossReport)) -> Result<ToyOutcome> {
        let (corpus, partition, mut trainer) = self.prepare()?;
        let mut losses = Vec::with_capacity(self.steps as usize);
        while trainer.step() < self.steps {
            let r = trainer.train_step(&partition)?;
            observe(&r);
            losses.push(r);
        }
        let test = evaluate_recognition(&trainer, &partition.test, Direction::LeftToRight)?;
        Ok(ToyOutcome {
            trainer,
            corpus,
            partition,
            losses,
            test,
        })
    }
}

/// Model settings from `cfg` with the vocabulary size of the data.
pub fn model_config(cfg: &RunConfig, vocab_size: usize) -> ModelConfig {
    let mut m = cfg.model.clone();
    m.vocab_size = vocab_size;
    m
}

pub fn build_trainer(cfg: &RunConfig, vocab_size: usize) -> Result<Trainer> {
    let model = Model::new(model_config(cfg, vocab_size), cfg.model_seed)?;
    Trainer::new(model, cfg.train.clone())
}

/// A run over a stored corpus: loaded data, its split, and a fresh trainer.
pub struct DataRun {
    pub config: RunConfig,
    pub corpus: StoredCorpus,
    pub partition: CorpusPartition,
    pub trainer: Trainer,
}

impl DataRun {
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let corpus = load_corpus(&config.data_dir)?;
        if let Some(n) = corpus.n_mels() {
            if n != config.model.n_mels {
                return Err(CoreError::Data(format!(
                    "features have {n} mel bins, config expects {}",
                    config.model.n_mels
                )));
            }
        }
        let partition = split_dataset(&corpus.utterances, &config.split, config.split_seed)?;
        let trainer = build_trainer(&config, corpus.vocab.len())?;
        Ok(Self {
            config,
            corpus,
            partition,
            trainer,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    /// Pair-only, +DAE, +DAE+DT, full.
    Ablation,
    /// Paired-data counts.
    Paired,
    /// DAE masking probabilities.
    MaskProb,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ablation" => Ok(Self::Ablation),
            "paired" => Ok(Self::Paired),
            "maskprob" => Ok(Self::MaskProb),
            _ => Err(CoreError::Config(format!("unknown sweep {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ablation => "ablation",
            Self::Paired => "paired",
            Self::MaskProb => "maskprob",
        }
    }

    /// Setting label and the config overrides it applies.
    pub fn settings(self) -> Vec<(String, Vec<(&'static str, String)>)> {
        let flags = |dae: bool, dt: bool, bsm: bool| {
            vec![("dae", dae.to_string()), ("dt", dt.to_string()), ("bsm", bsm.to_string())]
        };
        match self {
            Self::Ablation => vec![
                ("pair-only".to_string(), flags(false, false, false)),
                ("+dae".to_string(), flags(true, false, false)),
                ("+dae+dt".to_string(), flags(true, true, false)),
                ("+dae+dt+bsm".to_string(), flags(true, true, true)),
            ],
            Self::Paired => [100, 200, 300, 400, 500]
                .iter()
                .map(|n| (n.to_string(), vec![("paired", n.to_string())]))
                .collect(),
            Self::MaskProb => ["0.1", "0.2", "0.3", "0.4", "0.5"]
                .iter()
                .map(|p| (p.to_string(), vec![("mask_prob", p.to_string())]))
                .collect(),
        }
    }
}
