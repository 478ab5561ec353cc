//! Run configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use duplex_dsp::StftConfig;

use crate::corpus::{Components, SplitConfig};
use crate::modality::ModelConfig;
use crate::training::TrainConfig;
use crate::{CoreError, Result};

/// Every tunable of a training or evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub stft: StftConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub model_seed: u64,
    pub steps: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub griffin_lim_iters: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            stft: StftConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            split_seed: 1,
            model_seed: 1,
            steps: 100_000,
            checkpoint_every: 1000,
            griffin_lim_iters: 60,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CoreError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn show_optional<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "none".to_string(),
    }
}

impl RunConfig {
    /// Reads config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CoreError::Config(format!("line {}: expected key = value", n + 1)));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| CoreError::Config(format!("line {}: {}", n + 1, config_message(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "layers" => m.transformer.num_layers = parse_value(key, value)?,
            "model_dim" => {
                m.transformer.model_dim = parse_value(key, value)?;
                t.adam.model_dim = m.transformer.model_dim;
            }
            "ffn_dim" => m.transformer.ffn_dim = parse_value(key, value)?,
            "heads" => m.transformer.num_heads = parse_value(key, value)?,
            "dropout" => m.transformer.dropout = parse_value(key, value)?,
            "max_len" => m.transformer.max_len = parse_value(key, value)?,
            "n_mels" => {
                m.n_mels = parse_value(key, value)?;
                self.stft.n_mels = m.n_mels;
            }
            "prenet_hidden" => m.prenet_hidden = parse_value(key, value)?,
            "prenet_dropout" => m.prenet_dropout = parse_value(key, value)?,
            "postnet_channels" => m.postnet_channels = parse_value(key, value)?,
            "postnet_kernel" => m.postnet_kernel = parse_value(key, value)?,
            "postnet_layers" => m.postnet_layers = parse_value(key, value)?,
            "sample_rate" => self.stft.sample_rate = parse_value(key, value)?,
            "frame_length" => self.stft.frame_length = parse_value(key, value)?,
            "hop_length" => self.stft.hop_length = parse_value(key, value)?,
            "fft_size" => self.stft.fft_size = parse_value(key, value)?,
            "fmin" => self.stft.fmin = parse_value(key, value)?,
            "fmax" => self.stft.fmax = parse_value(key, value)?,
            "train_count" => self.split.train = parse_value(key, value)?,
            "val_count" => self.split.val = parse_value(key, value)?,
            "test_count" => self.split.test = parse_value(key, value)?,
            "paired" => self.split.paired = parse_value(key, value)?,
            "disjoint_halves" => self.split.disjoint_halves = parse_value(key, value)?,
            "dae" => t.components.dae = parse_value(key, value)?,
            "dt" => t.components.dt = parse_value(key, value)?,
            "bsm" => t.components.bsm = parse_value(key, value)?,
            "group_size" => t.group_size = parse_value(key, value)?,
            "mask_prob" => t.corruption.mask_prob = parse_value(key, value)?,
            "swap_window" => t.corruption.swap_window = parse_optional(key, value)?,
            "stop_pos_weight" => t.stop_pos_weight = parse_value(key, value)?,
            "text_per_frame" => t.limits.text_per_frame = parse_value(key, value)?,
            "frames_per_token" => t.limits.frames_per_token = parse_value(key, value)?,
            "beta1" => t.adam.beta1 = parse_value(key, value)?,
            "beta2" => t.adam.beta2 = parse_value(key, value)?,
            "epsilon" => t.adam.epsilon = parse_value(key, value)?,
            "warmup_steps" => t.adam.warmup_steps = parse_value(key, value)?,
            "lr_scale" => t.adam.lr_scale = parse_value(key, value)?,
            "clip_norm" => t.clip_norm = parse_optional(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "model_seed" => self.model_seed = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "griffin_lim_iters" => self.griffin_lim_iters = parse_value(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(CoreError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.corruption.validate()?;
        self.stft.validate().map_err(|e| CoreError::Config(e.to_string()))?;
        if self.stft.n_mels != self.model.n_mels {
            return Err(CoreError::Config("stft and model disagree on n_mels".into()));
        }
        if self.train.adam.model_dim != self.model.transformer.model_dim {
            return Err(CoreError::Config("optimizer model_dim differs from the model".into()));
        }
        if self.train.group_size == 0 {
            return Err(CoreError::Config("group_size must be positive".into()));
        }
        if self.split.paired == 0 || self.split.paired > self.split.train {
            return Err(CoreError::Config("paired must be in 1..=train_count".into()));
        }
        Ok(())
    }

    /// Fully resolved config; `parse(echo())` gives back the same value.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let tr = &m.transformer;
        let t = &self.train;
        let c: Components = t.components;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("layers", tr.num_layers.to_string());
        put("model_dim", tr.model_dim.to_string());
        put("ffn_dim", tr.ffn_dim.to_string());
        put("heads", tr.num_heads.to_string());
        put("dropout", tr.dropout.to_string());
        put("max_len", tr.max_len.to_string());
        put("n_mels", m.n_mels.to_string());
        put("prenet_hidden", m.prenet_hidden.to_string());
        put("prenet_dropout", m.prenet_dropout.to_string());
        put("postnet_channels", m.postnet_channels.to_string());
        put("postnet_kernel", m.postnet_kernel.to_string());
        put("postnet_layers", m.postnet_layers.to_string());
        put("sample_rate", self.stft.sample_rate.to_string());
        put("frame_length", self.stft.frame_length.to_string());
        put("hop_length", self.stft.hop_length.to_string());
        put("fft_size", self.stft.fft_size.to_string());
        put("fmin", self.stft.fmin.to_string());
        put("fmax", self.stft.fmax.to_string());
        put("train_count", self.split.train.to_string());
        put("val_count", self.split.val.to_string());
        put("test_count", self.split.test.to_string());
        put("paired", self.split.paired.to_string());
        put("disjoint_halves", self.split.disjoint_halves.to_string());
        put("dae", c.dae.to_string());
        put("dt", c.dt.to_string());
        put("bsm", c.bsm.to_string());
        put("group_size", t.group_size.to_string());
        put("mask_prob", t.corruption.mask_prob.to_string());
        put("swap_window", show_optional(&t.corruption.swap_window));
        put("stop_pos_weight", t.stop_pos_weight.to_string());
        put("text_per_frame", t.limits.text_per_frame.to_string());
        put("frames_per_token", t.limits.frames_per_token.to_string());
        put("beta1", t.adam.beta1.to_string());
        put("beta2", t.adam.beta2.to_string());
        put("epsilon", t.adam.epsilon.to_string());
        put("warmup_steps", t.adam.warmup_steps.to_string());
        put("lr_scale", t.adam.lr_scale.to_string());
        put("clip_norm", show_optional(&t.clip_norm));
        put("seed", t.seed.to_string());
        put("split_seed", self.split_seed.to_string());
        put("model_seed", self.model_seed.to_string());
        put("steps", self.steps.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("griffin_lim_iters", self.griffin_lim_iters.to_string());
        put("data_dir", self.data_dir.display().to_string());
        put("out_dir", self.out_dir.display().to_string());
        s
    }
}

fn config_message(e: CoreError) -> String {
    match e {
        CoreError::Config(m) => m,
        other => other.to_string(),
    }
}
