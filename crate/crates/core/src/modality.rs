//! Speech and text input/output modules, direction-start embeddings and the
//! four Transformer stacks, bundled as one [`Model`].

use duplex_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::text::{EOS, MASK, PAD};
use crate::transformer::{
    dropout, init_matrix, positional_encoding, Decoder, DecoderCache, Encoder, Linear, Memory, TransformerConfig,
};
use crate::{CoreError, NoRng, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Speech,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::LeftToRight, Direction::RightToLeft];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::LeftToRight => "l2r",
            Direction::RightToLeft => "r2l",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub transformer: TransformerConfig,
    pub n_mels: usize,
    pub vocab_size: usize,
    pub prenet_hidden: usize,
    /// Applied during training only.
    pub prenet_dropout: f64,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub postnet_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            transformer: TransformerConfig::default(),
            n_mels: 80,
            vocab_size: 43,
            prenet_hidden: 256,
            prenet_dropout: 0.5,
            postnet_channels: 256,
            postnet_kernel: 5,
            postnet_layers: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if [self.n_mels, self.vocab_size, self.prenet_hidden, self.postnet_channels].contains(&0) {
            return Err(CoreError::Config("model sizes must be positive".into()));
        }
        if self.postnet_layers < 2 {
            return Err(CoreError::Config("post-net needs at least 2 layers".into()));
        }
        if self.postnet_kernel % 2 == 0 {
            return Err(CoreError::Config("post-net kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(CoreError::Config("prenet_dropout outside [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Decoder outputs for speech, each `[len, …]`.
#[derive(Clone, Copy, Debug)]
pub struct SpeechOutput {
    pub mel_before: Var,
    pub mel_after: Var,
    pub stop_logits: Var,
}

/// A greedy decode. `truncated` is set when the length cap was hit before the
/// model chose to stop.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated<T> {
    pub output: T,
    pub truncated: bool,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub speech_encoder: Encoder,
    pub speech_decoder: Decoder,
    pub text_encoder: Encoder,
    pub text_decoder: Decoder,
    pub prenet: [Linear; 2],
    pub mel_head: Linear,
    pub stop_head: Linear,
    pub postnet: Vec<Conv1d>,
    /// `[vocab, model_dim]`, also the transposed text output projection.
    pub phoneme_embedding: ParamId,
    /// Indexed by [`Model::start_index`].
    pub start: [ParamId; 4],
}

pub const STACK_PREFIXES: [&str; 4] = ["speech_encoder", "speech_decoder", "text_encoder", "text_decoder"];

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let t = &config.transformer;
        let d = t.model_dim;
        let speech_encoder = Encoder::register(&mut p, "speech_encoder", t, &mut rng);
        let speech_decoder = Decoder::register(&mut p, "speech_decoder", t, &mut rng);
        let text_encoder = Encoder::register(&mut p, "text_encoder", t, &mut rng);
        let text_decoder = Decoder::register(&mut p, "text_decoder", t, &mut rng);
        let prenet = [
            Linear::register(&mut p, "prenet.dense0", config.n_mels, config.prenet_hidden, &mut rng),
            Linear::register(&mut p, "prenet.dense1", config.prenet_hidden, d, &mut rng),
        ];
        let mel_head = Linear::register(&mut p, "mel_head", d, config.n_mels, &mut rng);
        let stop_head = Linear::register(&mut p, "stop_head", d, 1, &mut rng);
        let (k, c) = (config.postnet_kernel, config.postnet_channels);
        let postnet = (0..config.postnet_layers)
            .map(|l| {
                let cin = if l == 0 { config.n_mels } else { c };
                let last = l + 1 == config.postnet_layers;
                let cout = if last { config.n_mels } else { c };
                let weight = if last {
                    Tensor::zeros(&[k, cin, cout])
                } else {
                    init_matrix(&mut rng, k * cin, cout).reshape(vec![k, cin, cout]).expect("same size")
                };
                Conv1d {
                    weight: p.add(format!("postnet.conv{l}.weight"), weight),
                    bias: p.add(format!("postnet.conv{l}.bias"), Tensor::zeros(&[cout])),
                }
            })
            .collect();
        let normal = Normal::new(0.0, (d as f64).powf(-0.5)).expect("finite std");
        let emb: Vec<f64> = (0..config.vocab_size * d).map(|_| normal.sample(&mut rng)).collect();
        let phoneme_embedding = p.add(
            "phoneme_embedding",
            Tensor::matrix(config.vocab_size, d, emb).expect("positive dims"),
        );
        let start = [
            (Domain::Speech, Direction::LeftToRight),
            (Domain::Speech, Direction::RightToLeft),
            (Domain::Text, Direction::LeftToRight),
            (Domain::Text, Direction::RightToLeft),
        ]
        .map(|(dom, dir)| {
            let v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            p.add(
                format!("start.{}.{}", domain_tag(dom), dir.tag()),
                Tensor::matrix(1, d, v).expect("positive dims"),
            )
        });
        Ok(Self {
            config,
            params: p,
            speech_encoder,
            speech_decoder,
            text_encoder,
            text_decoder,
            prenet,
            mel_head,
            stop_head,
            postnet,
            phoneme_embedding,
            start,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.config.transformer.model_dim
    }

    pub fn start_index(domain: Domain, dir: Direction) -> usize {
        match (domain, dir) {
            (Domain::Speech, Direction::LeftToRight) => 0,
            (Domain::Speech, Direction::RightToLeft) => 1,
            (Domain::Text, Direction::LeftToRight) => 2,
            (Domain::Text, Direction::RightToLeft) => 3,
        }
    }

    /// The learnable start element for `(domain, dir)`; a constant zero vector
    /// when bidirectional modeling is off.
    pub fn start_frame(&self, g: &mut Graph, domain: Domain, dir: Direction, learned: bool) -> Var {
        if learned {
            g.param(self.start[Self::start_index(domain, dir)])
        } else {
            g.constant(Tensor::zeros(&[1, self.model_dim()]))
        }
    }

    fn add_positions(&self, g: &mut Graph, x: Var, offset: usize) -> Var {
        let len = g.value(x).rows();
        let pe = g.constant(positional_encoding(len, self.model_dim(), offset));
        g.add(x, pe)
    }

    /// Pre-net on `[len, n_mels]` frames, without positions.
    pub fn prenet_forward<R: Rng>(&self, g: &mut Graph, frames: Var, rng: Option<&mut R>) -> Var {
        assert_eq!(g.value(frames).cols(), self.config.n_mels, "speech frames must be {}-dim", self.config.n_mels);
        let h = self.prenet[0].forward(g, frames);
        let h = g.relu(h);
        let h = dropout(g, h, self.config.prenet_dropout, rng);
        self.prenet[1].forward(g, h)
    }

    /// Pre-net plus positional encoding.
    pub fn speech_input<R: Rng>(&self, g: &mut Graph, frames: &Tensor, rng: Option<&mut R>) -> Var {
        let x = g.constant(frames.clone());
        let h = self.prenet_forward(g, x, rng);
        self.add_positions(g, h, 0)
    }

    fn embed(&self, g: &mut Graph, ids: &[usize]) -> Var {
        for &i in ids {
            assert!(i < self.config.vocab_size, "phoneme id {i} outside vocabulary");
        }
        let table = g.param(self.phoneme_embedding);
        let e = g.gather_rows(table, ids);
        g.scale(e, (self.model_dim() as f64).sqrt())
    }

    /// Scaled tied embedding plus positional encoding.
    pub fn text_input(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let e = self.embed(g, ids);
        self.add_positions(g, e, 0)
    }

    /// Mel frames before and after the residual post-net, and stop logits.
    pub fn speech_output(&self, g: &mut Graph, hidden: Var) -> SpeechOutput {
        let mel_before = self.mel_head.forward(g, hidden);
        let stop_logits = self.stop_head.forward(g, hidden);
        let refinement = self.postnet_forward(g, mel_before);
        let mel_after = g.add(mel_before, refinement);
        SpeechOutput {
            mel_before,
            mel_after,
            stop_logits,
        }
    }

    pub fn postnet_forward(&self, g: &mut Graph, mel: Var) -> Var {
        let mut h = mel;
        for (l, conv) in self.postnet.iter().enumerate() {
            let w = g.param(conv.weight);
            let b = g.param(conv.bias);
            h = g.conv1d(h, w, b);
            if l + 1 < self.postnet.len() {
                h = g.tanh(h);
            }
        }
        h
    }

    /// Logits over the vocabulary through the transposed embedding matrix.
    pub fn text_output(&self, g: &mut Graph, hidden: Var) -> Var {
        let table = g.param(self.phoneme_embedding);
        g.matmul_bt(hidden, table)
    }

    pub fn encode_speech<R: Rng>(&self, g: &mut Graph, frames: &Tensor, mut rng: Option<&mut R>) -> Var {
        let x = self.speech_input(g, frames, rng.as_deref_mut());
        self.speech_encoder.encode(g, x, None, rng)
    }

    pub fn encode_text<R: Rng>(&self, g: &mut Graph, ids: &[usize], rng: Option<&mut R>) -> Var {
        let x = self.text_input(g, ids);
        self.text_encoder.encode(g, x, None, rng)
    }

    /// Teacher-forced speech decoding of `target` (`[len, n_mels]`).
    pub fn decode_speech<R: Rng>(
        &self,
        g: &mut Graph,
        encoded: Var,
        target: &Tensor,
        dir: Direction,
        learned_start: bool,
        mut rng: Option<&mut R>,
    ) -> SpeechOutput {
        let len = target.rows();
        let start = self.start_frame(g, Domain::Speech, dir, learned_start);
        let input = if len > 1 {
            let prev = Tensor::matrix(len - 1, target.cols(), target.data()[..(len - 1) * target.cols()].to_vec())
                .expect("positive dims");
            let prev = g.constant(prev);
            let pre = self.prenet_forward(g, prev, rng.as_deref_mut());
            g.concat_rows(&[start, pre])
        } else {
            start
        };
        let input = self.add_positions(g, input, 0);
        let memory = self.speech_decoder.memory(g, encoded, None);
        let hidden = self.speech_decoder.decode(g, input, &memory, None, rng);
        self.speech_output(g, hidden)
    }

    /// Teacher-forced text decoding; returns `[len, vocab]` logits predicting `target`.
    pub fn decode_text<R: Rng>(
        &self,
        g: &mut Graph,
        encoded: Var,
        target: &[usize],
        dir: Direction,
        learned_start: bool,
        rng: Option<&mut R>,
    ) -> Var {
        assert!(!target.is_empty(), "empty text target");
        let start = self.start_frame(g, Domain::Text, dir, learned_start);
        let input = if target.len() > 1 {
            let prev = self.embed(g, &target[..target.len() - 1]);
            g.concat_rows(&[start, prev])
        } else {
            start
        };
        let input = self.add_positions(g, input, 0);
        let memory = self.text_decoder.memory(g, encoded, None);
        let hidden = self.text_decoder.decode(g, input, &memory, None, rng);
        self.text_output(g, hidden)
    }

    /// Greedy text decode. PAD and MASK are never emitted; EOS ends the
    /// sequence and is appended if the cap is hit first.
    pub fn generate_text(
        &self,
        g: &mut Graph,
        encoded: Var,
        dir: Direction,
        learned_start: bool,
        max_len: usize,
    ) -> Generated<Vec<usize>> {
        let max_len = max_len.clamp(1, self.config.transformer.max_len);
        let memory = self.text_decoder.memory(g, encoded, None);
        let mut cache = self.text_decoder.start_cache();
        let start = self.start_frame(g, Domain::Text, dir, learned_start);
        let mut input = self.add_positions(g, start, 0);
        let mut out = Vec::new();
        loop {
            let h = self.text_decoder.step(g, input, &memory, &mut cache);
            let logits = self.text_output(g, h);
            let tok = argmax_allowed(g.value(logits).data());
            out.push(tok);
            if tok == EOS {
                return Generated {
                    output: out,
                    truncated: false,
                };
            }
            if out.len() >= max_len {
                *out.last_mut().expect("non-empty") = EOS;
                return Generated {
                    output: out,
                    truncated: true,
                };
            }
            let e = self.embed(g, &[tok]);
            input = self.add_positions(g, e, out.len());
        }
    }

    /// Greedy speech decode: each `mel_before` frame is fed back through the
    /// pre-net until the stop probability exceeds 0.5 or the cap is hit. Returns
    /// post-net refined frames `[len, n_mels]`.
    pub fn generate_speech(
        &self,
        g: &mut Graph,
        encoded: Var,
        dir: Direction,
        learned_start: bool,
        max_len: usize,
    ) -> Generated<Tensor> {
        let max_len = max_len.clamp(1, self.config.transformer.max_len);
        let memory = self.speech_decoder.memory(g, encoded, None);
        let mut cache = self.speech_decoder.start_cache();
        let start = self.start_frame(g, Domain::Speech, dir, learned_start);
        let mut input = self.add_positions(g, start, 0);
        let mut frames = Vec::new();
        let truncated = loop {
            let h = self.speech_decoder.step(g, input, &memory, &mut cache);
            let frame = self.mel_head.forward(g, h);
            let stop = self.stop_head.forward(g, h);
            frames.push(frame);
            if duplex_tensor::kernels::sigmoid(g.value(stop).item()) > 0.5 {
                break false;
            }
            if frames.len() >= max_len {
                break true;
            }
            let pre = self.prenet_forward::<NoRng>(g, frame, None);
            input = self.add_positions(g, pre, frames.len());
        };
        let before = if frames.len() == 1 { frames[0] } else { g.concat_rows(&frames) };
        let refinement = self.postnet_forward(g, before);
        let after = g.add(before, refinement);
        Generated {
            output: g.value(after).clone(),
            truncated,
        }
    }

    fn decoder_memory(&self, g: &mut Graph, encoded: Var, domain: Domain) -> Memory {
        match domain {
            Domain::Speech => self.speech_decoder.memory(g, encoded, None),
            Domain::Text => self.text_decoder.memory(g, encoded, None),
        }
    }

    /// Runs the first `prefix` inputs through incremental decoding; used to
    /// check that cached and full decoding agree.
    pub fn incremental_hidden(&self, g: &mut Graph, encoded: Var, domain: Domain, inputs: &[Var]) -> Vec<Var> {
        let memory = self.decoder_memory(g, encoded, domain);
        let dec = match domain {
            Domain::Speech => &self.speech_decoder,
            Domain::Text => &self.text_decoder,
        };
        let mut cache: DecoderCache = dec.start_cache();
        inputs.iter().map(|&x| dec.step(g, x, &memory, &mut cache)).collect()
    }
}

fn domain_tag(d: Domain) -> &'static str {
    match d {
        Domain::Speech => "speech",
        Domain::Text => "text",
    }
}

/// Highest logit, skipping PAD and MASK (first index wins ties).
fn argmax_allowed(logits: &[f64]) -> usize {
    let mut best = None;
    for (i, &v) in logits.iter().enumerate() {
        if i == PAD || i == MASK {
            continue;
        }
        match best {
            Some((_, b)) if b >= v => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(EOS, |(i, _)| i)
}
