//! Post-norm Transformer encoder/decoder stacks on the autodiff tape.
//!
//! Sequences are single `[len, model_dim]` matrices. Padded batches are
//! supported through key-validity masks, so a padded row never influences an
//! unpadded one.

use duplex_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{CoreError, NoRng, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    /// Not stated in the source recipe; 4 is an assumption.
    pub num_heads: usize,
    /// Not stated in the source recipe; 0.1 is an assumption.
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            model_dim: 256,
            ffn_dim: 1024,
            num_heads: 4,
            dropout: 0.1,
            max_len: 1024,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.num_layers, self.model_dim, self.ffn_dim, self.num_heads, self.max_len];
        if sizes.contains(&0) {
            return Err(CoreError::Config("transformer sizes must be positive".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(CoreError::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Padding,
    Causal,
    Combined,
}

/// Which source positions each target position may attend to.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub rows: usize,
    pub cols: usize,
    pub kind: MaskKind,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Every row may attend to the valid keys.
    pub fn padding(rows: usize, key_valid: &[bool]) -> Self {
        let cols = key_valid.len();
        let allowed = (0..rows).flat_map(|_| key_valid.iter().copied()).collect();
        Self::checked(rows, cols, MaskKind::Padding, allowed)
    }

    /// `(i, j)` allowed iff `j ≤ i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect();
        Self::checked(n, n, MaskKind::Causal, allowed)
    }

    /// Causal and restricted to valid keys.
    pub fn combined(key_valid: &[bool]) -> Self {
        let n = key_valid.len();
        let allowed = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| j <= i && key_valid[j])
            .collect();
        Self::checked(n, n, MaskKind::Combined, allowed)
    }

    fn checked(rows: usize, cols: usize, kind: MaskKind, allowed: Vec<bool>) -> Self {
        for r in 0..rows {
            assert!(
                allowed[r * cols..(r + 1) * cols].iter().any(|&a| a),
                "attention row {r} has no unmasked source"
            );
        }
        Self {
            rows,
            cols,
            kind,
            allowed,
        }
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }
}

/// `pe[pos, 2i] = sin(pos / 10000^(2i/d))`, `pe[pos, 2i+1] = cos(…)`.
pub fn positional_encoding(len: usize, dim: usize, offset: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in offset..offset + len {
        for i in 0..dim {
            let rate = 10000f64.powf((i - i % 2) as f64 / dim as f64);
            let a = pos as f64 / rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::matrix(len, dim, data).expect("positive dims")
}

/// Inverted dropout with a freshly drawn mask. Identity when `rng` is `None`
/// or the rate is zero.
pub fn dropout<R: Rng>(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    let m = g.constant(Tensor::new(shape, mask).expect("shape from existing tensor"));
    g.mul(x, m)
}

pub(crate) fn init_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    // Glorot normal
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect()).expect("positive dims")
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), init_matrix(rng, input, output)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn register_zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[input, output])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub num_heads: usize,
}

/// Projected keys and values of a source sequence, reusable across queries.
#[derive(Clone, Copy, Debug)]
pub struct KeyValue {
    pub keys: Var,
    pub values: Var,
}

impl MultiHeadAttention {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, num_heads: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::register(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::register(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::register(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::register(store, &format!("{name}.output"), dim, dim, rng),
            num_heads,
        }
    }

    pub fn project_source(&self, g: &mut Graph, source: Var) -> KeyValue {
        KeyValue {
            keys: self.key.forward(g, source),
            values: self.value.forward(g, source),
        }
    }

    /// Scaled dot-product attention per head over already projected keys and
    /// values; heads are concatenated and projected.
    pub fn attend(&self, g: &mut Graph, queries: Var, kv: KeyValue, mask: Option<&AttentionMask>) -> Var {
        let q = self.query.forward(g, queries);
        let (rows, dim) = (g.value(q).rows(), g.value(q).cols());
        let cols = g.value(kv.keys).rows();
        assert_eq!(cols, g.value(kv.values).rows(), "key and value lengths differ");
        if let Some(m) = mask {
            assert_eq!((m.rows, m.cols), (rows, cols), "attention mask shape");
        }
        let hd = dim / self.num_heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let heads: Vec<Var> = (0..self.num_heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * hd, hd);
                let kh = g.slice_cols(kv.keys, h * hd, hd);
                let vh = g.slice_cols(kv.values, h * hd, hd);
                let scores = g.matmul_bt(qh, kh);
                let scores = g.scale(scores, scale);
                let weights = g.softmax_rows(scores, mask.map(AttentionMask::allowed));
                g.matmul(weights, vh)
            })
            .collect();
        let ctx = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.output.forward(g, ctx)
    }

    pub fn forward(&self, g: &mut Graph, queries: Var, source: Var, mask: Option<&AttentionMask>) -> Var {
        let kv = self.project_source(g, source);
        self.attend(g, queries, kv, mask)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::register(store, &format!("{name}.inner"), dim, hidden, rng),
            outer: Linear::register(store, &format!("{name}.outer"), hidden, dim, rng),
        }
    }

    pub fn forward<R: Rng>(&self, g: &mut Graph, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let h = self.inner.forward(g, x);
        let h = g.relu(h);
        let h = dropout(g, h, rate, rng);
        self.outer.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: TransformerConfig,
    pub layers: Vec<EncoderLayer>,
}

/// `norm(x + dropout(sublayer))`
fn residual<R: Rng>(g: &mut Graph, x: Var, sub: Var, norm: &LayerNorm, rate: f64, rng: Option<&mut R>) -> Var {
    let sub = dropout(g, sub, rate, rng);
    let sum = g.add(x, sub);
    norm.forward(g, sum)
}

impl Encoder {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, config: &TransformerConfig, rng: &mut R) -> Self {
        let (d, f, h) = (config.model_dim, config.ffn_dim, config.num_heads);
        let layers = (0..config.num_layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                EncoderLayer {
                    attention: MultiHeadAttention::register(store, &format!("{p}.self_attention"), d, h, rng),
                    attention_norm: LayerNorm::register(store, &format!("{p}.self_attention_norm"), d),
                    ffn: FeedForward::register(store, &format!("{p}.ffn"), d, f, rng),
                    ffn_norm: LayerNorm::register(store, &format!("{p}.ffn_norm"), d),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
        }
    }

    /// `input` is `[len, model_dim]`, already embedded and position-encoded.
    /// `valid` marks unpadded positions (all valid when `None`).
    pub fn encode<R: Rng>(&self, g: &mut Graph, input: Var, valid: Option<&[bool]>, mut rng: Option<&mut R>) -> Var {
        let len = g.value(input).rows();
        assert!(
            len <= self.config.max_len,
            "sequence length {len} exceeds maximum {}",
            self.config.max_len
        );
        let mask = valid.map(|v| {
            assert_eq!(v.len(), len, "padding mask length");
            AttentionMask::padding(len, v)
        });
        let rate = self.config.dropout;
        let mut x = input;
        for layer in &self.layers {
            let a = layer.attention.forward(g, x, x, mask.as_ref());
            x = residual(g, x, a, &layer.attention_norm, rate, rng.as_deref_mut());
            let f = layer.ffn.forward(g, x, rate, rng.as_deref_mut());
            x = residual(g, x, f, &layer.ffn_norm, rate, rng.as_deref_mut());
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub self_attention_norm: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub cross_attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: TransformerConfig,
    pub layers: Vec<DecoderLayer>,
}

/// Encoder output prepared for cross-attention: per-layer projected keys and
/// values plus the source padding mask.
pub struct Memory {
    kv: Vec<KeyValue>,
    valid: Option<Vec<bool>>,
    len: usize,
}

impl Memory {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Per-layer self-attention key/value rows for incremental decoding.
pub struct DecoderCache {
    keys: Vec<Vec<Var>>,
    values: Vec<Vec<Var>>,
}

impl DecoderCache {
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Decoder {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, config: &TransformerConfig, rng: &mut R) -> Self {
        let (d, f, h) = (config.model_dim, config.ffn_dim, config.num_heads);
        let layers = (0..config.num_layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                DecoderLayer {
                    self_attention: MultiHeadAttention::register(store, &format!("{p}.self_attention"), d, h, rng),
                    self_attention_norm: LayerNorm::register(store, &format!("{p}.self_attention_norm"), d),
                    cross_attention: MultiHeadAttention::register(store, &format!("{p}.cross_attention"), d, h, rng),
                    cross_attention_norm: LayerNorm::register(store, &format!("{p}.cross_attention_norm"), d),
                    ffn: FeedForward::register(store, &format!("{p}.ffn"), d, f, rng),
                    ffn_norm: LayerNorm::register(store, &format!("{p}.ffn_norm"), d),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
        }
    }

    pub fn memory(&self, g: &mut Graph, encoded: Var, valid: Option<&[bool]>) -> Memory {
        let len = g.value(encoded).rows();
        if let Some(v) = valid {
            assert_eq!(v.len(), len, "memory mask length");
        }
        Memory {
            kv: self
                .layers
                .iter()
                .map(|l| l.cross_attention.project_source(g, encoded))
                .collect(),
            valid: valid.map(<[bool]>::to_vec),
            len,
        }
    }

    /// Full teacher-forced pass. `input` is `[len, model_dim]` with position 0
    /// holding the start element. Output row `t` depends only on input rows `≤ t`.
    pub fn decode<R: Rng>(
        &self,
        g: &mut Graph,
        input: Var,
        memory: &Memory,
        valid: Option<&[bool]>,
        mut rng: Option<&mut R>,
    ) -> Var {
        let len = g.value(input).rows();
        assert!(len >= 1, "decoder needs at least the start element");
        assert!(
            len <= self.config.max_len,
            "sequence length {len} exceeds maximum {}",
            self.config.max_len
        );
        let self_mask = match valid {
            Some(v) => AttentionMask::combined(v),
            None => AttentionMask::causal(len),
        };
        let cross_mask = memory.valid.as_deref().map(|v| AttentionMask::padding(len, v));
        let rate = self.config.dropout;
        let mut x = input;
        for (layer, kv) in self.layers.iter().zip(&memory.kv) {
            let a = layer.self_attention.forward(g, x, x, Some(&self_mask));
            x = residual(g, x, a, &layer.self_attention_norm, rate, rng.as_deref_mut());
            let c = layer.cross_attention.attend(g, x, *kv, cross_mask.as_ref());
            x = residual(g, x, c, &layer.cross_attention_norm, rate, rng.as_deref_mut());
            let f = layer.ffn.forward(g, x, rate, rng.as_deref_mut());
            x = residual(g, x, f, &layer.ffn_norm, rate, rng.as_deref_mut());
        }
        x
    }

    pub fn start_cache(&self) -> DecoderCache {
        DecoderCache {
            keys: vec![Vec::new(); self.layers.len()],
            values: vec![Vec::new(); self.layers.len()],
        }
    }

    /// One incremental step without dropout: `input` is the single next row
    /// `[1, model_dim]`; returns the hidden state `[1, model_dim]` for that
    /// position. Matches [`Decoder::decode`] on the full prefix.
    pub fn step(&self, g: &mut Graph, input: Var, memory: &Memory, cache: &mut DecoderCache) -> Var {
        assert_eq!(g.value(input).rows(), 1, "incremental step takes one row");
        assert!(cache.len() < self.config.max_len, "decode exceeds maximum length");
        let cross_mask = memory.valid.as_deref().map(|v| AttentionMask::padding(1, v));
        let mut x = input;
        for (l, (layer, kv)) in self.layers.iter().zip(&memory.kv).enumerate() {
            let own = layer.self_attention.project_source(g, x);
            cache.keys[l].push(own.keys);
            cache.values[l].push(own.values);
            let past = KeyValue {
                keys: concat_or_single(g, &cache.keys[l]),
                values: concat_or_single(g, &cache.values[l]),
            };
            let a = layer.self_attention.attend(g, x, past, None);
            x = residual::<NoRng>(g, x, a, &layer.self_attention_norm, 0.0, None);
            let c = layer.cross_attention.attend(g, x, *kv, cross_mask.as_ref());
            x = residual::<NoRng>(g, x, c, &layer.cross_attention_norm, 0.0, None);
            let f = layer.ffn.forward::<NoRng>(g, x, 0.0, None);
            x = residual::<NoRng>(g, x, f, &layer.ffn_norm, 0.0, None);
        }
        x
    }
}

fn concat_or_single(g: &mut Graph, rows: &[Var]) -> Var {
    if rows.len() == 1 {
        rows[0]
    } else {
        g.concat_rows(rows)
    }
}
