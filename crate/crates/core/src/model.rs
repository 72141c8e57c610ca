//! A small deterministic decoder-only pre-LN transformer over bytes.
//!
//! Each block is one halting step:
//!
//! ```text
//! h1  = h  + Attn(RmsNorm(h;  ln1)) Wo
//! out = h1 + ReLU(RmsNorm(h1; ln2) W1) W2
//! ```
//!
//! Attention is causal multi-head with a per-layer key/value cache. Inputs are
//! byte embeddings plus fixed sinusoidal positions; logits come from a final
//! RMS norm and an untied output projection.
//!
//! Synthetic weights are drawn from [`SeededRng`] seeded with `config.seed`,
//! in this order: `embed`; then for each layer `wq`, `wk`, `wv`, `wo`, `w1`,
//! `w2`; then `lm_head`. Every matrix is row-major `[fan_in, fan_out]` and
//! uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`; `embed` is uniform in
//! `[-1, 1)`. All RMS-norm gains start at one and consume no draws.

use std::collections::BTreeSet;

use crate::error::{LacError, Result};
use crate::executor::{run_stack, ExecutionOutcome, LayerStack};
use crate::halting::HaltPolicy;
use crate::rng::SeededRng;
use crate::tensor::{layer_norm_pre, matmul, Tensor, NORM_EPS};
use crate::trace::{Phase, TraceRecord};

/// Byte that ends generation (ASCII end-of-text). It is never emitted.
pub const END_OF_TEXT: u32 = 0x03;

pub const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub layer_count: usize,
    pub depth: usize,
    pub head_count: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Byte vocabulary, `ffn_dim = 4 * depth`, `max_seq = 512`, seed 0.
    pub fn new(depth: usize, head_count: usize, layer_count: usize) -> Self {
        Self {
            layer_count,
            depth,
            head_count,
            ffn_dim: 4 * depth,
            vocab_size: BYTE_VOCAB,
            max_seq: 512,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Parses the compact form `d<depth>,h<heads>,l<layers>[,f<ffn>][,c<max_seq>][,s<seed>]`.
    pub fn parse_compact(s: &str) -> Result<Self> {
        let (mut d, mut h, mut l) = (None, None, None);
        let mut cfg = ModelConfig::new(0, 0, 0);
        let mut ffn = None;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_at(1);
            let n: u64 = value
                .parse()
                .map_err(|_| LacError::Config(format!("bad model field {part:?}")))?;
            match key {
                "d" => d = Some(n as usize),
                "h" => h = Some(n as usize),
                "l" => l = Some(n as usize),
                "f" => ffn = Some(n as usize),
                "c" => cfg.max_seq = n as usize,
                "s" => cfg.seed = n,
                _ => return Err(LacError::Config(format!("unknown model field {part:?}"))),
            }
        }
        match (d, h, l) {
            (Some(d), Some(h), Some(l)) => {
                cfg.depth = d;
                cfg.head_count = h;
                cfg.layer_count = l;
                cfg.ffn_dim = ffn.unwrap_or(4 * d);
                cfg.validate()?;
                Ok(cfg)
            }
            _ => Err(LacError::Config(format!(
                "model spec {s:?} needs d<depth>, h<heads> and l<layers>"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layer_count", self.layer_count),
            ("depth", self.depth),
            ("head_count", self.head_count),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(LacError::Config(format!("{name} must be positive")));
        }
        if !self.depth.is_multiple_of(self.head_count) {
            return Err(LacError::Config(format!(
                "depth {} is not divisible by head_count {}",
                self.depth, self.head_count
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.depth / self.head_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embed: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub final_ln: Tensor,
    pub lm_head: Tensor,
}

fn fan_in_uniform(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f32).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Deterministic synthetic weights for `config`.
pub fn build_model(config: ModelConfig) -> Result<Model> {
    config.validate()?;
    let (d, f, v) = (config.depth, config.ffn_dim, config.vocab_size);
    let mut rng = SeededRng::new(config.seed);
    let embed_data = (0..v * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let embed = Tensor::new(vec![v, d], embed_data)?;
    let mut blocks = Vec::with_capacity(config.layer_count);
    for _ in 0..config.layer_count {
        let wq = fan_in_uniform(&mut rng, d, d);
        let wk = fan_in_uniform(&mut rng, d, d);
        let wv = fan_in_uniform(&mut rng, d, d);
        let wo = fan_in_uniform(&mut rng, d, d);
        let w1 = fan_in_uniform(&mut rng, d, f);
        let w2 = fan_in_uniform(&mut rng, f, d);
        blocks.push(BlockWeights {
            ln1: Tensor::ones(&[d]),
            wq,
            wk,
            wv,
            wo,
            ln2: Tensor::ones(&[d]),
            w1,
            w2,
        });
    }
    let lm_head = fan_in_uniform(&mut rng, d, v);
    Ok(Model {
        config,
        embed,
        blocks,
        final_ln: Tensor::ones(&[d]),
        lm_head,
    })
}

/// Fixed sinusoidal position code: `sin(p / 10000^(2i/D))` at even index `2i`,
/// `cos` of the same angle at `2i + 1`, computed in `f64`.
pub fn position_code(pos: usize, depth: usize) -> Vec<f32> {
    (0..depth)
        .map(|k| {
            let i = (k / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / depth as f64);
            if k % 2 == 0 {
                angle.sin() as f32
            } else {
                angle.cos() as f32
            }
        })
        .collect()
}

/// Per-layer key/value cache. `keys[layer][example]` holds `[position, depth]` rows.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<Vec<f32>>>,
    values: Vec<Vec<Vec<f32>>>,
    depth: usize,
    capacity: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig, batch: usize) -> Self {
        Self {
            keys: vec![vec![Vec::new(); batch]; config.layer_count],
            values: vec![vec![Vec::new(); batch]; config.layer_count],
            depth: config.depth,
            capacity: config.max_seq,
        }
    }

    /// Cached positions for `layer`.
    pub fn len(&self, layer: usize) -> usize {
        self.keys[layer]
            .first()
            .map_or(0, |k| k.len() / self.depth.max(1))
    }

    pub fn is_empty(&self) -> bool {
        (0..self.keys.len()).all(|l| self.len(l) == 0)
    }

    pub fn batch(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }
}

impl Model {
    pub fn layer_count(&self) -> usize {
        self.blocks.len()
    }

    /// Embedding plus position code for `tokens[example][i]` at positions `start_pos + i`.
    pub fn embed(&self, tokens: &[Vec<u32>], start_pos: usize) -> Result<Tensor> {
        let b = tokens.len();
        let l = tokens.first().map_or(0, Vec::len);
        let d = self.config.depth;
        if tokens.iter().any(|t| t.len() != l) {
            return Err(LacError::Shape("ragged token batch".into()));
        }
        if start_pos + l > self.config.max_seq {
            return Err(LacError::SequenceOverflow {
                needed: start_pos + l,
                max: self.config.max_seq,
            });
        }
        let mut data = Vec::with_capacity(b * l * d);
        for row in tokens {
            for (i, &tok) in row.iter().enumerate() {
                let tok = tok as usize;
                if tok >= self.config.vocab_size {
                    return Err(LacError::IndexOutOfRange {
                        index: tok,
                        extent: self.config.vocab_size,
                    });
                }
                let pe = position_code(start_pos + i, d);
                let e = &self.embed.data()[tok * d..(tok + 1) * d];
                data.extend(e.iter().zip(&pe).map(|(a, p)| a + p));
            }
        }
        Tensor::new(vec![b, l, d], data)
    }

    /// One transformer block over `h` at positions `start_pos..`, appending to the cache.
    pub fn block_forward(
        &self,
        layer: usize,
        h: &Tensor,
        cache: &mut KvCache,
        start_pos: usize,
    ) -> Result<Tensor> {
        let (b, l, d) = h.dims3()?;
        let w = &self.blocks[layer];
        if d != self.config.depth {
            return Err(LacError::Shape(format!(
                "hidden depth {d} but model depth {}",
                self.config.depth
            )));
        }
        if cache.batch() != b {
            return Err(LacError::Shape(format!(
                "cache holds {} examples, hidden state has {b}",
                cache.batch()
            )));
        }
        if cache.len(layer) != start_pos {
            return Err(LacError::Invalid(format!(
                "layer {} cache holds {} positions, expected {start_pos}",
                layer + 1,
                cache.len(layer)
            )));
        }
        if start_pos + l > cache.capacity {
            return Err(LacError::SequenceOverflow {
                needed: start_pos + l,
                max: cache.capacity,
            });
        }

        let x = layer_norm_pre(h, &w.ln1, NORM_EPS)?.reshape(vec![b * l, d])?;
        let q = matmul(&x, &w.wq)?;
        let k = matmul(&x, &w.wk)?;
        let v = matmul(&x, &w.wv)?;
        for e in 0..b {
            cache.keys[layer][e].extend_from_slice(&k.data()[e * l * d..(e + 1) * l * d]);
            cache.values[layer][e].extend_from_slice(&v.data()[e * l * d..(e + 1) * l * d]);
        }

        let heads = self.config.head_count;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let mut attn = vec![0f32; b * l * d];
        let mut scores = Vec::new();
        for e in 0..b {
            let keys = &cache.keys[layer][e];
            let values = &cache.values[layer][e];
            for i in 0..l {
                let visible = start_pos + i + 1;
                let qrow = &q.data()[(e * l + i) * d..(e * l + i + 1) * d];
                let out = &mut attn[(e * l + i) * d..(e * l + i + 1) * d];
                for head in 0..heads {
                    let hs = head * hd..(head + 1) * hd;
                    scores.clear();
                    scores.extend((0..visible).map(|p| {
                        let krow = &keys[p * d..(p + 1) * d];
                        qrow[hs.clone()]
                            .iter()
                            .zip(&krow[hs.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f32>()
                            * scale
                    }));
                    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let mut total = 0f32;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    for (p, s) in scores.iter().enumerate() {
                        let weight = s / total;
                        let vrow = &values[p * d..(p + 1) * d];
                        for (o, &vv) in out[hs.clone()].iter_mut().zip(&vrow[hs.clone()]) {
                            *o += weight * vv;
                        }
                    }
                }
            }
        }
        let attn = Tensor::new(vec![b * l, d], attn)?;
        let attn_out = matmul(&attn, &w.wo)?.reshape(vec![b, l, d])?;
        let h1 = h.add(&attn_out)?;

        let x2 = layer_norm_pre(&h1, &w.ln2, NORM_EPS)?.reshape(vec![b * l, d])?;
        let mut hidden = matmul(&x2, &w.w1)?;
        hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let ffn = matmul(&hidden, &w.w2)?.reshape(vec![b, l, d])?;
        h1.add(&ffn)
    }

    /// Logits `[batch, length, vocab]` from final hidden states.
    pub fn logits(&self, h: &Tensor) -> Result<Tensor> {
        let (b, l, d) = h.dims3()?;
        let x = layer_norm_pre(h, &self.final_ln, NORM_EPS)?.reshape(vec![b * l, d])?;
        matmul(&x, &self.lm_head)?.reshape(vec![b, l, self.config.vocab_size])
    }

    /// Binds the blocks to a cache so the executor can drive them.
    pub fn stack<'a>(&'a self, cache: &'a mut KvCache, start_pos: usize) -> ModelStack<'a> {
        ModelStack {
            model: self,
            cache,
            start_pos,
        }
    }

    /// Forward over a batch of equal-length sequences from an empty cache.
    pub fn forward(
        &self,
        tokens: &[Vec<u32>],
        policy: &HaltPolicy,
    ) -> Result<(Tensor, ExecutionOutcome)> {
        let h0 = self.embed(tokens, 0)?;
        let mut cache = KvCache::new(&self.config, tokens.len());
        let outcome = run_stack(&mut self.stack(&mut cache, 0), &h0, policy)?;
        let logits = self.logits(&outcome.final_hidden)?;
        Ok((logits, outcome))
    }

    /// The same model with the zero-based layers in `removed` dropped.
    pub fn without_layers(&self, removed: &BTreeSet<usize>) -> Model {
        let blocks: Vec<BlockWeights> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, b)| b.clone())
            .collect();
        let mut config = self.config;
        config.layer_count = blocks.len();
        Model {
            config,
            embed: self.embed.clone(),
            blocks,
            final_ln: self.final_ln.clone(),
            lm_head: self.lm_head.clone(),
        }
    }
}

/// A [`Model`]'s blocks bound to a cache and a start position.
pub struct ModelStack<'a> {
    model: &'a Model,
    cache: &'a mut KvCache,
    start_pos: usize,
}

impl LayerStack for ModelStack<'_> {
    fn layer_count(&self) -> usize {
        self.model.layer_count()
    }

    fn apply_layer(&mut self, index: usize, h: &Tensor) -> Result<Tensor> {
        self.model
            .block_forward(index, h, self.cache, self.start_pos)
    }
}

pub fn encode_bytes(text: &[u8]) -> Vec<u32> {
    text.iter().map(|&b| b as u32).collect()
}

pub fn decode_bytes(ids: &[u32]) -> Vec<u8> {
    ids.iter().map(|&i| i as u8).collect()
}

/// Decoding state for one sequence.
#[derive(Debug, Clone)]
pub struct GenerationState {
    pub sequence_id: String,
    pub tokens: Vec<u32>,
    pub phases: Vec<Phase>,
    pub cache: KvCache,
    pub position: usize,
    /// Logits of the most recently processed token.
    pub last_logits: Vec<f32>,
}

fn records_for(
    state_id: &str,
    outcome: &ExecutionOutcome,
    tokens: &[u32],
    start_pos: usize,
    phase: Phase,
    policy: &HaltPolicy,
) -> Vec<TraceRecord> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| TraceRecord {
            sequence_id: state_id.to_string(),
            token_index: start_pos + i,
            phase,
            token_id: tok,
            layer_flags: outcome.token_flags(0, i),
            layer_norms: outcome.token_norms(0, i),
            layer_deltas: outcome.token_deltas(0, i),
            alpha: policy.alpha,
            formula: policy.formula,
            skip_mode: policy.skip_mode,
        })
        .collect()
}

/// Prompt processing: one full-grid forward over the prompt, one PP record per token.
pub fn run_prompt(
    model: &Model,
    sequence_id: &str,
    prompt: &[u32],
    policy: &HaltPolicy,
) -> Result<(GenerationState, Vec<TraceRecord>)> {
    if prompt.is_empty() {
        return Err(LacError::Invalid("prompt is empty".into()));
    }
    if prompt.len() > model.config.max_seq {
        return Err(LacError::SequenceOverflow {
            needed: prompt.len(),
            max: model.config.max_seq,
        });
    }
    let tokens = vec![prompt.to_vec()];
    let h0 = model.embed(&tokens, 0)?;
    let mut cache = KvCache::new(&model.config, 1);
    let outcome = run_stack(&mut model.stack(&mut cache, 0), &h0, policy)?;
    let logits = model.logits(&outcome.final_hidden)?;
    let v = model.config.vocab_size;
    let last = logits.data()[(prompt.len() - 1) * v..prompt.len() * v].to_vec();
    let records = records_for(sequence_id, &outcome, prompt, 0, Phase::Pp, policy);
    let state = GenerationState {
        sequence_id: sequence_id.to_string(),
        tokens: prompt.to_vec(),
        phases: vec![Phase::Pp; prompt.len()],
        cache,
        position: prompt.len(),
        last_logits: last,
    };
    Ok((state, records))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding. Each emitted token is fed back through the stack and gets
/// one RG record. Stops after `max_new` tokens or at [`END_OF_TEXT`].
pub fn generate(
    state: &mut GenerationState,
    model: &Model,
    policy: &HaltPolicy,
    max_new: usize,
) -> Result<(Vec<u32>, Vec<TraceRecord>)> {
    let mut emitted = Vec::new();
    let mut records = Vec::new();
    for _ in 0..max_new {
        let next = argmax(&state.last_logits);
        if next == END_OF_TEXT {
            break;
        }
        if state.position >= model.config.max_seq {
            return Err(LacError::SequenceOverflow {
                needed: state.position + 1,
                max: model.config.max_seq,
            });
        }
        let pos = state.position;
        let h0 = model.embed(&[vec![next]], pos)?;
        let outcome = run_stack(&mut model.stack(&mut state.cache, pos), &h0, policy)?;
        state.last_logits = model.logits(&outcome.final_hidden)?.into_data();
        records.extend(records_for(
            &state.sequence_id,
            &outcome,
            &[next],
            pos,
            Phase::Rg,
            policy,
        ));
        state.tokens.push(next);
        state.phases.push(Phase::Rg);
        state.position += 1;
        emitted.push(next);
    }
    Ok((emitted, records))
}
