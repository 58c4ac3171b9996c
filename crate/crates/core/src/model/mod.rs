//! Bidirectional transformer encoder with a tied masked-LM head.
//!
//! Layout is post-norm (BERT): learned token and position embeddings, an
//! embedding layer norm, then `layers` blocks of self-attention and a GELU
//! feed-forward, each followed by residual add and layer norm. Output logits
//! are `hidden · word_embeddingᵀ + head.bias`. Weights are stored `[in, out]`.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointHeader, OptimizerState, CHECKPOINT_VERSION};

use crate::numeric::{Graph, NumericError, Real, Tensor, Var};
use crate::seed;
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds max_seq {max}; truncate the context before calling the model")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("empty input sequence")]
    Empty,
    #[error("checkpoint vocabulary {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

pub const PRESETS: [&str; 3] = ["varbert-base", "varbert-small", "varbert-toy"];

impl ModelConfig {
    /// Config with the usual defaults: `ffn_dim = 4·hidden`, dropout 0.1.
    pub fn new(layers: usize, heads: usize, hidden: usize, max_seq: usize, vocab_size: usize) -> Self {
        ModelConfig {
            layers,
            heads,
            hidden,
            ffn_dim: 4 * hidden,
            max_seq,
            vocab_size,
            dropout: 0.1,
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        match name {
            "varbert-base" => Some(Self::new(12, 12, 768, 512, vocab_size)),
            "varbert-small" => Some(Self::new(6, 8, 512, 1024, vocab_size)),
            "varbert-toy" => Some(Self::new(2, 2, 64, 256, vocab_size)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ffn_dim == 0 {
            return bad("layers, heads, hidden and ffn_dim must be positive");
        }
        if self.hidden % self.heads != 0 {
            return bad("hidden must be divisible by heads");
        }
        if self.max_seq < 2 {
            return bad("max_seq must leave room for BOS and EOS");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Closed-form parameter count.
pub fn param_count(c: &ModelConfig) -> usize {
    let (h, f, m) = (c.hidden, c.ffn_dim, c.vocab_size);
    let embeddings = m * h + c.max_seq * h;
    let attention = 4 * h * h + 4 * h;
    let feed_forward = 2 * h * f + f + h;
    let norms = 4 * h;
    embeddings + c.layers * (attention + feed_forward + norms) + 2 * h + m
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape, initialiser and whether weight decay applies.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
    init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        decay: init == Init::Normal,
        name,
        shape: shape.to_vec(),
        init,
    }
}

pub fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let (h, f, m) = (c.hidden, c.ffn_dim, c.vocab_size);
    let mut v = vec![
        spec("embeddings.word".into(), &[m, h], Init::Normal),
        spec("embeddings.position".into(), &[c.max_seq, h], Init::Normal),
        spec("embeddings.ln.gamma".into(), &[h], Init::Ones),
        spec("embeddings.ln.beta".into(), &[h], Init::Zeros),
    ];
    for l in 0..c.layers {
        for proj in ["q", "k", "v", "out"] {
            v.push(spec(format!("layer.{l}.attn.{proj}.weight"), &[h, h], Init::Normal));
            v.push(spec(format!("layer.{l}.attn.{proj}.bias"), &[h], Init::Zeros));
        }
        v.push(spec(format!("layer.{l}.attn_ln.gamma"), &[h], Init::Ones));
        v.push(spec(format!("layer.{l}.attn_ln.beta"), &[h], Init::Zeros));
        v.push(spec(format!("layer.{l}.ffn.in.weight"), &[h, f], Init::Normal));
        v.push(spec(format!("layer.{l}.ffn.in.bias"), &[f], Init::Zeros));
        v.push(spec(format!("layer.{l}.ffn.out.weight"), &[f, h], Init::Normal));
        v.push(spec(format!("layer.{l}.ffn.out.bias"), &[h], Init::Zeros));
        v.push(spec(format!("layer.{l}.ffn_ln.gamma"), &[h], Init::Ones));
        v.push(spec(format!("layer.{l}.ffn_ln.beta"), &[h], Init::Zeros));
    }
    v.push(spec("head.bias".into(), &[m], Init::Zeros));
    v
}

const INIT_STD: f64 = 0.02;
const PER_LAYER: usize = 16;
const WORD: usize = 0;
const POSITION: usize = 1;

/// Parameter indices of one block, in `param_specs` order.
struct Block {
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    out: (usize, usize),
    attn_ln: (usize, usize),
    ffn_in: (usize, usize),
    ffn_out: (usize, usize),
    ffn_ln: (usize, usize),
}

fn block(l: usize) -> Block {
    let b = 4 + l * PER_LAYER;
    Block {
        q: (b, b + 1),
        k: (b + 2, b + 3),
        v: (b + 4, b + 5),
        out: (b + 6, b + 7),
        attn_ln: (b + 8, b + 9),
        ffn_in: (b + 10, b + 11),
        ffn_out: (b + 12, b + 13),
        ffn_ln: (b + 14, b + 15),
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Model<T> {
    /// Fresh weights: N(0, 0.02) for matrices and embeddings, zero biases,
    /// unit layer-norm gains.
    pub fn new(config: ModelConfig, seed_: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = param_specs(&config);
        let mut rng = seed::rng(seed_, &[seed::stream::INIT]);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, T::one()),
                Init::Normal => {
                    let n = s.shape.iter().product();
                    Tensor::from_vec(&s.shape, (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect())
                }
            })
            .collect();
        Ok(Model { config, specs, params })
    }

    /// Assemble from named tensors; every name and shape must match the config.
    pub fn from_named(config: ModelConfig, mut named: HashMap<String, Tensor<T>>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = param_specs(&config);
        let mut params = Vec::with_capacity(specs.len());
        for s in &specs {
            let t = named
                .remove(&s.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} has shape {:?}, config implies {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            params.push(t);
        }
        if let Some(extra) = named.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Model { config, specs, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<(), ModelError> {
        let mut c = self.config.clone();
        c.dropout = p;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Number of scalars actually allocated.
    pub fn allocated(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            specs: self.specs.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn check_input(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Empty);
        }
        if ids.len() > self.config.max_seq {
            return Err(ModelError::TooLong {
                len: ids.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::IdOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Final hidden states `[n, H]`. `pad_mask[i] == false` marks padding,
    /// which no position attends to. Dropout is active iff `rng` is given.
    pub fn encode<'g>(
        &self,
        g: &mut Graph<'g, T>,
        ids: &[u32],
        pad_mask: Option<&[bool]>,
        mut rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<Var, ModelError> {
        self.check_input(ids)?;
        let n = ids.len();
        let all = vec![true; n];
        let key_mask = match pad_mask {
            Some(m) if m.len() == n => m,
            Some(_) => return Err(ModelError::Config("pad mask length differs from input".into())),
            None => &all,
        };
        let p = self.config.dropout;
        let word = g.param(WORD);
        let pos = g.param(POSITION);
        let tok = g.embedding(word, ids);
        let positions: Vec<u32> = (0..n as u32).collect();
        let pe = g.embedding(pos, &positions);
        let x = g.add(tok, pe);
        let (lg, lb) = (g.param(2), g.param(3));
        let x = g.layer_norm(x, lg, lb);
        let mut x = g.dropout(x, p, rng.as_deref_mut());
        for l in 0..self.config.layers {
            let b = block(l);
            let q = linear(g, x, b.q);
            let k = linear(g, x, b.k);
            let v = linear(g, x, b.v);
            let a = g.attention(q, k, v, self.config.heads, key_mask, p, rng.as_deref_mut());
            let o = linear(g, a, b.out);
            let o = g.dropout(o, p, rng.as_deref_mut());
            let r = g.add(x, o);
            x = norm(g, r, b.attn_ln);
            let h = linear(g, x, b.ffn_in);
            let h = g.gelu(h);
            let f = linear(g, h, b.ffn_out);
            let f = g.dropout(f, p, rng.as_deref_mut());
            let r = g.add(x, f);
            x = norm(g, r, b.ffn_ln);
        }
        Ok(x)
    }

    /// Vocabulary logits `[rows.len(), M]` for the selected positions.
    pub fn head(&self, g: &mut Graph<'_, T>, hidden: Var, rows: &[usize]) -> Var {
        let h = g.gather_rows(hidden, rows);
        let word = g.param(WORD);
        let logits = g.matmul_bt(h, word);
        let bias = g.param(self.params.len() - 1);
        g.add_bias(logits, bias)
    }

    /// Masked-LM loss: mean cross-entropy over `targets` (position, id),
    /// or the sum divided by `normalizer` when given.
    pub fn loss<'g>(
        &self,
        g: &mut Graph<'g, T>,
        ids: &[u32],
        targets: &[(usize, u32)],
        normalizer: Option<f64>,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<Var, ModelError> {
        if targets.is_empty() {
            return Err(NumericError::NoTargets.into());
        }
        let hidden = self.encode(g, ids, None, rng)?;
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        if let Some(&r) = rows.iter().find(|&&r| r >= ids.len()) {
            return Err(ModelError::Config(format!("target position {r} beyond sequence")));
        }
        let logits = self.head(g, hidden, &rows);
        let local: Vec<(usize, u32)> = targets.iter().enumerate().map(|(i, t)| (i, t.1)).collect();
        Ok(g.cross_entropy(logits, &local, normalizer)?)
    }

    /// Evaluation-mode logits at `rows` (all positions if `None`).
    pub fn logits(&self, ids: &[u32], pad_mask: Option<&[bool]>, rows: Option<&[usize]>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new(&self.params);
        let hidden = self.encode(&mut g, ids, pad_mask, None)?;
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..ids.len()).collect();
                &all
            }
        };
        let out = self.head(&mut g, hidden, rows);
        Ok(g.value(out).clone())
    }
}

fn linear<T: Real>(g: &mut Graph<'_, T>, x: Var, (w, b): (usize, usize)) -> Var {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.matmul(x, w);
    g.add_bias(y, b)
}

fn norm<T: Real>(g: &mut Graph<'_, T>, x: Var, (gamma, beta): (usize, usize)) -> Var {
    let gamma = g.param(gamma);
    let beta = g.param(beta);
    g.layer_norm(x, gamma, beta)
}
