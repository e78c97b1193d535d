//! Tokenizers and the two-tower encoder.
//!
//! Each modality has its own tower: token plus position embeddings, then
//! single-head attention blocks with a tanh feed-forward, reading out the
//! hidden state at the `BOS` position. The towers share a learnable
//! temperature and a three-way relation classifier over `[f_m ; f_t]`.

pub mod matrix;
pub mod tape;
pub mod tokenizer;

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::Matrix;
pub use tape::{AnchorSets, Gradients, Tape, Var};
pub use tokenizer::{Modality, Tokenizer, BOS, PAD, UNK};

/// Temperature bounds; `log_inv_temp` is clamped to `[0, ln 100]`.
pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 1.0;
pub const INIT_TEMPERATURE: f64 = 0.07;
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            ffn_dim: 128,
            layers: 1,
            max_len: 256,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence must be non-empty and start with BOS")]
    MissingBos,
    #[error("token id {id} outside vocabulary of {size}")]
    UnknownId { id: usize, size: usize },
    #[error("similarity of a zero vector is undefined")]
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl Layer {
    fn zeros(c: &EncoderConfig) -> Self {
        let (d, h) = (c.dim, c.ffn_dim);
        Layer {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, h),
            b1: Matrix::zeros(1, h),
            w2: Matrix::zeros(h, d),
            b2: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 8] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// One modality's encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub embed: Matrix,
    pub pos_embed: Matrix,
    pub layers: Vec<Layer>,
}

impl Tower {
    fn zeros(c: &EncoderConfig, vocab: usize) -> Self {
        Tower {
            embed: Matrix::zeros(vocab, c.dim),
            pos_embed: Matrix::zeros(c.max_len, c.dim),
            layers: (0..c.layers).map(|_| Layer::zeros(c)).collect(),
        }
    }

    fn tensors<'s>(&'s self, prefix: &str, out: &mut Vec<(String, &'s Matrix)>) {
        out.push((format!("{prefix}.embed"), &self.embed));
        out.push((format!("{prefix}.pos_embed"), &self.pos_embed));
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.tensors().map(|(n, m)| (format!("{prefix}.layer{i}.{n}"), m)));
        }
    }

    fn tensors_mut<'s>(&'s mut self, prefix: &str, out: &mut Vec<(String, &'s mut Matrix)>) {
        out.push((format!("{prefix}.embed"), &mut self.embed));
        out.push((format!("{prefix}.pos_embed"), &mut self.pos_embed));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.tensors_mut().map(|(n, m)| (format!("{prefix}.layer{i}.{n}"), m)));
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn max_len(&self) -> usize {
        self.pos_embed.rows()
    }

    fn check(&self, ids: &[usize]) -> Result<(), EncodeError> {
        if ids.first() != Some(&BOS) {
            return Err(EncodeError::MissingBos);
        }
        if ids.len() > self.max_len() {
            return Err(EncodeError::SequenceTooLong {
                len: ids.len(),
                max: self.max_len(),
            });
        }
        if let Some(&id) = ids.iter().find(|&&i| i >= self.vocab_size()) {
            return Err(EncodeError::UnknownId {
                id,
                size: self.vocab_size(),
            });
        }
        Ok(())
    }

    /// The hidden state at position 0 for `ids`.
    pub fn encode(&self, ids: &[usize]) -> Result<Vec<f64>, EncodeError> {
        self.check(ids)?;
        let mut tape = Tape::new();
        let vars = TowerVars::attach(self, &mut tape);
        let out = vars.encode(&mut tape, ids);
        Ok(tape.value(out).data().to_vec())
    }
}

/// Weights of both towers plus the shared temperature and classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mol: Tower,
    pub text: Tower,
    /// `1 x 1`; the temperature is `exp(-log_inv_temp)` after clamping.
    pub log_inv_temp: Matrix,
    /// `2d x 3`
    pub cls_w: Matrix,
    /// `1 x 3`
    pub cls_b: Matrix,
}

impl Params {
    pub fn zeros(config: &EncoderConfig, mol_vocab: usize, text_vocab: usize) -> Self {
        Params {
            mol: Tower::zeros(config, mol_vocab),
            text: Tower::zeros(config, text_vocab),
            log_inv_temp: Matrix::scalar(0.0),
            cls_w: Matrix::zeros(2 * config.dim, NUM_CLASSES),
            cls_b: Matrix::zeros(1, NUM_CLASSES),
        }
    }

    /// Gaussian weights scaled by fan-in, zero biases, temperature 0.07.
    pub fn init(config: &EncoderConfig, mol_vocab: usize, text_vocab: usize, rng: &mut impl Rng) -> Self {
        let mut p = Params::zeros(config, mol_vocab, text_vocab);
        let d = config.dim as f64;
        for (name, m) in p.tensors_mut() {
            let std = if name.ends_with("pos_embed") {
                0.1 / d.sqrt()
            } else if name.ends_with(".b1") || name.ends_with(".b2") || name == "log_inv_temp" || name == "classifier.b"
            {
                continue;
            } else if name.ends_with("embed") {
                1.0 / d.sqrt()
            } else {
                1.0 / (m.rows() as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            m.data_mut().iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        p.log_inv_temp = Matrix::scalar((1.0 / INIT_TEMPERATURE).ln());
        p
    }

    pub fn dim(&self) -> usize {
        self.mol.embed.cols()
    }

    /// All tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.mol.tensors("mol", &mut out);
        self.text.tensors("text", &mut out);
        out.push(("log_inv_temp".into(), &self.log_inv_temp));
        out.push(("classifier.w".into(), &self.cls_w));
        out.push(("classifier.b".into(), &self.cls_b));
        out
    }

    /// Same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.mol.tensors_mut("mol", &mut out);
        self.text.tensors_mut("text", &mut out);
        out.push(("log_inv_temp".into(), &mut self.log_inv_temp));
        out.push(("classifier.w".into(), &mut self.cls_w));
        out.push(("classifier.b".into(), &mut self.cls_b));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.data().iter().all(|&x| x == 0.0))
    }

    pub fn temperature(&self) -> f64 {
        temperature(self.log_inv_temp.item())
    }

    pub fn tower(&self, modality: Modality) -> &Tower {
        match modality {
            Modality::Molecule => &self.mol,
            Modality::Text => &self.text,
        }
    }

    /// Puts every tensor on `tape` as a borrowed leaf.
    pub fn attach<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        ParamVars {
            mol: TowerVars::attach(&self.mol, tape),
            text: TowerVars::attach(&self.text, tape),
            log_inv_temp: tape.leaf(&self.log_inv_temp),
            cls_w: tape.leaf(&self.cls_w),
            cls_b: tape.leaf(&self.cls_b),
        }
    }
}

pub fn temperature(log_inv_temp: f64) -> f64 {
    (-log_inv_temp).exp().clamp(MIN_TEMPERATURE, MAX_TEMPERATURE)
}

#[derive(Debug, Clone)]
struct LayerVars {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

#[derive(Debug, Clone)]
pub struct TowerVars {
    embed: Var,
    pos_embed: Var,
    layers: Vec<LayerVars>,
}

impl TowerVars {
    fn attach<'a>(t: &'a Tower, tape: &mut Tape<'a>) -> Self {
        TowerVars {
            embed: tape.leaf(&t.embed),
            pos_embed: tape.leaf(&t.pos_embed),
            layers: t
                .layers
                .iter()
                .map(|l| LayerVars {
                    wq: tape.leaf(&l.wq),
                    wk: tape.leaf(&l.wk),
                    wv: tape.leaf(&l.wv),
                    wo: tape.leaf(&l.wo),
                    w1: tape.leaf(&l.w1),
                    b1: tape.leaf(&l.b1),
                    w2: tape.leaf(&l.w2),
                    b2: tape.leaf(&l.b2),
                })
                .collect(),
        }
    }

    fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.embed);
        out.push(self.pos_embed);
        for l in &self.layers {
            out.extend([l.wq, l.wk, l.wv, l.wo, l.w1, l.b1, l.w2, l.b2]);
        }
    }

    /// Records the forward pass for one checked sequence; returns a `1 x d` node.
    pub fn encode(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Var {
        let tokens = tape.gather_rows(self.embed, ids.to_vec());
        let positions = tape.slice_rows(self.pos_embed, 0, ids.len());
        let mut x = tape.add(tokens, positions);
        let depth = self.layers.len();
        if depth == 0 {
            return tape.slice_rows(x, 0, 1);
        }
        for (i, l) in self.layers.iter().enumerate() {
            x = block(tape, l, x, i + 1 == depth);
        }
        x
    }
}

/// Attention plus feed-forward, both residual. With `first_only` only the
/// row at position 0 is computed.
fn block(tape: &mut Tape<'_>, l: &LayerVars, x: Var, first_only: bool) -> Var {
    let d = tape.value(x).cols() as f64;
    let query_in = if first_only { tape.slice_rows(x, 0, 1) } else { x };
    let q = tape.matmul(query_in, l.wq);
    let k = tape.matmul(x, l.wk);
    let v = tape.matmul(x, l.wv);
    let scores = tape.matmul_t(q, k);
    let scores = tape.scale(scores, 1.0 / d.sqrt());
    let attn = tape.softmax_rows(scores);
    let ctx = tape.matmul(attn, v);
    let ctx = tape.matmul(ctx, l.wo);
    let h = tape.add(query_in, ctx);
    let f = tape.matmul(h, l.w1);
    let f = tape.add_row(f, l.b1);
    let f = tape.tanh(f);
    let f = tape.matmul(f, l.w2);
    let f = tape.add_row(f, l.b2);
    tape.add(h, f)
}

/// Tape handles for every tensor of [`Params`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub mol: TowerVars,
    pub text: TowerVars,
    pub log_inv_temp: Var,
    pub cls_w: Var,
    pub cls_b: Var,
}

impl ParamVars {
    /// Handles in the order of [`Params::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.mol.vars(&mut out);
        self.text.vars(&mut out);
        out.extend([self.log_inv_temp, self.cls_w, self.cls_b]);
        out
    }

    pub fn tower(&self, modality: Modality) -> &TowerVars {
        match modality {
            Modality::Molecule => &self.mol,
            Modality::Text => &self.text,
        }
    }

    /// Gradients for every tensor, zero where a tensor did not reach the root.
    pub fn gradients(&self, tape: &Tape<'_>, grads: &mut Gradients) -> Vec<Matrix> {
        self.all()
            .into_iter()
            .map(|v| {
                grads.take(v).unwrap_or_else(|| {
                    let (r, c) = tape.value(v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EncodeError> {
    let (nu, nv) = (matrix::norm(u), matrix::norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EncodeError::ZeroVector);
    }
    Ok((matrix::dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `exp(cos(u, v) / temperature)`
pub fn similarity(params: &Params, u: &[f64], v: &[f64]) -> Result<f64, EncodeError> {
    Ok((cosine(u, v)? / params.temperature()).exp())
}

/// Tokenizers plus weights: everything needed to embed raw strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub mol_tokenizer: Tokenizer,
    pub text_tokenizer: Tokenizer,
    pub params: Params,
}

impl Model {
    pub fn new(config: EncoderConfig, mol_tokenizer: Tokenizer, text_tokenizer: Tokenizer, rng: &mut impl Rng) -> Self {
        let params = Params::init(&config, mol_tokenizer.vocab_size(), text_tokenizer.vocab_size(), rng);
        Model {
            config,
            mol_tokenizer,
            text_tokenizer,
            params,
        }
    }

    pub fn tokenizer(&self, modality: Modality) -> &Tokenizer {
        match modality {
            Modality::Molecule => &self.mol_tokenizer,
            Modality::Text => &self.text_tokenizer,
        }
    }

    pub fn tokenize(&self, modality: Modality, s: &str) -> Vec<usize> {
        self.tokenizer(modality).encode(s, self.config.max_len)
    }

    pub fn embed(&self, modality: Modality, s: &str) -> Vec<f64> {
        self.params
            .tower(modality)
            .encode(&self.tokenize(modality, s))
            .expect("tokenizer output always fits its tower")
    }

    /// Embeds every string; work is spread over the current rayon pool.
    pub fn embed_all(&self, modality: Modality, items: &[&str]) -> Vec<Vec<f64>> {
        items.par_iter().map(|s| self.embed(modality, s)).collect()
    }

    pub fn save(&self, w: impl Write, epochs_trained: usize) -> Result<(), CheckpointError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epochs_trained,
            config: self.config,
            mol_vocab: self.mol_tokenizer.tokens().to_vec(),
            text_vocab: self.text_tokenizer.tokens().to_vec(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer(w, &ckpt)?;
        Ok(())
    }

    /// Returns the model and the number of epochs it was trained for.
    pub fn load(r: impl Read) -> Result<(Model, usize), CheckpointError> {
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ckpt.format));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ckpt.version));
        }
        let mol_tokenizer = Tokenizer::from_tokens(Modality::Molecule, ckpt.mol_vocab);
        let text_tokenizer = Tokenizer::from_tokens(Modality::Text, ckpt.text_vocab);
        let mut params = Params::zeros(&ckpt.config, mol_tokenizer.vocab_size(), text_tokenizer.vocab_size());
        let mut stored = ckpt.tensors.into_iter();
        for (name, m) in params.tensors_mut() {
            let t = stored
                .next()
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if t.name != name {
                return Err(CheckpointError::MissingTensor(name));
            }
            if (t.rows, t.cols) != m.shape() || t.data.len() != t.rows * t.cols {
                return Err(CheckpointError::Shape {
                    name,
                    expected: m.shape(),
                    found: (t.rows, t.cols),
                });
            }
            m.data_mut().copy_from_slice(&t.data);
        }
        if let Some(extra) = stored.next() {
            return Err(CheckpointError::UnexpectedTensor(extra.name));
        }
        let model = Model {
            config: ckpt.config,
            mol_tokenizer,
            text_tokenizer,
            params,
        };
        Ok((model, ckpt.epochs_trained))
    }

    pub fn load_path(path: &Path) -> Result<(Model, usize), CheckpointError> {
        Model::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

const CHECKPOINT_FORMAT: &str = "molalign-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (format {0:?})")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    epochs_trained: usize,
    config: EncoderConfig,
    mol_vocab: Vec<String>,
    text_vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}
