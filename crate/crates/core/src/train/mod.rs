//! Multi-positive contrastive training with relation classification and
//! self-refinement filtering.

pub mod batch;
pub mod objective;
pub mod optim;
pub mod refine;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::augment::AlignmentPair;
use crate::encoder::{EncoderConfig, Modality, Model, Tokenizer};

pub use batch::{assemble, plan_epoch, Batch, Exclusion, Sampling, Tokenized};
pub use objective::{
    check_gradients, classification_loss, contrastive_loss, evaluate, numeric_gradients, Evaluation, GradientCheck,
    LossParts, LossWeights,
};
pub use optim::AdamW;
pub use refine::RefinementState;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no active S pair to build a batch from")]
    EmptyDataset,
    #[error("refinement filtered every pair")]
    AllFiltered,
    #[error("loss became non-finite in epoch {epoch}, batch {batch}")]
    DivergenceDetected { epoch: usize, batch: usize },
}

#[derive(Debug, Error, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub sampling: Sampling,
    /// Filter window in epochs; 0 disables refinement.
    pub window: usize,
    pub cl_weight: f64,
    pub seed: u64,
    pub exclusion: Exclusion,
    pub encoder: EncoderConfig,
    /// Largest vocabulary per modality, reserved tokens included.
    pub max_vocab: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            weight_decay: 0.01,
            epochs: 50,
            sampling: Sampling::default(),
            window: 10,
            cl_weight: 1.0,
            seed: 0,
            exclusion: Exclusion::All,
            encoder: EncoderConfig::default(),
            max_vocab: None,
        }
    }
}

impl TrainConfig {
    /// Reads flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<TrainConfig, ConfigError> {
        let mut c = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line: n + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            c.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(c)
    }

    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" | "B" => self.sampling.batch_origins = num(key, value)?,
            "k_m" => self.sampling.k_m = num(key, value)?,
            "k_t" => self.sampling.k_t = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "cl_weight" => self.cl_weight = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "exclusion" => self.exclusion = value.parse()?,
            "dim" => self.encoder.dim = num(key, value)?,
            "ffn_dim" => self.encoder.ffn_dim = num(key, value)?,
            "layers" => self.encoder.layers = num(key, value)?,
            "max_len" => self.encoder.max_len = num(key, value)?,
            "max_vocab" => self.max_vocab = Some(num(key, value)?),
            other => return Err(format!("unknown key {other:?}")),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("batch_size", self.sampling.batch_origins),
            ("dim", self.encoder.dim),
            ("ffn_dim", self.encoder.ffn_dim),
            ("max_len", self.encoder.max_len),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{k} must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err("lr must be finite and non-negative".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err("weight_decay must be finite and non-negative".into());
        }
        if !self.cl_weight.is_finite() {
            return Err("cl_weight must be finite".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub loss_cl: f64,
    pub n_active: usize,
    pub n_filtered: usize,
    /// Per dataset index: whether the classifier got the pair right at least
    /// once this epoch. Pairs not drawn are absent.
    #[serde(skip)]
    pub outcomes: BTreeMap<usize, bool>,
}

struct Data<'a> {
    pairs: &'a [AlignmentPair],
    mol_ids: &'a [Vec<usize>],
    text_ids: &'a [Vec<usize>],
}

impl Tokenized for Data<'_> {
    fn pair(&self, i: usize) -> &AlignmentPair {
        &self.pairs[i]
    }
    fn mol_ids(&self, i: usize) -> &[usize] {
        &self.mol_ids[i]
    }
    fn text_ids(&self, i: usize) -> &[usize] {
        &self.text_ids[i]
    }
}

/// Owns the model, optimizer, dataset and refinement state of one run.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    pairs: Vec<AlignmentPair>,
    mol_ids: Vec<Vec<usize>>,
    text_ids: Vec<Vec<usize>>,
    optimizer: AdamW,
    refinement: RefinementState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// Builds vocabularies from `pairs` and a freshly initialized model.
    pub fn new(pairs: Vec<AlignmentPair>, config: TrainConfig) -> Trainer {
        let mol_tok = Tokenizer::build(
            Modality::Molecule,
            pairs.iter().map(|p| p.mol.as_str()),
            config.max_vocab,
        );
        let text_tok = Tokenizer::build(Modality::Text, pairs.iter().map(|p| p.text.as_str()), config.max_vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.encoder, mol_tok, text_tok, &mut rng);
        Trainer::assemble(model, pairs, config, rng)
    }

    /// Continues from an existing model; its encoder settings override `config`.
    pub fn with_model(model: Model, pairs: Vec<AlignmentPair>, mut config: TrainConfig) -> Trainer {
        config.encoder = model.config;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Trainer::assemble(model, pairs, config, rng)
    }

    fn assemble(model: Model, pairs: Vec<AlignmentPair>, config: TrainConfig, rng: ChaCha8Rng) -> Trainer {
        let mol_ids = pairs
            .iter()
            .map(|p| model.tokenize(Modality::Molecule, &p.mol))
            .collect();
        let text_ids = pairs.iter().map(|p| model.tokenize(Modality::Text, &p.text)).collect();
        Trainer {
            optimizer: AdamW::new(config.lr, config.weight_decay),
            refinement: RefinementState::new(config.window),
            config,
            model,
            pairs,
            mol_ids,
            text_ids,
            rng,
            epoch: 0,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn pairs(&self) -> &[AlignmentPair] {
        &self.pairs
    }

    pub fn refinement(&self) -> &RefinementState {
        &self.refinement
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Builds a batch from dataset indices with this run's tokenization.
    pub fn batch(&self, selected: &[usize]) -> Batch {
        assemble(&self.data(), selected, self.config.exclusion)
    }

    fn data(&self) -> Data<'_> {
        Data {
            pairs: &self.pairs,
            mol_ids: &self.mol_ids,
            text_ids: &self.text_ids,
        }
    }

    /// One pass over the active pairs followed by refinement bookkeeping.
    ///
    /// On divergence the parameters are left as they were before the
    /// offending batch.
    pub fn train_epoch(&mut self) -> Result<EpochReport, TrainError> {
        let epoch = self.epoch + 1;
        let plan = plan_epoch(&self.pairs, self.config.sampling, &mut self.rng)?;
        let weights = LossWeights::total(self.config.cl_weight);
        let (mut loss, mut loss_cl) = (0.0, 0.0);
        let mut outcomes: BTreeMap<usize, bool> = BTreeMap::new();
        for (b, selected) in plan.iter().enumerate() {
            let batch = self.batch(selected);
            let eval = evaluate(&self.model.params, &batch, weights);
            if !eval.loss.total.is_finite() || eval.gradients.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::DivergenceDetected { epoch, batch: b + 1 });
            }
            self.optimizer.step(&mut self.model.params, &eval.gradients);
            loss += eval.loss.total;
            loss_cl += eval.loss.classification;
            for (p, ok) in batch.pairs.iter().zip(&eval.correct) {
                *outcomes.entry(p.pair).or_insert(false) |= ok;
            }
        }
        self.epoch = epoch;
        let missed: Vec<&str> = outcomes
            .iter()
            .filter(|(_, &ok)| !ok)
            .map(|(&i, _)| self.pairs[i].pair_id.as_str())
            .collect();
        self.refinement.record(epoch, missed);
        let newly = self.refinement.refine(&mut self.pairs)?;
        if !newly.is_empty() {
            log::info!("epoch {epoch}: filtered {} pairs", newly.len());
        }
        let batches = plan.len().max(1) as f64;
        Ok(EpochReport {
            epoch,
            loss: loss / batches,
            loss_cl: loss_cl / batches,
            n_active: self.pairs.iter().filter(|p| p.active).count(),
            n_filtered: self.refinement.filtered_ids().len(),
            outcomes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = TrainConfig::parse("# run\nlr = 0.01\nB=4\nk_m = 1 # fewer\nexclusion = same_origin\n").unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.sampling.batch_origins, 4);
        assert_eq!(c.sampling.k_m, 1);
        assert_eq!(c.exclusion, Exclusion::SameOrigin);
        assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
        assert_eq!(TrainConfig::parse("lr 3").unwrap_err().line, 1);
        assert_eq!(TrainConfig::parse("\nspeed = 3").unwrap_err().line, 2);
        assert!(TrainConfig::parse("dim = 0").is_err());
        assert!(TrainConfig::parse("lr = x").is_err());
    }
}
