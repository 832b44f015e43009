//! Mini-batch training with per-layer freezing and validation-based
//! checkpoint selection.
//!
//! Batch gradients are summed in batch order on a single thread and divided
//! by the batch size, so a run is a pure function of its inputs and seed.
//! The shuffle order and the dropout masks come from two separate ChaCha8
//! streams of `TrainConfig::seed`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::embedding::EncodedInstance;
use crate::error::{Error, Result};
use crate::evaluation::{auroc, score_instances};
use crate::network::{cross_entropy_loss, CnnModel, Gradients};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Conv,
    Fc,
}

/// Parameter groups excluded from updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct FreezeMask {
    pub conv: bool,
    pub fc: bool,
}

impl FreezeMask {
    pub const NONE: FreezeMask = FreezeMask { conv: false, fc: false };
    pub const CONV: FreezeMask = FreezeMask { conv: true, fc: false };
    pub const ALL: FreezeMask = FreezeMask { conv: true, fc: true };

    pub fn is_full(self) -> bool {
        self.conv && self.fc
    }

    /// Parses `"conv,fc"`-style lists; the empty string freezes nothing.
    pub fn parse(text: &str) -> Result<Self> {
        let mut mask = FreezeMask::NONE;
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "conv" => mask.conv = true,
                "fc" | "linear" => mask.fc = true,
                other => return Err(Error::TrainConfig(format!("unknown layer {other:?} in freeze list"))),
            }
        }
        Ok(mask)
    }
}

impl From<Vec<Layer>> for FreezeMask {
    fn from(layers: Vec<Layer>) -> Self {
        FreezeMask { conv: layers.contains(&Layer::Conv), fc: layers.contains(&Layer::Fc) }
    }
}

impl From<FreezeMask> for Vec<Layer> {
    fn from(mask: FreezeMask) -> Self {
        let mut v = Vec::new();
        if mask.conv {
            v.push(Layer::Conv);
        }
        if mask.fc {
            v.push(Layer::Fc);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BestValidationAuroc,
    FinalEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub freeze: FreezeMask,
    pub optimizer: OptimizerConfig,
    pub selection: Selection,
    /// Loss weight of positive examples; 1.0 means unweighted.
    pub positive_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            freeze: FreezeMask::NONE,
            optimizer: OptimizerConfig::default(),
            selection: Selection::BestValidationAuroc,
            positive_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::TrainConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.positive_weight > 0.0 && self.positive_weight.is_finite()) {
            return bad(format!("positive_weight must be positive, got {}", self.positive_weight));
        }
        let o = &self.optimizer;
        if o.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0)
        {
            return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments { m: vec![0.0; n], v: vec![0.0; n], steps: 0 }
    }
}

/// Optimizer state, kept per parameter group. A group that is frozen never
/// allocates state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    learning_rate: f64,
    conv: Option<Moments>,
    fc_weights: Option<Moments>,
    fc_bias: Option<Moments>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, learning_rate: f64) -> Self {
        Optimizer { config, learning_rate, conv: None, fc_weights: None, fc_bias: None }
    }

    pub fn has_state_for(&self, layer: Layer) -> bool {
        match layer {
            Layer::Conv => self.conv.is_some(),
            Layer::Fc => self.fc_weights.is_some() || self.fc_bias.is_some(),
        }
    }

    pub fn steps(&self, layer: Layer) -> u64 {
        let m = match layer {
            Layer::Conv => &self.conv,
            Layer::Fc => &self.fc_weights,
        };
        m.as_ref().map_or(0, |m| m.steps)
    }

    /// One step on every group not in `freeze`.
    pub fn apply_update(&mut self, model: &mut CnnModel, grads: &Gradients, freeze: FreezeMask) -> Result<()> {
        if grads.conv_filters.shape() != model.conv_filters().shape() {
            return Err(Error::GradientShape("conv_filters"));
        }
        if grads.fc_weights.shape() != model.fc_weights().shape() {
            return Err(Error::GradientShape("fc_weights"));
        }
        if !freeze.conv {
            let n = grads.conv_filters.len();
            let state = self.conv.get_or_insert_with(|| Moments::new(n));
            step(self.config, self.learning_rate, state, model.conv_filters_mut().as_mut_slice(), grads.conv_filters.as_slice());
        }
        if !freeze.fc {
            let n = grads.fc_weights.len();
            let state = self.fc_weights.get_or_insert_with(|| Moments::new(n));
            step(self.config, self.learning_rate, state, model.fc_weights_mut().as_mut_slice(), grads.fc_weights.as_slice());
            let state = self.fc_bias.get_or_insert_with(|| Moments::new(2));
            step(self.config, self.learning_rate, state, model.fc_bias_mut(), &grads.fc_bias);
        }
        Ok(())
    }
}

fn step(cfg: OptimizerConfig, lr: f64, state: &mut Moments, params: &mut [f64], grads: &[f64]) {
    state.steps += 1;
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            let t = state.steps as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 for the input model, 1-based afterwards.
    pub epoch: usize,
    /// Mean training-mode minibatch loss over the epoch; for epoch 0 the
    /// eval-mode loss of the input model on the training set.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial: EpochMetrics,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were returned; `None` when nothing was trained.
    pub selected_epoch: Option<usize>,
    pub selection: Selection,
    /// Validation AUROC was undefined, so selection used validation loss.
    pub selection_fallback: bool,
}

impl TrainHistory {
    pub fn selected(&self) -> &EpochMetrics {
        match self.selected_epoch {
            Some(e) => &self.epochs[e - 1],
            None => &self.initial,
        }
    }
}

fn evaluate_split(model: &CnnModel, set: &[EncodedInstance]) -> Result<(f64, Option<f64>)> {
    let logits: Vec<[f64; 2]> = set.iter().map(|x| model.logits(&x.matrix)).collect::<Result<_>>()?;
    let labels: Vec<_> = set.iter().map(|x| x.outcome).collect();
    let loss = cross_entropy_loss(&logits, &labels)?;
    let scores = score_instances(model, set)?;
    let auc = match auroc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok((loss, auc))
}

fn check_dims(model: &CnnModel, set: &[EncodedInstance]) -> Result<()> {
    for x in set {
        if x.matrix.cols() != model.dimension() {
            return Err(Error::DimensionMismatch { expected: model.dimension(), found: x.matrix.cols() });
        }
        if x.matrix.rows() == 0 {
            return Err(Error::EmptyInstance);
        }
    }
    Ok(())
}

/// Trains a copy of `model`; the input is never modified.
///
/// With every layer frozen this only evaluates and returns the input model.
pub fn train(
    model: &CnnModel,
    train_set: &[EncodedInstance],
    val_set: &[EncodedInstance],
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation set"));
    }
    check_dims(model, train_set)?;
    check_dims(model, val_set)?;

    let (initial_train_loss, _) = evaluate_split(model, train_set)?;
    let (initial_val_loss, initial_val_auc) = evaluate_split(model, val_set)?;
    let mut history = TrainHistory {
        initial: EpochMetrics {
            epoch: 0,
            train_loss: initial_train_loss,
            validation_loss: initial_val_loss,
            validation_auroc: initial_val_auc,
        },
        epochs: Vec::with_capacity(cfg.epochs),
        selected_epoch: None,
        selection: cfg.selection,
        selection_fallback: false,
    };
    if cfg.freeze.is_full() {
        return Ok((model.clone(), history));
    }
    if initial_val_auc.is_none() && cfg.selection == Selection::BestValidationAuroc {
        warn!("validation set has a single class: AUROC is undefined, selecting the epoch with the lowest validation loss");
        history.selection_fallback = true;
    }

    let mut current = model.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut shuffle_rng = rng::seeded(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = rng::seeded(cfg.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(CnnModel, f64)> = None;

    for epoch in 1..=cfg.epochs {
        rng::shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::for_model(&current);
            for &i in batch {
                let x = &train_set[i];
                let weight = if x.outcome.is_positive() { cfg.positive_weight } else { 1.0 };
                let (_, cache) = current.forward_train(&x.matrix, &mut dropout_rng)?;
                loss_sum += weight * cache.loss(x.outcome);
                grads.add_scaled(&current.backward(&cache, x.outcome, weight)?, 1.0);
            }
            let mut mean = Gradients::for_model(&current);
            mean.add_scaled(&grads, 1.0 / batch.len() as f64);
            if !mean.all_finite() {
                return Err(Error::NonFinite(format!("gradients in epoch {epoch}")));
            }
            optimizer.apply_update(&mut current, &mean, cfg.freeze)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() || !current.all_finite() {
            return Err(Error::NonFinite(format!("training diverged in epoch {epoch}")));
        }
        let (validation_loss, validation_auroc) = evaluate_split(&current, val_set)?;
        history.epochs.push(EpochMetrics { epoch, train_loss, validation_loss, validation_auroc });

        let criterion = match (cfg.selection, validation_auroc) {
            (Selection::FinalEpoch, _) => None,
            (Selection::BestValidationAuroc, Some(a)) if !history.selection_fallback => Some(a),
            _ => Some(-validation_loss),
        };
        if let Some(c) = criterion {
            if best.as_ref().is_none_or(|(_, b)| c > *b) {
                best = Some((current.clone(), c));
                history.selected_epoch = Some(epoch);
            }
        }
    }

    let selected = match best {
        Some((m, _)) => m,
        None => {
            history.selected_epoch = Some(cfg.epochs);
            current
        }
    };
    Ok((selected, history))
}
