//! Filter-height-1 convolution over concept rows, max pooling, dropout and
//! a two-unit linear head.
//!
//! For an instance `X` (concepts x D) and filters `W` (F x D):
//!
//! ```text
//! score[i][f] = <X[i], W[f]>                      (no conv bias)
//! pooled[f]   = max_i ReLU(score[i][f]) = ReLU(max_i score[i][f])
//! logits      = fc_weights * (mask .* pooled) + fc_bias
//! ```
//!
//! Each concept row is scored on its own, so permuting rows does not change
//! the pooled features. The pooling argmax is the lowest row index among
//! tied maxima, and the filter gradient flows into that row only.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;

use crate::data::Outcome;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{self, Stream};

/// Filters used in every experiment configuration.
pub const DEFAULT_FILTERS: usize = 100;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const NUM_CLASSES: usize = 2;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub conv: usize,
    pub fc: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.conv + self.fc
    }
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    conv_filters: Matrix,
    fc_weights: Matrix,
    fc_bias: [f64; 2],
    dropout_rate: f64,
    init_seed: u64,
    // Changes on every parameter write; a forward cache remembers it.
    stamp: u64,
}

impl PartialEq for CnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.conv_filters == other.conv_filters
            && self.fc_weights == other.fc_weights
            && self.fc_bias == other.fc_bias
            && self.dropout_rate == other.dropout_rate
            && self.init_seed == other.init_seed
    }
}

fn check_dropout(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::ModelConfig(format!("dropout rate must be in [0, 1), got {rate}")))
    }
}

impl CnnModel {
    /// Glorot-uniform weights: conv in `±sqrt(6 / (D + F))`, head in
    /// `±sqrt(6 / (F + 2))`, drawn from ChaCha8 stream [`Stream::Init`] in
    /// row-major order (conv first). Head biases start at zero.
    pub fn init(num_filters: usize, dimension: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if num_filters == 0 || dimension == 0 {
            return Err(Error::ModelConfig(format!(
                "sizes must be positive (filters {num_filters}, dimension {dimension})"
            )));
        }
        check_dropout(dropout_rate)?;
        let mut rng = rng::seeded(seed, Stream::Init);
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| (2.0 * rng::unit(&mut rng) - 1.0) * bound).collect()
        };
        let conv_bound = (6.0 / (dimension + num_filters) as f64).sqrt();
        let fc_bound = (6.0 / (num_filters + NUM_CLASSES) as f64).sqrt();
        let conv = Matrix::from_vec(num_filters, dimension, uniform(num_filters * dimension, conv_bound));
        let fc = Matrix::from_vec(NUM_CLASSES, num_filters, uniform(NUM_CLASSES * num_filters, fc_bound));
        Ok(CnnModel {
            conv_filters: conv,
            fc_weights: fc,
            fc_bias: [0.0; 2],
            dropout_rate,
            init_seed: seed,
            stamp: next_stamp(),
        })
    }

    pub fn from_parts(
        conv_filters: Matrix,
        fc_weights: Matrix,
        fc_bias: [f64; 2],
        dropout_rate: f64,
        init_seed: u64,
    ) -> Result<Self> {
        let (f, d) = conv_filters.shape();
        if f == 0 || d == 0 {
            return Err(Error::ModelConfig("conv_filters must be non-empty".into()));
        }
        if fc_weights.shape() != (NUM_CLASSES, f) {
            return Err(Error::ModelConfig(format!(
                "fc_weights must be {NUM_CLASSES}x{f}, got {}x{}",
                fc_weights.rows(),
                fc_weights.cols()
            )));
        }
        check_dropout(dropout_rate)?;
        if !conv_filters.all_finite() {
            return Err(Error::NonFinite("conv_filters".into()));
        }
        if !fc_weights.all_finite() || !fc_bias.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("fully connected layer".into()));
        }
        Ok(CnnModel { conv_filters, fc_weights, fc_bias, dropout_rate, init_seed, stamp: next_stamp() })
    }

    pub fn num_filters(&self) -> usize {
        self.conv_filters.rows()
    }

    pub fn dimension(&self) -> usize {
        self.conv_filters.cols()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Changes whenever a parameter is borrowed mutably; clones keep it.
    pub fn revision(&self) -> u64 {
        self.stamp
    }

    pub fn conv_filters(&self) -> &Matrix {
        &self.conv_filters
    }

    pub fn fc_weights(&self) -> &Matrix {
        &self.fc_weights
    }

    pub fn fc_bias(&self) -> [f64; 2] {
        self.fc_bias
    }

    pub fn conv_filters_mut(&mut self) -> &mut Matrix {
        self.stamp = next_stamp();
        &mut self.conv_filters
    }

    pub fn fc_weights_mut(&mut self) -> &mut Matrix {
        self.stamp = next_stamp();
        &mut self.fc_weights
    }

    pub fn fc_bias_mut(&mut self) -> &mut [f64; 2] {
        self.stamp = next_stamp();
        &mut self.fc_bias
    }

    pub fn param_count(&self) -> ParamCount {
        param_count(self.num_filters(), self.dimension())
    }

    pub fn all_finite(&self) -> bool {
        self.conv_filters.all_finite()
            && self.fc_weights.all_finite()
            && self.fc_bias.iter().all(|x| x.is_finite())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), found: x.cols() });
        }
        if x.rows() == 0 {
            return Err(Error::EmptyInstance);
        }
        Ok(())
    }

    /// Inference pass; dropout is the identity.
    pub fn forward_eval(&self, x: &Matrix) -> Result<([f64; 2], ForwardCache)> {
        self.forward_scaled(x, None)
    }

    /// Training pass: each pooled feature is dropped with probability
    /// `dropout_rate` (one `rng::unit` draw per feature, in filter order)
    /// and survivors are scaled by `1 / (1 - dropout_rate)`.
    pub fn forward_train(&self, x: &Matrix, rng: &mut impl RngCore) -> Result<([f64; 2], ForwardCache)> {
        let keep: Vec<bool> = (0..self.num_filters())
            .map(|_| rng::unit(rng) >= self.dropout_rate)
            .collect();
        self.forward_with_mask(x, &keep)
    }

    /// Training pass with a caller-fixed dropout mask.
    pub fn forward_with_mask(&self, x: &Matrix, keep: &[bool]) -> Result<([f64; 2], ForwardCache)> {
        if keep.len() != self.num_filters() {
            return Err(Error::DimensionMismatch { expected: self.num_filters(), found: keep.len() });
        }
        let scale = 1.0 / (1.0 - self.dropout_rate);
        let mask = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        self.forward_scaled(x, Some(mask))
    }

    fn forward_scaled(&self, x: &Matrix, mask: Option<Vec<f64>>) -> Result<([f64; 2], ForwardCache)> {
        self.check_input(x)?;
        let pool = conv_maxpool(x, &self.conv_filters)?;
        let dropped: Vec<f64> = match &mask {
            Some(m) => pool.pooled.iter().zip(m).map(|(p, s)| p * s).collect(),
            None => pool.pooled.clone(),
        };
        let mut logits = self.fc_bias;
        for (k, logit) in logits.iter_mut().enumerate() {
            *logit += dot(self.fc_weights.row(k), &dropped);
        }
        let mut argmax_rows = Matrix::zeros(self.num_filters(), self.dimension());
        for (f, &i) in pool.argmax.iter().enumerate() {
            argmax_rows.row_mut(f).copy_from_slice(x.row(i));
        }
        let cache = ForwardCache {
            scores: pool.scores,
            active: pool.max_scores.iter().map(|&s| s > 0.0).collect(),
            argmax: pool.argmax,
            argmax_rows,
            dropout_mask: mask,
            pooled: pool.pooled,
            dropped,
            logits,
            stamp: self.stamp,
        };
        Ok((logits, cache))
    }

    pub fn logits(&self, x: &Matrix) -> Result<[f64; 2]> {
        Ok(self.forward_eval(x)?.0)
    }

    /// Positive-class probability, `softmax(logits)[1]`, in eval mode.
    pub fn predict_proba(&self, x: &Matrix) -> Result<f64> {
        Ok(softmax(self.logits(x)?)[1])
    }

    /// Exact gradients of `weight * CE(softmax(logits), label)`.
    pub fn backward(&self, cache: &ForwardCache, label: Outcome, weight: f64) -> Result<Gradients> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache);
        }
        let probs = softmax(cache.logits);
        let mut dlogits = probs;
        dlogits[label.index()] -= 1.0;
        for d in &mut dlogits {
            *d *= weight;
        }

        let f_count = self.num_filters();
        let mut grads = Gradients::zeros(f_count, self.dimension());
        grads.fc_bias = dlogits;
        for (k, dl) in dlogits.iter().enumerate() {
            for (g, x) in grads.fc_weights.row_mut(k).iter_mut().zip(&cache.dropped) {
                *g = dl * x;
            }
        }
        for f in 0..f_count {
            if !cache.active[f] {
                continue;
            }
            let mut dpooled = dlogits[0] * self.fc_weights.get(0, f) + dlogits[1] * self.fc_weights.get(1, f);
            if let Some(mask) = &cache.dropout_mask {
                dpooled *= mask[f];
            }
            if dpooled == 0.0 {
                continue;
            }
            for (g, x) in grads.conv_filters.row_mut(f).iter_mut().zip(cache.argmax_rows.row(f)) {
                *g = dpooled * x;
            }
        }
        Ok(grads)
    }
}

pub fn param_count(num_filters: usize, dimension: usize) -> ParamCount {
    ParamCount { conv: num_filters * dimension, fc: NUM_CLASSES * num_filters + NUM_CLASSES }
}

/// Intermediate values of one forward pass, enough for exact gradients.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Pre-activation conv outputs, concepts x filters.
    pub scores: Matrix,
    /// ReLU state of each filter's winning row.
    pub active: Vec<bool>,
    pub argmax: Vec<usize>,
    argmax_rows: Matrix,
    /// Per-filter multiplier (`0` or `1 / (1 - p)`); `None` in eval mode.
    pub dropout_mask: Option<Vec<f64>>,
    pub pooled: Vec<f64>,
    dropped: Vec<f64>,
    pub logits: [f64; 2],
    stamp: u64,
}

impl ForwardCache {
    /// Cross-entropy of this pass against `label`.
    pub fn loss(&self, label: Outcome) -> f64 {
        sample_loss(self.logits, label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooling {
    /// Pre-activation scores, rows x filters.
    pub scores: Matrix,
    pub max_scores: Vec<f64>,
    pub argmax: Vec<usize>,
    /// `ReLU(max_scores)`.
    pub pooled: Vec<f64>,
}

/// Scores every row against every filter and max-pools over rows.
pub fn conv_maxpool(x: &Matrix, filters: &Matrix) -> Result<Pooling> {
    if x.cols() != filters.cols() {
        return Err(Error::DimensionMismatch { expected: filters.cols(), found: x.cols() });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInstance);
    }
    let f_count = filters.rows();
    let mut scores = Matrix::zeros(x.rows(), f_count);
    let mut max_scores = vec![f64::NEG_INFINITY; f_count];
    let mut argmax = vec![0usize; f_count];
    for (i, row) in x.iter_rows().enumerate() {
        let out = scores.row_mut(i);
        for (f, filter) in filters.iter_rows().enumerate() {
            let s = dot(row, filter);
            out[f] = s;
            if s > max_scores[f] {
                max_scores[f] = s;
                argmax[f] = i;
            }
        }
    }
    let pooled = max_scores.iter().map(|&s| s.max(0.0)).collect();
    Ok(Pooling { scores, max_scores, argmax, pooled })
}

pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// `-log softmax(logits)[label]`, computed with log-sum-exp.
pub fn sample_loss(logits: [f64; 2], label: Outcome) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label.index()]
}

/// Mean cross-entropy over a batch.
pub fn cross_entropy_loss(logits: &[[f64; 2]], labels: &[Outcome]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyDataset("loss batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch { scores: logits.len(), labels: labels.len() });
    }
    let total: f64 = logits.iter().zip(labels).map(|(&l, &y)| sample_loss(l, y)).sum();
    Ok(total / logits.len() as f64)
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv_filters: Matrix,
    pub fc_weights: Matrix,
    pub fc_bias: [f64; 2],
}

impl Gradients {
    pub fn zeros(num_filters: usize, dimension: usize) -> Self {
        Gradients {
            conv_filters: Matrix::zeros(num_filters, dimension),
            fc_weights: Matrix::zeros(NUM_CLASSES, num_filters),
            fc_bias: [0.0; 2],
        }
    }

    pub fn for_model(model: &CnnModel) -> Self {
        Gradients::zeros(model.num_filters(), model.dimension())
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.conv_filters.as_mut_slice().iter_mut().zip(other.conv_filters.as_slice()) {
            *a += b * scale;
        }
        for (a, b) in self.fc_weights.as_mut_slice().iter_mut().zip(other.fc_weights.as_slice()) {
            *a += b * scale;
        }
        for (a, b) in self.fc_bias.iter_mut().zip(other.fc_bias) {
            *a += b * scale;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.conv_filters.all_finite() && self.fc_weights.all_finite() && self.fc_bias.iter().all(|x| x.is_finite())
    }
}
