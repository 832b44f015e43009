//! Portable checkpoints and cross-site adaptation.
//!
//! A checkpoint is a single-line JSON document:
//!
//! | field            | meaning                                                    |
//! |------------------|------------------------------------------------------------|
//! | `format`         | always `"concept-cnn-checkpoint"`                          |
//! | `format_version` | schema version, currently `1`                              |
//! | `source_tag`     | embedding family the model was trained with                |
//! | `dimension`      | embedding dimension D                                      |
//! | `num_filters`    | number of filters F                                        |
//! | `dropout_rate`   | dropout applied to pooled features during training        |
//! | `init_seed`      | seed of the original weight initialization                 |
//! | `conv_filters`   | F arrays of D numbers                                      |
//! | `fc_weights`     | 2 arrays of F numbers (row 0 negative, row 1 positive)     |
//! | `fc_bias`        | 2 numbers                                                  |
//! | `provenance`     | site, data window, seed, strategy and training config echo |
//!
//! All parameters are written with 17 significant digits, so
//! save -> load -> save reproduces the file byte for byte.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, EncodedInstance};
use crate::error::{Error, Result};
use crate::evaluation::Scenario;
use crate::matrix::Matrix;
use crate::network::CnnModel;
use crate::numfmt::{sci_vec, Sci};
use crate::training::{train, FreezeMask, TrainConfig, TrainHistory};

pub const FORMAT_NAME: &str = "concept-cnn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferStrategy {
    DirectShare,
    TuneLinear,
    TuneConvAndLinear,
}

impl TransferStrategy {
    pub const ALL: [TransferStrategy; 3] =
        [TransferStrategy::DirectShare, TransferStrategy::TuneLinear, TransferStrategy::TuneConvAndLinear];

    pub fn freeze_mask(self) -> FreezeMask {
        match self {
            TransferStrategy::DirectShare => FreezeMask::ALL,
            TransferStrategy::TuneLinear => FreezeMask::CONV,
            TransferStrategy::TuneConvAndLinear => FreezeMask::NONE,
        }
    }

    pub fn scenario(self) -> Scenario {
        match self {
            TransferStrategy::DirectShare => Scenario::Direct,
            TransferStrategy::TuneLinear => Scenario::TuneLinear,
            TransferStrategy::TuneConvAndLinear => Scenario::TuneFull,
        }
    }

    /// Accepts the CLI names `direct`, `linear`, `full` and the snake_case
    /// variant names.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "direct" | "direct_share" => Ok(TransferStrategy::DirectShare),
            "linear" | "tune_linear" => Ok(TransferStrategy::TuneLinear),
            "full" | "tune_conv_and_linear" => Ok(TransferStrategy::TuneConvAndLinear),
            other => Err(Error::TrainConfig(format!(
                "unknown strategy {other:?} (expected direct, linear or full)"
            ))),
        }
    }
}

/// Where a set of parameters came from. Required in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Site whose data last updated the parameters.
    pub site: String,
    /// Human-readable description of the admission-date window used.
    pub data_window: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<TransferStrategy>,
    /// Provenance of the checkpoint this one was adapted from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Box<Provenance>>,
    pub config: serde_json::Value,
}

impl Provenance {
    fn validate(&self) -> Result<()> {
        if self.site.trim().is_empty() {
            return Err(Error::Checkpoint("provenance.site must not be empty".into()));
        }
        if self.data_window.trim().is_empty() {
            return Err(Error::Checkpoint("provenance.data_window must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub source_tag: String,
    pub model: CnnModel,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format: &'a str,
    format_version: u32,
    source_tag: &'a str,
    dimension: usize,
    num_filters: usize,
    dropout_rate: Sci,
    init_seed: u64,
    conv_filters: Vec<Vec<Sci>>,
    fc_weights: Vec<Vec<Sci>>,
    fc_bias: Vec<Sci>,
    provenance: &'a Provenance,
}

#[derive(Deserialize)]
struct Envelope {
    format: String,
    format_version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    #[allow(dead_code)]
    format: String,
    #[allow(dead_code)]
    format_version: u32,
    source_tag: String,
    dimension: usize,
    num_filters: usize,
    dropout_rate: f64,
    init_seed: u64,
    conv_filters: Vec<Vec<f64>>,
    fc_weights: Vec<Vec<f64>>,
    fc_bias: Vec<f64>,
    provenance: Provenance,
}

fn rows_sci(m: &Matrix) -> Vec<Vec<Sci>> {
    m.iter_rows().map(sci_vec).collect()
}

fn to_matrix(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Matrix> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Checkpoint(format!(
            "{name} must be {}x{} (from num_filters/dimension)",
            shape.0, shape.1
        )));
    }
    Matrix::from_rows(rows).ok_or_else(|| Error::Checkpoint(format!("{name} is ragged")))
}

fn json_error(e: serde_json::Error) -> Error {
    // serde_json reports literals beyond f64 range this way.
    if e.to_string().contains("out of range") {
        Error::NonFinite("checkpoint parameters".into())
    } else {
        Error::Checkpoint(format!("malformed checkpoint: {e}"))
    }
}

impl Checkpoint {
    pub fn new(source_tag: impl Into<String>, model: CnnModel, provenance: Provenance) -> Result<Self> {
        provenance.validate()?;
        Ok(Checkpoint { source_tag: source_tag.into(), model, provenance })
    }

    pub fn to_text(&self) -> Result<String> {
        if !self.model.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        self.provenance.validate()?;
        let out = CheckpointOut {
            format: FORMAT_NAME,
            format_version: FORMAT_VERSION,
            source_tag: &self.source_tag,
            dimension: self.model.dimension(),
            num_filters: self.model.num_filters(),
            dropout_rate: Sci(self.model.dropout_rate()),
            init_seed: self.model.init_seed(),
            conv_filters: rows_sci(self.model.conv_filters()),
            fc_weights: rows_sci(self.model.fc_weights()),
            fc_bias: sci_vec(&self.model.fc_bias()),
            provenance: &self.provenance,
        };
        let mut text = serde_json::to_string(&out)?;
        text.push('\n');
        Ok(text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let envelope: Envelope = serde_json::from_str(text).map_err(json_error)?;
        if envelope.format != FORMAT_NAME {
            return Err(Error::Checkpoint(format!("not a checkpoint (format {:?})", envelope.format)));
        }
        if envelope.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion { found: envelope.format_version, supported: FORMAT_VERSION });
        }
        let raw: CheckpointIn = serde_json::from_str(text).map_err(json_error)?;
        raw.provenance.validate()?;
        let (f, d) = (raw.num_filters, raw.dimension);
        let conv = to_matrix("conv_filters", &raw.conv_filters, (f, d))?;
        let fc = to_matrix("fc_weights", &raw.fc_weights, (2, f))?;
        let bias: [f64; 2] = raw
            .fc_bias
            .as_slice()
            .try_into()
            .map_err(|_| Error::Checkpoint("fc_bias must have 2 entries".into()))?;
        let model = CnnModel::from_parts(conv, fc, bias, raw.dropout_rate, raw.init_seed).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(what),
            other => Error::Checkpoint(other.to_string()),
        })?;
        Ok(Checkpoint { source_tag: raw.source_tag, model, provenance: raw.provenance })
    }

    /// Fails when `table` is not the embedding family the model was trained on.
    pub fn check_table(&self, table: &EmbeddingTable) -> Result<()> {
        if table.dimension() != self.model.dimension() {
            return Err(Error::DimensionMismatch { expected: self.model.dimension(), found: table.dimension() });
        }
        if table.source_tag() != self.source_tag {
            return Err(Error::FamilyMismatch {
                checkpoint: self.source_tag.clone(),
                table: table.source_tag().to_string(),
            });
        }
        Ok(())
    }
}

/// Adapts a source-site checkpoint to target data.
///
/// Direct sharing returns the checkpoint's model untouched and needs no
/// target data (`None` history). The tuning strategies start a fresh
/// optimizer from the loaded parameters; `cfg.freeze` is replaced by the
/// strategy's mask.
pub fn run_transfer(
    source: &Checkpoint,
    strategy: TransferStrategy,
    table: &EmbeddingTable,
    target_train: &[EncodedInstance],
    target_val: &[EncodedInstance],
    cfg: &TrainConfig,
) -> Result<(CnnModel, Option<TrainHistory>)> {
    source.check_table(table)?;
    if strategy == TransferStrategy::DirectShare {
        return Ok((source.model.clone(), None));
    }
    let cfg = TrainConfig { freeze: strategy.freeze_mask(), ..cfg.clone() };
    let (model, history) = train(&source.model, target_train, target_val, &cfg)?;
    Ok((model, Some(history)))
}
