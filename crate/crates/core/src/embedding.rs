//! Embedding tables and instance encoding.
//!
//! File format, one JSON object per line (UTF-8):
//!
//! ```text
//! {"dimension":2,"source_tag":"one-hot"}
//! {"concept":"cough","label":"P","vector":[1.0000000000000000e0,0.0000000000000000e0]}
//! {"concept":"cough","label":"A","vector":[0.0000000000000000e0,1.0000000000000000e0]}
//! ```
//!
//! The first line is the header; each later line is one `(concept, label)`
//! vector. Numbers are written with 17 significant digits so a table
//! survives load/save unchanged. Vectors are used as given: no
//! normalization is applied on load.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{EncounterRecord, Outcome};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numfmt::{sci_vec, Sci};
use crate::vocab::Vocabulary;

pub const ONE_HOT_TAG: &str = "one-hot";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    source_tag: String,
    vectors: IndexMap<(String, String), Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dimension: usize,
    source_tag: String,
}

#[derive(Deserialize)]
struct RowIn {
    concept: String,
    label: String,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct RowOut<'a> {
    concept: &'a str,
    label: &'a str,
    vector: Vec<Sci>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize, source_tag: impl Into<String>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::EmbeddingFormat { line: 0, message: "dimension must be positive".into() });
        }
        Ok(EmbeddingTable { dimension, source_tag: source_tag.into(), vectors: IndexMap::new() })
    }

    /// Adds one vector; rejects wrong lengths, duplicates and non-finite values.
    pub fn insert(&mut self, concept: &str, label: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: vector.len() });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding ({concept}, {label})")));
        }
        let key = (concept.to_string(), label.to_string());
        if self.vectors.contains_key(&key) {
            return Err(Error::EmbeddingFormat {
                line: 0,
                message: format!("duplicate key ({concept}, {label})"),
            });
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    /// One unit vector per (concept, label); the hot index follows
    /// vocabulary order, then label order.
    pub fn one_hot(vocab: &Vocabulary) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Vocabulary("vocabulary has no concepts".into()));
        }
        let dimension = vocab.one_hot_dimension();
        let mut table = EmbeddingTable::new(dimension, ONE_HOT_TAG)?;
        for (hot, (concept, label)) in vocab.pairs().enumerate() {
            let mut v = vec![0.0; dimension];
            v[hot] = 1.0;
            table.insert(concept, label, v)?;
        }
        Ok(table)
    }

    pub fn parse(content: &str) -> Result<Self> {
        let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) = lines
            .next()
            .ok_or_else(|| Error::EmbeddingFormat { line: 1, message: "missing header".into() })?;
        let header: Header = serde_json::from_str(header_line).map_err(|e| Error::EmbeddingFormat {
            line: 1,
            message: format!("malformed header: {e}"),
        })?;
        let mut table = EmbeddingTable::new(header.dimension, header.source_tag)?;
        for (i, line) in lines {
            let line_no = i + 1;
            let row: RowIn = serde_json::from_str(line).map_err(|e| {
                if mentions_non_finite(line) {
                    Error::NonFinite(format!("embedding table line {line_no}"))
                } else {
                    Error::EmbeddingFormat { line: line_no, message: e.to_string() }
                }
            })?;
            table.insert(&row.concept, &row.label, row.vector).map_err(|e| match e {
                Error::DimensionMismatch { .. } | Error::EmbeddingFormat { .. } => Error::EmbeddingFormat {
                    line: line_no,
                    message: match e {
                        Error::EmbeddingFormat { message, .. } => message,
                        other => other.to_string(),
                    },
                },
                other => other,
            })?;
        }
        if table.is_empty() {
            return Err(Error::EmbeddingFormat { line: 1, message: "table has no vectors".into() });
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let header = Header { dimension: self.dimension, source_tag: self.source_tag.clone() };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for ((concept, label), v) in &self.vectors {
            let row = RowOut { concept, label, vector: sci_vec(v) };
            out.push_str(&serde_json::to_string(&row).expect("finite vectors serialize"));
            out.push('\n');
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, concept: &str, label: &str) -> Option<&[f64]> {
        self.vectors
            .get(&(concept.to_string(), label.to_string()))
            .map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[f64])> {
        self.vectors
            .iter()
            .map(|((c, l), v)| (c.as_str(), l.as_str(), v.as_slice()))
    }

    /// Checks that every pair of `vocab` has a vector.
    pub fn check_covers(&self, vocab: &Vocabulary) -> Result<()> {
        for (concept, label) in vocab.pairs() {
            if self.get(concept, label).is_none() {
                return Err(Error::MissingEmbedding { concept: concept.into(), label: label.into() });
            }
        }
        Ok(())
    }
}

/// True when the `vector` array of a row that failed to parse holds a
/// NaN/Infinity literal or a number too large for `f64`.
fn mentions_non_finite(line: &str) -> bool {
    let Some(start) = line.find("\"vector\"") else {
        return false;
    };
    let rest = &line[start + 8..];
    let array = &rest[..rest.find(']').unwrap_or(rest.len())];
    let lower = array.to_ascii_lowercase();
    if lower.contains("nan") || lower.contains("inf") {
        return true;
    }
    array
        .split(|c: char| c == ',' || c == '[' || c == ':' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .any(|t| t.parse::<f64>().is_ok_and(|x| !x.is_finite()))
}

/// CNN input: one embedding row per vocabulary concept.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub matrix: Matrix,
    pub outcome: Outcome,
}

pub fn encode_instance(
    record: &EncounterRecord,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> Result<EncodedInstance> {
    let mut matrix = Matrix::zeros(vocab.len(), table.dimension());
    for (i, entry) in vocab.entries().iter().enumerate() {
        let label = record.label(&entry.id).ok_or_else(|| Error::MissingValue {
            row: 0,
            concept: entry.id.clone(),
        })?;
        let v = table.get(&entry.id, label).ok_or_else(|| Error::MissingEmbedding {
            concept: entry.id.clone(),
            label: label.to_string(),
        })?;
        matrix.row_mut(i).copy_from_slice(v);
    }
    Ok(EncodedInstance { matrix, outcome: record.outcome })
}

pub fn encode_all(
    records: &[EncounterRecord],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> Result<Vec<EncodedInstance>> {
    records.iter().map(|r| encode_instance(r, vocab, table)).collect()
}
