//! Encounter records, CSV ingestion and dataset splits.
//!
//! Encounter CSV layout: a header row `encounter_id,admit_date,outcome`
//! followed by one column per vocabulary concept, in any order. Dates are
//! `YYYYMMDD`, outcomes `0`/`1`. A concept column that is absent, or a cell
//! that is empty, takes the concept's default label.

use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;
use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::vocab::Vocabulary;

pub const DATE_FORMAT: &str = "%Y%m%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Negative = 0,
    Positive = 1,
}

impl Outcome {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_positive(self) -> bool {
        self == Outcome::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Negative => Outcome::Positive,
            Outcome::Positive => Outcome::Negative,
        }
    }
}

impl From<bool> for Outcome {
    fn from(positive: bool) -> Self {
        if positive {
            Outcome::Positive
        } else {
            Outcome::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncounterRecord {
    pub encounter_id: String,
    pub admit_date: NaiveDate,
    pub outcome: Outcome,
    /// Concept id to label, in vocabulary order, one entry per concept.
    pub assignments: IndexMap<String, String>,
}

impl EncounterRecord {
    /// Validates `values` against `vocab` and fills defaults for concepts
    /// not mentioned. `row` is only used in error messages.
    pub fn build(
        encounter_id: impl Into<String>,
        admit_date: NaiveDate,
        outcome: Outcome,
        values: &HashMap<String, String>,
        vocab: &Vocabulary,
        row: usize,
    ) -> Result<Self> {
        for concept in values.keys() {
            if !vocab.contains(concept) {
                return Err(Error::UnknownColumn(concept.clone()));
            }
        }
        let mut assignments = IndexMap::with_capacity(vocab.len());
        for entry in vocab.entries() {
            let label = match values.get(&entry.id).map(|v| v.trim()).filter(|v| !v.is_empty()) {
                Some(v) => {
                    if entry.label_index(v).is_none() {
                        return Err(Error::UnknownLabel {
                            row,
                            concept: entry.id.clone(),
                            label: v.to_string(),
                        });
                    }
                    v.to_string()
                }
                None => entry
                    .default_label()
                    .ok_or_else(|| Error::MissingValue { row, concept: entry.id.clone() })?
                    .to_string(),
            };
            assignments.insert(entry.id.clone(), label);
        }
        Ok(EncounterRecord {
            encounter_id: encounter_id.into(),
            admit_date,
            outcome,
            assignments,
        })
    }

    pub fn label(&self, concept: &str) -> Option<&str> {
        self.assignments.get(concept).map(String::as_str)
    }
}

pub fn parse_date(value: &str, row: usize) -> Result<NaiveDate> {
    let value = value.trim();
    if value.len() != 8 || !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::MalformedDate { row, value: value.to_string() });
    }
    NaiveDate::parse_from_str(value, DATE_FORMAT)
        .map_err(|_| Error::MalformedDate { row, value: value.to_string() })
}

pub fn format_date(date: NaiveDate) -> String {
    date.format(DATE_FORMAT).to_string()
}

/// Parses an encounter CSV. Row numbers in errors are 1-based data rows.
pub fn parse_encounters(csv_content: &str, vocab: &Vocabulary) -> Result<Vec<EncounterRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(csv_content.as_bytes());
    let headers = reader.headers()?.clone();

    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = column("encounter_id")?;
    let date_col = column("admit_date")?;
    let outcome_col = column("outcome")?;

    let mut concept_cols = Vec::new();
    let mut seen_headers = HashSet::new();
    for (i, h) in headers.iter().enumerate() {
        if !seen_headers.insert(h) {
            return Err(Error::Vocabulary(format!("column {h:?} appears twice in the header")));
        }
        if i == id_col || i == date_col || i == outcome_col {
            continue;
        }
        if !vocab.contains(h) {
            return Err(Error::UnknownColumn(h.to_string()));
        }
        concept_cols.push((i, h.to_string()));
    }

    let mut seen_ids = HashSet::new();
    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row_no = n + 1;
        let row = row?;
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        if !seen_ids.insert(id.clone()) {
            return Err(Error::DuplicateEncounter(id));
        }
        let date = parse_date(row.get(date_col).unwrap_or(""), row_no)?;
        let outcome = match row.get(outcome_col).unwrap_or("").trim() {
            "0" => Outcome::Negative,
            "1" => Outcome::Positive,
            other => return Err(Error::MalformedOutcome { row: row_no, value: other.to_string() }),
        };
        let values: HashMap<String, String> = concept_cols
            .iter()
            .map(|(i, c)| (c.clone(), row.get(*i).unwrap_or("").to_string()))
            .collect();
        records.push(EncounterRecord::build(id, date, outcome, &values, vocab, row_no)?);
    }
    Ok(records)
}

/// Writes records with concept columns in vocabulary order.
pub fn write_encounters(records: &[EncounterRecord], vocab: &Vocabulary) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["encounter_id", "admit_date", "outcome"];
    header.extend(vocab.entries().iter().map(|e| e.id.as_str()));
    writer.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.encounter_id.clone(),
            format_date(r.admit_date),
            r.outcome.index().to_string(),
        ];
        for e in vocab.entries() {
            row.push(r.label(&e.id).unwrap_or_default().to_string());
        }
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Split(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Half-open split: records dated strictly before `cutoff` go to the
/// first list, the cutoff day itself and later go to the second.
pub fn split_by_date(
    records: &[EncounterRecord],
    cutoff: NaiveDate,
) -> (Vec<EncounterRecord>, Vec<EncounterRecord>) {
    records.iter().cloned().partition(|r| r.admit_date < cutoff)
}

/// Seeded random split into `round(ratio * n)` and the remainder.
///
/// A Fisher-Yates permutation (see [`crate::rng`]) picks the members of the
/// first part; both parts keep the input's relative order.
pub fn random_split<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio must be in (0, 1), got {ratio}")));
    }
    if items.is_empty() {
        return Err(Error::Split("nothing to split".into()));
    }
    let n = items.len();
    let n_first = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut rng::seeded(seed, Stream::Split));
    let mut in_first = vec![false; n];
    for &i in &order[..n_first] {
        in_first[i] = true;
    }
    let mut first = Vec::with_capacity(n_first);
    let mut second = Vec::with_capacity(n - n_first);
    for (item, keep) in items.iter().zip(in_first) {
        if keep {
            first.push(item.clone());
        } else {
            second.push(item.clone());
        }
    }
    Ok((first, second))
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<EncounterRecord>,
    pub validation: Vec<EncounterRecord>,
    pub test: Vec<EncounterRecord>,
    pub split_seed: u64,
    pub date_cutoff: NaiveDate,
}

pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

impl DatasetSplit {
    /// Date split at `cutoff`, then an 8:2 seeded split of the earlier part.
    pub fn new(records: &[EncounterRecord], cutoff: NaiveDate, seed: u64) -> Result<Self> {
        let (pre, test) = split_by_date(records, cutoff);
        let (train, validation) = random_split(&pre, DEFAULT_TRAIN_RATIO, seed)?;
        Ok(DatasetSplit { train, validation, test, split_seed: seed, date_cutoff: cutoff })
    }
}
