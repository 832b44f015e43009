//! Synthetic two-site encounter generator.
//!
//! Each encounter draws a latent outcome with the site's prevalence. Binary
//! findings are charted present with a background rate; for positive cases
//! the signal findings instead use `sigmoid(logit(background) + strength)`.
//!
//! Synonym pairs model sites that chart the same finding under different
//! names: the source site only ever charts the first concept of a pair and
//! the target site only the second, the other one staying absent. Shared
//! signals are charted the same way at both sites.
//!
//! Finally every assignment is, with probability `noise_rate`, replaced by
//! a uniformly drawn label of that concept.

use std::collections::{HashMap, HashSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::{EncounterRecord, Outcome};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::vocab::{ConceptEntry, Vocabulary, ABSENT, PRESENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Source,
    Target,
}

impl Site {
    pub fn prefix(self) -> &'static str {
        match self {
            Site::Source => "src",
            Site::Target => "tgt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub prevalence_source: f64,
    pub prevalence_target: f64,
    /// `(source_concept, target_concept)`.
    pub synonym_pairs: Vec<(String, String)>,
    /// Signal findings charted identically at both sites.
    pub shared_signals: Vec<String>,
    pub signal_strength: f64,
    pub noise_rate: f64,
    /// Probability that a non-signal binary finding is charted present.
    pub background_rate: f64,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_source: 2000,
            n_target: 2000,
            prevalence_source: 0.15,
            prevalence_target: 0.15,
            synonym_pairs: vec![
                ("myalgia".into(), "generalized_aches_and_pains".into()),
                ("rhinorrhea".into(), "nasal_congestion".into()),
                ("fatigue".into(), "malaise".into()),
                ("shortness_of_breath".into(), "tachypnea".into()),
            ],
            shared_signals: vec!["cough".into()],
            signal_strength: 2.0,
            noise_rate: 0.05,
            background_rate: 0.1,
            start_date: NaiveDate::from_ymd_opt(2008, 6, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2015, 5, 31).unwrap(),
            seed: 7,
        }
    }
}

fn check_probability(name: &str, p: f64, open: bool) -> Result<()> {
    let ok = if open { p > 0.0 && p < 1.0 } else { (0.0..=1.0).contains(&p) };
    if ok {
        Ok(())
    } else {
        Err(Error::SynthConfig(format!("{name} = {p} is not a valid probability")))
    }
}

impl SynthConfig {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::SynthConfig("site sizes must be at least 1".into()));
        }
        check_probability("prevalence_source", self.prevalence_source, true)?;
        check_probability("prevalence_target", self.prevalence_target, true)?;
        check_probability("noise_rate", self.noise_rate, false)?;
        check_probability("background_rate", self.background_rate, true)?;
        if self.signal_strength.is_nan() || self.signal_strength < 0.0 {
            return Err(Error::SynthConfig("signal_strength must be >= 0".into()));
        }
        if self.end_date < self.start_date {
            return Err(Error::SynthConfig("end_date precedes start_date".into()));
        }
        let mut used = HashSet::new();
        let concepts = self
            .synonym_pairs
            .iter()
            .flat_map(|(a, b)| [a, b])
            .chain(&self.shared_signals);
        for c in concepts {
            match vocab.get(c) {
                Some(e) if e.is_binary() => {}
                Some(_) => return Err(Error::SynthConfig(format!("signal concept {c:?} is not a P/A finding"))),
                None => return Err(Error::SynthConfig(format!("signal concept {c:?} is not in the vocabulary"))),
            }
            if !used.insert(c.as_str()) {
                return Err(Error::SynthConfig(format!("concept {c:?} is used by more than one signal")));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fixed label mix for categorical concepts; falls back to uniform.
fn categorical_weights(entry: &ConceptEntry) -> Vec<f64> {
    match entry.labels.len() {
        4 if entry.id == crate::vocab::TEMPERATURE => vec![0.05, 0.2, 0.45, 0.3],
        3 if entry.id == crate::vocab::AGE_GROUP => vec![0.15, 0.7, 0.15],
        n => vec![1.0 / n as f64; n],
    }
}

fn draw_weighted(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

enum Role {
    Signal,
    Silent,
    Background,
}

/// Generates `(source, target)` encounter lists, deterministic in `cfg.seed`.
pub fn generate_synthetic_sites(
    cfg: &SynthConfig,
    vocab: &Vocabulary,
) -> Result<(Vec<EncounterRecord>, Vec<EncounterRecord>)> {
    cfg.validate(vocab)?;
    let mut rng = rng::seeded(cfg.seed, Stream::Synth);
    let source = generate_site(cfg, vocab, Site::Source, &mut rng);
    let target = generate_site(cfg, vocab, Site::Target, &mut rng);
    Ok((source, target))
}

fn generate_site(
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    site: Site,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<EncounterRecord> {
    let (n, prevalence) = match site {
        Site::Source => (cfg.n_source, cfg.prevalence_source),
        Site::Target => (cfg.n_target, cfg.prevalence_target),
    };
    let mut roles: HashMap<&str, Role> = HashMap::new();
    for c in &cfg.shared_signals {
        roles.insert(c, Role::Signal);
    }
    for (a, b) in &cfg.synonym_pairs {
        let (charted, silent) = match site {
            Site::Source => (a, b),
            Site::Target => (b, a),
        };
        roles.insert(charted, Role::Signal);
        roles.insert(silent, Role::Silent);
    }
    let p_background = cfg.background_rate;
    let p_signal = sigmoid(logit(p_background) + cfg.signal_strength);
    let span_days = (cfg.end_date - cfg.start_date).num_days() as usize + 1;

    (0..n)
        .map(|i| {
            let outcome = Outcome::from(rng::unit(rng) < prevalence);
            let admit_date = cfg.start_date + Duration::days(rng::index(rng, span_days) as i64);
            let mut values = HashMap::with_capacity(vocab.len());
            for entry in vocab.entries() {
                let mut label = if entry.is_binary() {
                    let p = match roles.get(entry.id.as_str()).unwrap_or(&Role::Background) {
                        Role::Signal if outcome.is_positive() => p_signal,
                        Role::Silent => 0.0,
                        _ => p_background,
                    };
                    if rng::unit(rng) < p { PRESENT } else { ABSENT }.to_string()
                } else {
                    let k = draw_weighted(&categorical_weights(entry), rng::unit(rng));
                    entry.labels[k].clone()
                };
                if rng::unit(rng) < cfg.noise_rate {
                    label = entry.labels[rng::index(rng, entry.labels.len())].clone();
                }
                values.insert(entry.id.clone(), label);
            }
            let id = format!("{}-{:06}", site.prefix(), i + 1);
            EncounterRecord::build(id, admit_date, outcome, &values, vocab, i + 1)
                .expect("generated labels come from the vocabulary")
        })
        .collect()
}

pub const SEMANTIC_TAG: &str = "synthetic-semantic";

/// Dense stand-in for a language-model embedding table.
///
/// Every concept gets a random unit direction; the "present" vector is that
/// direction and the "absent" vector mixes a shared absence direction with
/// the negated concept direction. The second concept of each synonym pair
/// reuses the first concept's direction plus a small perturbation, so the
/// two "present" vectors have cosine similarity near 0.99. Categorical
/// labels get independent random unit vectors.
pub fn synthetic_semantic_table(
    vocab: &Vocabulary,
    synonym_pairs: &[(String, String)],
    dimension: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if dimension < 2 {
        return Err(Error::SynthConfig("semantic dimension must be at least 2".into()));
    }
    let mut rng = rng::seeded(seed, Stream::Embedding);
    let unit_vector = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dimension).map(|_| rng::normal(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    };
    let absence = unit_vector(&mut rng);
    let mut directions: HashMap<String, Vec<f64>> = HashMap::new();
    for entry in vocab.entries() {
        directions.insert(entry.id.clone(), unit_vector(&mut rng));
    }
    for (a, b) in synonym_pairs {
        let base = directions
            .get(a)
            .ok_or_else(|| Error::SynthConfig(format!("unknown synonym concept {a:?}")))?
            .clone();
        if !directions.contains_key(b) {
            return Err(Error::SynthConfig(format!("unknown synonym concept {b:?}")));
        }
        let jitter = unit_vector(&mut rng);
        let v: Vec<f64> = base.iter().zip(&jitter).map(|(x, j)| x + 0.15 * j).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        directions.insert(b.clone(), v.into_iter().map(|x| x / norm).collect());
    }

    let mut table = EmbeddingTable::new(dimension, SEMANTIC_TAG)?;
    for entry in vocab.entries() {
        let dir = &directions[&entry.id];
        for label in &entry.labels {
            let v = if entry.is_binary() && label == PRESENT {
                dir.clone()
            } else if entry.is_binary() {
                absence.iter().zip(dir).map(|(a, d)| 0.5 * a - 0.25 * d).collect()
            } else {
                unit_vector(&mut rng)
            };
            table.insert(&entry.id, label, v)?;
        }
    }
    Ok(table)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
