//! Ordered concept vocabulary.
//!
//! The vocabulary fixes the row order of every encoded instance and the
//! hot-index layout of one-hot tables. On disk it is a JSON document:
//!
//! ```json
//! {
//!   "concepts": [
//!     { "id": "cough", "labels": ["P", "A"] },
//!     { "id": "temperature",
//!       "labels": ["High grade", "Low grade", "Inconsequential", "No info"],
//!       "default": "No info" },
//!     { "id": "age_group", "labels": ["0-5", "6-64", "65+"] }
//!   ]
//! }
//! ```
//!
//! A concept whose labels are exactly `P`/`A` is a binary finding and
//! defaults to `A` when an encounter does not mention it. Other concepts
//! only have a default if the file names one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRESENT: &str = "P";
pub const ABSENT: &str = "A";

pub const TEMPERATURE: &str = "temperature";
pub const AGE_GROUP: &str = "age_group";

pub const TEMPERATURE_LABELS: [&str; 4] = ["High grade", "Low grade", "Inconsequential", "No info"];
pub const AGE_LABELS: [&str; 3] = ["0-5", "6-64", "65+"];

/// Findings of the influenza schema: 69 present/absent concepts, followed
/// in [`Vocabulary::influenza_schema`] by temperature and age group.
pub const INFLUENZA_FINDINGS: [&str; 69] = [
    "cough",
    "fever",
    "headache",
    "myalgia",
    "generalized_aches_and_pains",
    "sore_throat",
    "rhinorrhea",
    "nasal_congestion",
    "chills",
    "fatigue",
    "malaise",
    "nausea",
    "vomiting",
    "diarrhea",
    "abdominal_pain",
    "shortness_of_breath",
    "wheezing",
    "chest_pain",
    "sputum",
    "hoarseness",
    "sneezing",
    "conjunctivitis",
    "ear_pain",
    "rash",
    "anorexia",
    "dehydration",
    "dizziness",
    "confusion",
    "lethargy",
    "irritability",
    "seizure",
    "tachypnea",
    "tachycardia",
    "hypoxemia",
    "crackles",
    "rhonchi",
    "pharyngeal_erythema",
    "tonsillar_exudate",
    "cervical_lymphadenopathy",
    "neck_stiffness",
    "photophobia",
    "back_pain",
    "arthralgia",
    "sweats",
    "weakness",
    "syncope",
    "cyanosis",
    "retractions",
    "grunting",
    "nasal_flaring",
    "otitis_media",
    "sinus_pain",
    "post_nasal_drip",
    "hemoptysis",
    "pleuritic_pain",
    "infiltrate",
    "pneumonia",
    "bronchitis",
    "bronchiolitis",
    "croup",
    "asthma",
    "copd",
    "sick_contact",
    "influenza_vaccination",
    "recent_travel",
    "poor_feeding",
    "decreased_activity",
    "altered_mental_status",
    "viral_syndrome",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub id: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl ConceptEntry {
    pub fn binary(id: impl Into<String>) -> Self {
        ConceptEntry {
            id: id.into(),
            labels: vec![PRESENT.to_string(), ABSENT.to_string()],
            default: None,
        }
    }

    pub fn categorical(id: impl Into<String>, labels: &[&str], default: Option<&str>) -> Self {
        ConceptEntry {
            id: id.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            default: default.map(str::to_string),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.labels.len() == 2
            && self.labels.iter().any(|l| l == PRESENT)
            && self.labels.iter().any(|l| l == ABSENT)
    }

    /// Label assigned when an encounter carries no value for this concept.
    pub fn default_label(&self) -> Option<&str> {
        match &self.default {
            Some(d) => Some(d.as_str()),
            None if self.is_binary() => Some(ABSENT),
            None => None,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabularyFile {
    concepts: Vec<ConceptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<ConceptEntry>,
    index: HashMap<String, usize>,
}

/// Names that collide with the fixed encounter CSV columns.
const RESERVED: [&str; 3] = ["encounter_id", "admit_date", "outcome"];

impl Vocabulary {
    pub fn new(entries: Vec<ConceptEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Vocabulary("vocabulary has no concepts".into()));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if entry.id.trim().is_empty() {
                return Err(Error::Vocabulary(format!("concept #{i} has an empty id")));
            }
            if RESERVED.contains(&entry.id.as_str()) {
                return Err(Error::Vocabulary(format!("concept id {:?} is reserved", entry.id)));
            }
            if index.insert(entry.id.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate concept id {:?}", entry.id)));
            }
            if entry.labels.len() < 2 {
                return Err(Error::Vocabulary(format!(
                    "concept {:?} needs at least two labels",
                    entry.id
                )));
            }
            for (j, label) in entry.labels.iter().enumerate() {
                if label.is_empty() {
                    return Err(Error::Vocabulary(format!("concept {:?} has an empty label", entry.id)));
                }
                if entry.labels[..j].contains(label) {
                    return Err(Error::Vocabulary(format!(
                        "concept {:?} repeats label {label:?}",
                        entry.id
                    )));
                }
            }
            if let Some(d) = &entry.default {
                if entry.label_index(d).is_none() {
                    return Err(Error::Vocabulary(format!(
                        "default {d:?} of concept {:?} is not one of its labels",
                        entry.id
                    )));
                }
            }
        }
        Ok(Vocabulary { entries, index })
    }

    /// The 69 binary findings plus temperature grade and age group.
    /// One-hot dimension 69 * 2 + 4 + 3 = 145.
    pub fn influenza_schema() -> Self {
        let mut entries: Vec<ConceptEntry> =
            INFLUENZA_FINDINGS.iter().map(|id| ConceptEntry::binary(*id)).collect();
        entries.push(ConceptEntry::categorical(TEMPERATURE, &TEMPERATURE_LABELS, Some("No info")));
        entries.push(ConceptEntry::categorical(AGE_GROUP, &AGE_LABELS, None));
        Vocabulary::new(entries).expect("built-in schema is valid")
    }

    pub fn from_json(content: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(content)
            .map_err(|e| Error::Vocabulary(format!("malformed vocabulary file: {e}")))?;
        Vocabulary::new(file.concepts)
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile { concepts: self.entries.clone() };
        let mut out = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ConceptEntry] {
        &self.entries
    }

    pub fn position(&self, concept: &str) -> Option<usize> {
        self.index.get(concept).copied()
    }

    pub fn get(&self, concept: &str) -> Option<&ConceptEntry> {
        self.position(concept).map(|i| &self.entries[i])
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.index.contains_key(concept)
    }

    /// Sum of label counts over all concepts.
    pub fn one_hot_dimension(&self) -> usize {
        self.entries.iter().map(|e| e.labels.len()).sum()
    }

    /// Every (concept, label) pair in vocabulary order, then label order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|e| e.labels.iter().map(move |l| (e.id.as_str(), l.as_str())))
    }
}
