//! AUROC and evaluation reports.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{EncounterRecord, Outcome};
use crate::embedding::{encode_all, EmbeddingTable, EncodedInstance};
use crate::error::{Error, Result};
use crate::network::CnnModel;
use crate::numfmt::sci;
use crate::vocab::Vocabulary;

/// Tie-aware AUROC via the Mann-Whitney statistic:
/// `(sum of positive midranks - n+ (n+ + 1) / 2) / (n+ n-)`.
///
/// Tied scores share the mean of the ranks they span, which gives a tied
/// positive/negative pair half credit.
pub fn auroc(scores: &[f64], labels: &[Outcome]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {bad}")));
    }
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut positive_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (0-based) -> midrank of 1-based ranks.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_positives = order[start..end].iter().filter(|&&i| labels[i].is_positive()).count();
        positive_rank_sum += midrank * tied_positives as f64;
        start = end;
    }
    let n_pos = positives as f64;
    let u = positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    let pairs = n_pos * negatives as f64;
    // u and pairs are exact (half-integers); dividing the smaller side keeps
    // auroc(flipped labels) == 1 - auroc bit for bit.
    if 2.0 * u > pairs {
        Ok(1.0 - (pairs - u) / pairs)
    } else {
        Ok(u / pairs)
    }
}

/// Positive-class probabilities in eval mode.
pub fn score_instances(model: &CnnModel, instances: &[EncodedInstance]) -> Result<Vec<f64>> {
    instances.iter().map(|x| model.predict_proba(&x.matrix)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Local,
    Direct,
    TuneLinear,
    TuneFull,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Local, Scenario::Direct, Scenario::TuneLinear, Scenario::TuneFull];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Local => "local",
            Scenario::Direct => "direct",
            Scenario::TuneLinear => "tune_linear",
            Scenario::TuneFull => "tune_full",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub source_tag: String,
    pub auroc: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// SHA-256 over the scores, one `{:.16e}` value per line.
    pub score_digest: String,
}

pub fn score_digest(scores: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for s in scores {
        hasher.update(sci(*s).as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub fn evaluate_instances(
    model: &CnnModel,
    test_set: &[EncodedInstance],
    scenario: Scenario,
    source_tag: &str,
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyDataset("test set"));
    }
    let scores = score_instances(model, test_set)?;
    let labels: Vec<Outcome> = test_set.iter().map(|x| x.outcome).collect();
    let auroc = auroc(&scores, &labels)?;
    let n_positive = labels.iter().filter(|l| l.is_positive()).count();
    Ok(EvalReport {
        scenario,
        source_tag: source_tag.to_string(),
        auroc,
        n_positive,
        n_negative: labels.len() - n_positive,
        score_digest: score_digest(&scores),
    })
}

/// Encodes `test_set` with `table` and scores it.
pub fn evaluate_model(
    model: &CnnModel,
    test_set: &[EncounterRecord],
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    scenario: Scenario,
) -> Result<EvalReport> {
    if table.dimension() != model.dimension() {
        return Err(Error::DimensionMismatch { expected: model.dimension(), found: table.dimension() });
    }
    let encoded = encode_all(test_set, vocab, table)?;
    evaluate_instances(model, &encoded, scenario, table.source_tag())
}

/// AUROC grid: one row per embedding source, one column per scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub embedding: String,
    pub local: Option<f64>,
    pub direct: Option<f64>,
    pub tune_linear: Option<f64>,
    pub tune_full: Option<f64>,
}

impl ResultRow {
    fn slot(&mut self, scenario: Scenario) -> &mut Option<f64> {
        match scenario {
            Scenario::Local => &mut self.local,
            Scenario::Direct => &mut self.direct,
            Scenario::TuneLinear => &mut self.tune_linear,
            Scenario::TuneFull => &mut self.tune_full,
        }
    }

    pub fn get(&self, scenario: Scenario) -> Option<f64> {
        match scenario {
            Scenario::Local => self.local,
            Scenario::Direct => self.direct,
            Scenario::TuneLinear => self.tune_linear,
            Scenario::TuneFull => self.tune_full,
        }
    }
}

impl ResultTable {
    pub fn record(&mut self, report: &EvalReport) {
        let row = match self.rows.iter().position(|r| r.embedding == report.source_tag) {
            Some(i) => &mut self.rows[i],
            None => {
                self.rows.push(ResultRow {
                    embedding: report.source_tag.clone(),
                    local: None,
                    direct: None,
                    tune_linear: None,
                    tune_full: None,
                });
                self.rows.last_mut().unwrap()
            }
        };
        *row.slot(report.scenario) = Some(report.auroc);
    }

    pub fn get(&self, embedding: &str, scenario: Scenario) -> Option<f64> {
        self.rows.iter().find(|r| r.embedding == embedding)?.get(scenario)
    }
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<20}", "embedding")?;
        for s in Scenario::ALL {
            write!(f, " {:>12}", s.as_str())?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<20}", row.embedding)?;
            for s in Scenario::ALL {
                match row.get(s) {
                    Some(v) => write!(f, " {v:>12.4}")?,
                    None => write!(f, " {:>12}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Outcome::{Negative as N, Positive as P};

    #[test]
    fn perfect_ranking() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[N, N, P, P]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[N, N, P, P]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_is_half() {
        assert_eq!(auroc(&[0.3; 6], &[N, P, N, P, P, N]).unwrap(), 0.5);
    }

    #[test]
    fn four_point_example() {
        // Pairs (pos, neg): 0.35>0.1 win, 0.35<0.4 loss, 0.8>0.1, 0.8>0.4 -> 3/4.
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[N, N, P, P]).unwrap(), 0.75);
    }

    #[test]
    fn errors() {
        assert!(matches!(auroc(&[0.1, 0.2], &[P, P]), Err(Error::SingleClass { .. })));
        assert!(matches!(auroc(&[0.1], &[P, N]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(auroc(&[f64::NAN, 0.1], &[P, N]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn table_layout() {
        let mut t = ResultTable::default();
        let rep = |tag: &str, s, a| EvalReport {
            scenario: s,
            source_tag: tag.into(),
            auroc: a,
            n_positive: 1,
            n_negative: 1,
            score_digest: String::new(),
        };
        t.record(&rep("one-hot", Scenario::Direct, 0.61));
        t.record(&rep("one-hot", Scenario::TuneFull, 0.72));
        t.record(&rep("dense-a", Scenario::Local, 0.75));
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.get("one-hot", Scenario::TuneFull), Some(0.72));
        assert_eq!(t.get("one-hot", Scenario::Local), None);
        let text = t.to_string();
        assert!(text.contains("0.7500"));
    }
}
