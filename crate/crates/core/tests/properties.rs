mod common;

use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;
use common::{gaussian_matrix, pairwise_auroc, random_model, rng};
use concept_cnn::data::{random_split, split_by_date};
use concept_cnn::experiment::desk_vocabulary;
use concept_cnn::transfer::Provenance;
use concept_cnn::{auroc, encode_instance, Checkpoint, EmbeddingTable, EncounterRecord, Matrix, Outcome, Vocabulary};
use proptest::prelude::*;

/// Scores on a coarse grid so ties are common, plus a few off-grid values.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<Outcome>)> {
    prop::collection::vec((0i32..12, any::<bool>(), prop::bool::weighted(0.2), 0.0f64..1.0), 2..200).prop_map(|v| {
        v.into_iter()
            .map(|(grid, pos, off, jitter)| {
                let s = grid as f64 / 4.0 + if off { jitter / 8.0 } else { 0.0 };
                (s, Outcome::from(pos))
            })
            .unzip()
    })
}

fn both_classes(labels: &[Outcome]) -> bool {
    labels.iter().any(|l| l.is_positive()) && labels.iter().any(|l| !l.is_positive())
}

fn record_strategy(vocab: &Vocabulary) -> impl Strategy<Value = EncounterRecord> {
    let choices: Vec<_> = vocab.entries().iter().map(|e| 0..e.labels.len()).collect();
    let vocab = vocab.clone();
    (choices, 0u32..3000, any::<bool>()).prop_map(move |(picks, day, pos)| {
        let values: HashMap<String, String> =
            vocab.entries().iter().zip(picks).map(|(e, i)| (e.id.clone(), e.labels[i].clone())).collect();
        let date = NaiveDate::from_ymd_opt(2008, 1, 1).unwrap() + chrono::Days::new(day as u64);
        EncounterRecord::build(format!("e{day}"), date, Outcome::from(pos), &values, &vocab, 0).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_pairwise_oracle((scores, labels) in scored_labels()) {
        prop_assume!(both_classes(&labels));
        let fast = auroc(&scores, &labels).unwrap();
        prop_assert!((fast - pairwise_auroc(&scores, &labels)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn auroc_ignores_strictly_increasing_maps((scores, labels) in scored_labels()) {
        prop_assume!(both_classes(&labels));
        let base = auroc(&scores, &labels).unwrap();
        for f in [|s: f64| 3.0 * s - 7.0, |s: f64| s.exp(), |s: f64| s * s * s, |s: f64| 1.0 / (1.0 + (-s).exp())] {
            let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            prop_assert_eq!(auroc(&mapped, &labels).unwrap(), base);
        }
    }

    #[test]
    fn flipping_labels_complements_auroc((scores, labels) in scored_labels()) {
        prop_assume!(both_classes(&labels));
        let flipped: Vec<Outcome> = labels.iter().map(|l| l.flipped()).collect();
        let a = auroc(&scores, &labels).unwrap();
        let b = auroc(&scores, &flipped).unwrap();
        prop_assert_eq!(a + b, 1.0);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert_eq!(auroc(&negated, &flipped).unwrap(), a);
    }

    #[test]
    fn row_order_does_not_change_the_output(seed in any::<u64>(), rows in 1usize..8, dim in 1usize..6, filters in 1usize..5) {
        let mut r = rng(seed);
        let model = random_model(filters, dim, &mut r);
        let x = gaussian_matrix(rows, dim, 1.0, &mut r);
        let mut perm: Vec<usize> = (0..rows).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % rows);
        let shuffled = Matrix::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(model.logits(&x).unwrap(), model.logits(&shuffled).unwrap());
    }

    #[test]
    fn random_split_partitions_deterministically(n in 1usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (a, b) = random_split(&items, ratio, seed).unwrap();
        prop_assert_eq!(a.len(), (ratio * n as f64).round() as usize);
        prop_assert_eq!(a.len() + b.len(), n);
        let all: HashSet<usize> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]) && b.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(random_split(&items, ratio, seed).unwrap(), (a, b));
    }

    #[test]
    fn date_split_is_half_open(records in prop::collection::vec(record_strategy(&desk_vocabulary()), 1..40), day in 0u32..3000) {
        let cutoff = NaiveDate::from_ymd_opt(2008, 1, 1).unwrap() + chrono::Days::new(day as u64);
        let (before, after) = split_by_date(&records, cutoff);
        prop_assert_eq!(before.len() + after.len(), records.len());
        prop_assert!(before.iter().all(|r| r.admit_date < cutoff));
        prop_assert!(after.iter().all(|r| r.admit_date >= cutoff));
    }

    #[test]
    fn one_hot_encoding_is_injective(a in record_strategy(&desk_vocabulary()), b in record_strategy(&desk_vocabulary())) {
        let vocab = desk_vocabulary();
        let table = EmbeddingTable::one_hot(&vocab).unwrap();
        let xa = encode_instance(&a, &vocab, &table).unwrap().matrix;
        let xb = encode_instance(&b, &vocab, &table).unwrap().matrix;
        prop_assert_eq!(xa == xb, a.assignments == b.assignments);
    }

    #[test]
    fn checkpoint_text_is_a_fixed_point(seed in any::<u64>(), filters in 1usize..6, dim in 1usize..10) {
        let mut r = rng(seed);
        let model = random_model(filters, dim, &mut r);
        let prov = Provenance {
            site: "source".into(),
            data_window: "admit_date < 20140601".into(),
            seed,
            strategy: None,
            parent: None,
            config: serde_json::json!({ "seed": seed }),
        };
        let text = Checkpoint::new("one-hot", model.clone(), prov).unwrap().to_text().unwrap();
        let back = Checkpoint::parse(&text).unwrap();
        prop_assert_eq!(&back.model, &model);
        prop_assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn embedding_file_round_trips_bit_exactly(seed in any::<u64>(), dim in 1usize..6) {
        let mut r = rng(seed);
        let vocab = desk_vocabulary();
        let mut table = EmbeddingTable::new(dim, "random").unwrap();
        for (concept, label) in vocab.pairs() {
            table.insert(concept, label, gaussian_matrix(1, dim, 1e3, &mut r).as_slice().to_vec()).unwrap();
        }
        let text = table.to_text();
        let back = EmbeddingTable::parse(&text).unwrap();
        prop_assert_eq!(&back, &table);
        prop_assert_eq!(back.to_text(), text);
    }
}
