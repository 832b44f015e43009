mod common;

use common::separable_set;
use concept_cnn::evaluation::score_instances;
use concept_cnn::training::{train, FreezeMask, Selection};
use concept_cnn::transfer::{run_transfer, Provenance};
use concept_cnn::{auroc, Checkpoint, CnnModel, EmbeddingTable, Error, Outcome, TrainConfig, TransferStrategy};

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, learning_rate: 0.01, seed: 5, ..TrainConfig::default() }
}

fn test_auroc(model: &CnnModel, set: &[concept_cnn::EncodedInstance]) -> f64 {
    let labels: Vec<Outcome> = set.iter().map(|x| x.outcome).collect();
    auroc(&score_instances(model, set).unwrap(), &labels).unwrap()
}

fn checkpoint(model: CnnModel) -> Checkpoint {
    let prov = Provenance {
        site: "source".into(),
        data_window: "admit_date < 20140601".into(),
        seed: 5,
        strategy: None,
        parent: None,
        config: serde_json::Value::Null,
    };
    Checkpoint::new("dense-6", model, prov).unwrap()
}

#[test]
fn learns_a_separable_signal() {
    let train_set = separable_set(240, 6, 1);
    let val = separable_set(60, 6, 2);
    let test = separable_set(90, 6, 3);
    let model = CnnModel::init(8, 6, 0.5, 5).unwrap();
    let (trained, history) = train(&model, &train_set, &val, &cfg(15)).unwrap();
    assert!(test_auroc(&trained, &test) > 0.95);
    assert!(history.epochs.last().unwrap().train_loss < history.initial.train_loss);
    assert_eq!(history.epochs.len(), 15);
}

#[test]
fn same_seed_gives_identical_models() {
    let train_set = separable_set(80, 4, 1);
    let val = separable_set(20, 4, 2);
    let model = CnnModel::init(4, 4, 0.5, 5).unwrap();
    let a = train(&model, &train_set, &val, &cfg(3)).unwrap();
    let b = train(&model, &train_set, &val, &cfg(3)).unwrap();
    assert_eq!(a, b);
    let c = train(&model, &train_set, &val, &TrainConfig { seed: 6, ..cfg(3) }).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn final_epoch_selection_returns_last_epoch() {
    let train_set = separable_set(40, 4, 1);
    let val = separable_set(20, 4, 2);
    let model = CnnModel::init(4, 4, 0.5, 5).unwrap();
    let (_, h) = train(&model, &train_set, &val, &TrainConfig { selection: Selection::FinalEpoch, ..cfg(4) }).unwrap();
    assert_eq!(h.selected_epoch, Some(4));
}

#[test]
fn linear_tuning_never_touches_the_conv_layer() {
    let train_set = separable_set(80, 6, 1);
    let val = separable_set(20, 6, 2);
    let model = CnnModel::init(5, 6, 0.5, 5).unwrap();
    let (tuned, _) = train(&model, &train_set, &val, &TrainConfig { freeze: FreezeMask::CONV, ..cfg(5) }).unwrap();
    assert_eq!(tuned.conv_filters().as_slice(), model.conv_filters().as_slice());
    assert_ne!(tuned.fc_weights(), model.fc_weights());
}

#[test]
fn full_freeze_returns_the_input() {
    let train_set = separable_set(40, 4, 1);
    let val = separable_set(20, 4, 2);
    let model = CnnModel::init(4, 4, 0.5, 5).unwrap();
    let (same, h) = train(&model, &train_set, &val, &TrainConfig { freeze: FreezeMask::ALL, ..cfg(5) }).unwrap();
    assert_eq!(same, model);
    assert!(h.epochs.is_empty());
    assert_eq!(h.selected_epoch, None);
}

#[test]
fn transfer_strategies_respect_their_masks() {
    let src = checkpoint(CnnModel::init(5, 6, 0.5, 5).unwrap());
    let table = EmbeddingTable::new(6, "dense-6").unwrap();
    let train_set = separable_set(60, 6, 4);
    let val = separable_set(20, 6, 5);

    let (direct, h) = run_transfer(&src, TransferStrategy::DirectShare, &table, &[], &[], &cfg(3)).unwrap();
    assert!(h.is_none());
    assert_eq!(direct, src.model);
    assert_eq!(direct.revision(), src.model.revision());

    let (linear, _) = run_transfer(&src, TransferStrategy::TuneLinear, &table, &train_set, &val, &cfg(3)).unwrap();
    assert_eq!(linear.conv_filters(), src.model.conv_filters());
    assert_ne!(linear.fc_weights(), src.model.fc_weights());

    let (full, _) = run_transfer(&src, TransferStrategy::TuneConvAndLinear, &table, &train_set, &val, &cfg(3)).unwrap();
    assert_ne!(full.conv_filters(), src.model.conv_filters());
}

#[test]
fn transfer_refuses_a_table_of_another_dimension() {
    let src = checkpoint(CnnModel::init(5, 6, 0.5, 5).unwrap());
    let table = EmbeddingTable::new(7, "dense-6").unwrap();
    let err = run_transfer(&src, TransferStrategy::DirectShare, &table, &[], &[], &cfg(1)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 6, found: 7 }));
    let other = EmbeddingTable::new(6, "one-hot").unwrap();
    let err = run_transfer(&src, TransferStrategy::TuneLinear, &other, &[], &[], &cfg(1)).unwrap_err();
    assert!(matches!(err, Error::FamilyMismatch { .. }));
}
