#![allow(dead_code)]

use concept_cnn::network::NUM_CLASSES;
use concept_cnn::{CnnModel, EncodedInstance, Matrix, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn random_model(filters: usize, dim: usize, rng: &mut ChaCha8Rng) -> CnnModel {
    CnnModel::from_parts(
        gaussian_matrix(filters, dim, 1.0, rng),
        gaussian_matrix(NUM_CLASSES, filters, 1.0, rng),
        [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5],
        0.5,
        0,
    )
    .unwrap()
}

/// O(n^2) pair count: a positive scored above a negative is a win, a tie is
/// half a win.
pub fn pairwise_auroc(scores: &[f64], labels: &[Outcome]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, li) in labels.iter().enumerate() {
        if !li.is_positive() {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if lj.is_positive() {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Two-concept instances where concept 0 is positive-only evidence: row 0 is
/// `+e0` for positives and `-e0` for negatives; row 1 is shared noise.
pub fn separable_set(n: usize, dim: usize, seed: u64) -> Vec<EncodedInstance> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let outcome = Outcome::from(i % 3 == 0);
            let mut m = gaussian_matrix(2, dim, 0.3, &mut r);
            m.set(0, 0, if outcome.is_positive() { 1.0 } else { -1.0 });
            EncodedInstance { matrix: m, outcome }
        })
        .collect()
}
