//! Stratified fold assignment and ROC AUC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Assigns each sample a fold in `0..k`, dealing shuffled positives and
/// negatives round-robin so every fold sees both classes.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::validation(format!("cv_folds must be >= 2, got {k}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::validation(format!(
            "{k}-fold cross-validation needs at least {k} samples of each class \
             ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; labels.len()];
    for (r, &i) in pos.iter().enumerate() {
        fold[i] = r % k;
    }
    // Continue the rotation so fold sizes stay balanced overall.
    for (r, &i) in neg.iter().enumerate() {
        fold[i] = (pos.len() + r) % k;
    }
    Ok(fold)
}

/// `(train, test)` index lists for fold `f`.
pub fn split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}

/// Area under the ROC curve (Mann-Whitney statistic, ties count one half).
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Midrank of the tie block, 1-based.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}
