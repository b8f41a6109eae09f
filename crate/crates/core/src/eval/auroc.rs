//! Area under the ROC curve via the Mann–Whitney rank statistic.

use crate::error::{HimaeError, Result};

/// Average (1-based) ranks with ties sharing their mean rank.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a positive outranks a negative, ties counting half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(HimaeError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HimaeError::UndefinedAuroc("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HimaeError::UndefinedAuroc(format!("{pos} positives and {neg} negatives")));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// One-vs-rest AUROC averaged over classes. `scores[i][c]` is the score of
/// sample `i` for class `c`.
pub fn macro_auroc(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..classes {
        let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        total += auroc(&s, &l)?;
    }
    Ok(total / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5; 4], &labels).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(HimaeError::UndefinedAuroc(_))));
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
