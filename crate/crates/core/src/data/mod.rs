//! Windows, subject-disjoint splits, synthetic signal generation, filters
//! and signal-quality scoring.

pub mod dsp;
pub mod sqi;
pub mod store;
pub mod synth;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, HimaeError, Result};
use crate::rng::{purpose, stream};
use crate::tensor::{Shape3, Tensor3};

/// Equal-length windows with the subject each one came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Tensor3,
    subjects: Vec<u32>,
}

impl Dataset {
    pub fn new(windows: Tensor3, subjects: Vec<u32>) -> Result<Self> {
        if windows.shape().batch != subjects.len() {
            return Err(HimaeError::Shape(format!(
                "{} windows but {} subject ids",
                windows.shape().batch,
                subjects.len()
            )));
        }
        Ok(Self { windows, subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.windows.shape().channels
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape().time
    }

    pub fn windows(&self) -> &Tensor3 {
        &self.windows
    }

    pub fn subjects(&self) -> &[u32] {
        &self.subjects
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor3> {
        self.windows.select_batch(indices)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            windows: self.windows.select_batch(indices)?,
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
        })
    }

    /// Builds a dataset from single-channel windows.
    pub fn from_windows(windows: &[Vec<f64>], subjects: Vec<u32>) -> Result<Self> {
        if windows.is_empty() {
            return Dataset::new(Tensor3::zeros(Shape3::new(0, 1, 0)), subjects);
        }
        Dataset::new(Tensor3::stack_windows(windows)?, subjects)
    }
}

/// Window indices on each side of a subject-disjoint partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub val_subjects: Vec<u32>,
}

/// Shuffles the distinct subjects and sends `round(fraction * n)` of them
/// (at least one, at most `n - 1`) to the held-out side.
pub fn subject_split(subjects: &[u32], val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return config_err(format!("validation fraction {val_fraction} outside (0, 1)"));
    }
    let mut ids: Vec<u32> = subjects.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return config_err("a subject-disjoint split needs at least two subjects");
    }
    ids.shuffle(&mut stream(seed, purpose::SPLIT, 0));
    let n_val = ((val_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut val_subjects = ids[..n_val].to_vec();
    val_subjects.sort_unstable();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in subjects.iter().enumerate() {
        if val_subjects.binary_search(s).is_ok() {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(Split {
        train,
        val,
        val_subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_subject_disjoint() {
        let subjects: Vec<u32> = (0..200).map(|i| i % 23).collect();
        let s = subject_split(&subjects, 0.1, 3).unwrap();
        assert_eq!(s.train.len() + s.val.len(), 200);
        assert_eq!(s.val_subjects.len(), 2);
        for &i in &s.train {
            assert!(!s.val_subjects.contains(&subjects[i]));
        }
        for &i in &s.val {
            assert!(s.val_subjects.contains(&subjects[i]));
        }
        assert_eq!(s, subject_split(&subjects, 0.1, 3).unwrap());
    }

    #[test]
    fn split_needs_two_subjects() {
        assert!(subject_split(&[4, 4, 4], 0.5, 0).is_err());
    }
}
