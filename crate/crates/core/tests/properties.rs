mod common;

use common::brute_force_auroc;
use himae::data::subject_split;
use himae::eval::auroc;
use himae::eval::tasks::{stratified_subject_split, ProbeSplit};
use himae::masking::{masked_count, masked_mse, sample_mask_seeded, MaskRegime, PatchMask};
use himae::model::{receptive_field, HimaeConfig};
use himae::tensor::{Shape3, Tensor3};
use himae::train::Checkpoint;
use proptest::prelude::*;

fn regime() -> impl Strategy<Value = MaskRegime> {
    prop_oneof![
        Just(MaskRegime::Random),
        Just(MaskRegime::Contiguous),
        Just(MaskRegime::Interior),
        Just(MaskRegime::Suffix)
    ]
}

proptest! {
    #[test]
    fn mask_count_is_exact(n in 3usize..300, r in 0.05f64..0.95, regime in regime(), seed in any::<u64>()) {
        let Ok(count) = masked_count(n, r) else { return Ok(()) };
        match sample_mask_seeded(n, 5, r, regime, seed) {
            Ok(m) => {
                prop_assert_eq!(m.masked_patches(), count);
                prop_assert_eq!(m.expanded().len(), n * 5);
                let first = m.patches.iter().position(|&p| p).unwrap();
                let last = m.patches.iter().rposition(|&p| p).unwrap();
                match regime {
                    MaskRegime::Contiguous => prop_assert_eq!(last - first + 1, count),
                    MaskRegime::Interior => {
                        prop_assert_eq!(last - first + 1, count);
                        prop_assert!(first > 0 && last < n - 1);
                    }
                    MaskRegime::Suffix => prop_assert_eq!(first, n - count),
                    MaskRegime::Random => {}
                }
            }
            Err(_) => prop_assert!(regime == MaskRegime::Interior && n - count < 2),
        }
    }

    #[test]
    fn auroc_matches_pair_counting(
        scores in prop::collection::vec(0i32..6, 2..40),
        labels in prop::collection::vec(any::<bool>(), 2..40),
    ) {
        let n = scores.len().min(labels.len());
        let s: Vec<f64> = scores[..n].iter().map(|&v| v as f64).collect();
        let l = &labels[..n];
        if l.iter().all(|&x| x) || l.iter().all(|&x| !x) {
            prop_assert!(auroc(&s, l).is_err());
        } else {
            prop_assert_eq!(auroc(&s, l).unwrap(), brute_force_auroc(&s, l));
        }
    }

    #[test]
    fn auroc_invariant_under_exp(scores in prop::collection::vec(-5.0f64..5.0, 4..30), seed in any::<u64>()) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        prop_assume!(labels.iter().any(|&l| !l));
        let e: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&e, &labels).unwrap());
    }

    #[test]
    fn observed_perturbations_leave_loss_unchanged(
        pred in prop::collection::vec(-2.0f64..2.0, 20),
        noise in prop::collection::vec(-5.0f64..5.0, 20),
        patches in prop::collection::vec(any::<bool>(), 4),
    ) {
        prop_assume!(patches.iter().any(|&p| p));
        let mask = himae::masking::mask_tensor(&[PatchMask { patches, patch_len: 5 }]).unwrap();
        let target = Tensor3::from_signal(&vec![0.5; 20]).unwrap();
        let p = Tensor3::from_signal(&pred).unwrap();
        let perturbed: Vec<f64> = pred.iter().zip(&noise).zip(mask.data()).map(|((p, n), m)| if *m == 0.0 { p + n } else { *p }).collect();
        let q = Tensor3::from_signal(&perturbed).unwrap();
        prop_assert_eq!(masked_mse(&p, &target, &mask).unwrap(), masked_mse(&q, &target, &mask).unwrap());
    }

    #[test]
    fn subject_splits_are_disjoint(subjects in prop::collection::vec(0u32..12, 4..80), seed in any::<u64>()) {
        let distinct = { let mut s = subjects.clone(); s.sort(); s.dedup(); s.len() };
        prop_assume!(distinct >= 2);
        let s = subject_split(&subjects, 0.3, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len(), subjects.len());
        for &i in &s.train {
            prop_assert!(!s.val_subjects.contains(&subjects[i]));
        }
        let labels: Vec<usize> = (0..subjects.len()).map(|i| i % 2).collect();
        let p = stratified_subject_split(&subjects, &labels, 0.3, seed).unwrap();
        for &i in &p.test {
            prop_assert!(p.train.iter().all(|&j| subjects[j] != subjects[i]));
        }
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..64), name in "[a-z.]{1,12}") {
        let t = Tensor3::from_vec(Shape3::new(1, 1, values.len()), values).unwrap();
        let ck = Checkpoint { meta: serde_json::json!({ "k": 1 }), tensors: vec![(name.clone(), t.clone())] };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.tensor(&name).unwrap(), &t);
        prop_assert_eq!(back.meta, ck.meta);
    }

    #[test]
    fn receptive_field_recurrence(kernel in 1usize..9, stride in 1usize..4, depth in 1usize..6) {
        let cfg = HimaeConfig { widths: vec![8; depth], kernel, stride, ..HimaeConfig::tiny() };
        let rf = receptive_field(&cfg);
        let (mut r, mut j) = (1usize, 1usize);
        for l in &rf.layers {
            r += (l.kernel - 1) * j;
            j *= l.stride;
            prop_assert_eq!((l.receptive, l.jump), (r, j));
        }
    }
}

#[test]
fn split_hash_depends_on_assignment() {
    let a = ProbeSplit { train: vec![0, 1], test: vec![2] };
    let b = ProbeSplit { train: vec![0], test: vec![1, 2] };
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), a.clone().hash());
}
