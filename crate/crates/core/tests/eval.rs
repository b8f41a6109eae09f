use himae::data::synth::{pretraining_dataset, SynthConfig};
use himae::eval::bench::{score_methods, run_generative_benchmark, GenerativeRegime, GenerativeTaskSpec};
use himae::eval::probe::{train_and_score, ProbeConfig};
use himae::eval::tasks::*;
use himae::masking::{mask_tensor, sample_mask_seeded, MaskRegime};
use himae::model::{HimaeConfig, HimaeModel};
use himae::nn::InitPolicy;
use himae::tensor::Tensor3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_task(task: PlantedTask, seed: u64) -> (LabeledSet, ProbeSplit) {
    let cfg = TaskConfig {
        subjects: 12,
        windows_per_subject: 8,
        ..Default::default()
    };
    let set = planted_task(task, &cfg, seed).unwrap();
    let split = stratified_subject_split(set.data.subjects(), &set.labels, 0.25, seed).unwrap();
    (set, split)
}

#[test]
fn probing_never_touches_the_encoder() {
    let model = HimaeModel::new(HimaeConfig::small(), &InitPolicy::new(3)).unwrap();
    let before = model.param_checksum();
    let (set, split) = small_task(PlantedTask::FineTransient, 1);
    let r = resolution_sweep(&model, &set, &split, &ProbeConfig::default(), true).unwrap();
    assert_eq!(r.curve.len(), 4);
    assert_eq!(model.param_checksum(), before);
}

#[test]
fn sweep_uses_one_split_for_every_level() {
    let model = HimaeModel::new(HimaeConfig::tiny(), &InitPolicy::new(3)).unwrap();
    let (set, split) = small_task(PlantedTask::CoarseRhythm, 2);
    let a = resolution_sweep(&model, &set, &split, &ProbeConfig::default(), true).unwrap();
    let again = stratified_subject_split(set.data.subjects(), &set.labels, 0.25, 2).unwrap();
    assert_eq!(a.split_hash, again.hash());
    assert_eq!(a.split_hash, split.hash());
}

#[test]
fn independent_labels_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let seeds = 20;
    for _ in 0..seeds {
        let x = Array2::from_shape_fn((200, 5), |_| rng.random_range(-1.0..1.0));
        let y: Vec<bool> = (0..200).map(|_| rng.random_bool(0.5)).collect();
        let (tr, te) = (x.slice(ndarray::s![..100, ..]), x.slice(ndarray::s![100.., ..]));
        let r = train_and_score(tr, &y[..100], te, &y[100..], &ProbeConfig::default()).unwrap();
        total += r.auroc;
    }
    let mean = total / seeds as f64;
    assert!((mean - 0.5).abs() <= 0.05, "mean AUROC {mean}");
}

#[test]
fn few_shot_full_support_equals_standard_probe() {
    let model = HimaeModel::new(HimaeConfig::tiny(), &InitPolicy::new(4)).unwrap();
    let (set, split) = small_task(PlantedTask::FineTransient, 3);
    let feats = level_features(&model, &set.data, 1, true, 16).unwrap();
    let per_class = split.train.len() / 2;
    let curve = few_shot_curve(&feats, &set, &split, &[per_class], 2, &ProbeConfig::default(), 0).unwrap();
    let full = probe_auroc(&feats, &set, &split, &ProbeConfig::default()).unwrap();
    assert_eq!(curve.points[0].mean, full);
    assert!(few_shot_curve(&feats, &set, &split, &[per_class + 1], 1, &ProbeConfig::default(), 0).is_err());
}

#[test]
fn constant_features_give_chance_auroc() {
    let (set, split) = small_task(PlantedTask::FineTransient, 5);
    let feats = Array2::from_elem((set.len(), 3), 1.0);
    let curve = few_shot_curve(&feats, &set, &split, &[1, 4, 16], 2, &ProbeConfig::default(), 1).unwrap();
    assert!(curve.points.iter().all(|p| p.mean == 0.5));
}

#[test]
fn generative_metrics_ignore_observed_predictions() {
    let x = Tensor3::stack_windows(&[(0..100).map(|i| (i as f64 * 0.2).sin()).collect::<Vec<_>>()]).unwrap();
    let m = mask_tensor(&[sample_mask_seeded(20, 5, 0.5, MaskRegime::Random, 3).unwrap()]).unwrap();
    let pred = x.map(|v| 0.8 * v);
    let mut altered = pred.clone();
    for (p, &mv) in altered.data_mut().iter_mut().zip(m.data()) {
        if mv == 0.0 {
            *p += 100.0;
        }
    }
    assert_eq!(score_methods(&pred, &x, &m).unwrap(), score_methods(&altered, &x, &m).unwrap());
}

#[test]
fn benchmark_grid_shape_and_untrained_baseline() {
    let synth = SynthConfig {
        subjects: 4,
        windows_per_subject: 6,
        ..Default::default()
    };
    let data = pretraining_dataset(&synth, 2).unwrap();
    let model = HimaeModel::new(HimaeConfig::tiny(), &InitPolicy::new(2)).unwrap();
    let spec = GenerativeTaskSpec {
        missingness: vec![0.3, 0.6],
        ..Default::default()
    };
    let rows = run_generative_benchmark(&model, &data, &spec, 0).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[2].regime, GenerativeRegime::Interpolation);
    for r in &rows {
        assert!(r.model.r2.unwrap() <= 0.0, "untrained model beats mean fill: {r:?}");
        assert!((r.mean_fill.r2.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn manifest_round_trip() {
    let (set, _) = small_task(PlantedTask::Independent, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.csv");
    set.write_manifest(&path).unwrap();
    let back = LabeledSet::from_manifest(set.data.windows().clone(), &path).unwrap();
    assert_eq!(back.labels, set.labels);
    assert_eq!(back.data.subjects(), set.data.subjects());
}
