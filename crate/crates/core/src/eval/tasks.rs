//! Labelled downstream tasks, subject-disjoint probe splits, per-level
//! features and the resolution sweep.

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::probe::{train_and_score, train_and_score_multiclass, ProbeConfig};
use crate::data::{dsp, Dataset};
use crate::error::{config_err, HimaeError, Result};
use crate::model::HimaeModel;
use crate::rng::{purpose, stream};
use crate::tensor::Tensor3;

/// A dataset with one class label per window.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub data: Dataset,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(data: Dataset, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(HimaeError::Shape(format!("{} labels for {} windows", labels.len(), data.len())));
        }
        if classes < 2 || labels.iter().any(|&l| l >= classes) {
            return config_err(format!("labels must lie in 0..{classes} with at least two classes"));
        }
        Ok(Self { data, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows of the task manifest: window id, subject id, label.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["window_id", "subject_id", "label"])?;
        for (i, (&s, &l)) in self.data.subjects().iter().zip(&self.labels).enumerate() {
            w.write_record([i.to_string(), s.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Pairs a window store with a manifest written by
    /// [`LabeledSet::write_manifest`] (or any CSV with those columns).
    pub fn from_manifest(windows: Tensor3, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            window_id: usize,
            subject_id: u32,
            label: usize,
        }
        let mut rows: Vec<Row> = csv::Reader::from_path(path)?.deserialize().collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.window_id);
        if rows.iter().enumerate().any(|(i, r)| r.window_id != i) {
            return Err(HimaeError::Format("manifest window ids must be 0..n without gaps".into()));
        }
        let classes = rows.iter().map(|r| r.label).max().map_or(0, |m| m + 1);
        let subjects = rows.iter().map(|r| r.subject_id).collect();
        let labels = rows.iter().map(|r| r.label).collect();
        Self::new(Dataset::new(windows, subjects)?, labels, classes)
    }
}

/// Synthetic tasks whose label lives at a known time scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantedTask {
    /// A narrow spike (tens of milliseconds) somewhere in positive windows.
    FineTransient,
    /// Alternating long/short beat intervals in positive windows, regular
    /// intervals with the same mean in negative ones. Every beat has the
    /// same shape, so the label is only visible across several beats.
    CoarseRhythm,
    /// Labels drawn independently of the signal.
    Independent,
}

impl PlantedTask {
    pub const ALL: [PlantedTask; 3] = [PlantedTask::FineTransient, PlantedTask::CoarseRhythm, PlantedTask::Independent];

    pub fn name(self) -> &'static str {
        match self {
            PlantedTask::FineTransient => "fine-transient",
            PlantedTask::CoarseRhythm => "coarse-rhythm",
            PlantedTask::Independent => "independent",
        }
    }

    /// Time scale of the planted feature in samples.
    pub fn planted_scale(self, cfg: &TaskConfig) -> usize {
        match self {
            PlantedTask::FineTransient => (4.0 * cfg.spike_width_s * cfg.fs).round() as usize,
            PlantedTask::CoarseRhythm => (2.0 * cfg.mean_interval_s[1] * cfg.fs).round() as usize,
            PlantedTask::Independent => 0,
        }
    }
}

impl std::str::FromStr for PlantedTask {
    type Err = HimaeError;

    fn from_str(s: &str) -> Result<Self> {
        PlantedTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| HimaeError::Config(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub fs: f64,
    pub window_len: usize,
    pub subjects: usize,
    pub windows_per_subject: usize,
    pub mean_interval_s: [f64; 2],
    /// Relative long/short interval offset of the alternating rhythm.
    pub alternation: f64,
    /// Relative beat-to-beat interval jitter.
    pub jitter: f64,
    /// Gaussian sd of the planted spike in seconds.
    pub spike_width_s: f64,
    /// Spike height relative to the beat peak.
    pub spike_amplitude: [f64; 2],
    pub noise_std: f64,
    pub drift_amplitude: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            fs: 100.0,
            window_len: 1000,
            subjects: 40,
            windows_per_subject: 12,
            mean_interval_s: [0.9, 1.2],
            alternation: 0.25,
            jitter: 0.02,
            spike_width_s: 0.015,
            spike_amplitude: [0.6, 1.0],
            noise_std: 0.05,
            drift_amplitude: 0.2,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 4 || self.windows_per_subject < 2 || self.window_len < 2 {
            return config_err("tasks need at least 4 subjects, 2 windows each");
        }
        if !(self.fs > 0.0) || !(0.0..1.0).contains(&self.alternation) || !(self.mean_interval_s[0] > 0.0) {
            return config_err("task fs, alternation or interval range out of range");
        }
        if self.mean_interval_s[0] > self.mean_interval_s[1] || self.spike_amplitude[0] > self.spike_amplitude[1] {
            return config_err("task ranges must be ordered");
        }
        Ok(())
    }
}

/// Single-beat shape: systolic peak plus a smaller delayed wave.
fn beat(t: f64) -> f64 {
    let g = |c: f64, w: f64| (-0.5 * ((t - c) / w).powi(2)).exp();
    g(0.0, 0.06) + 0.4 * g(0.22, 0.08)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// One window of the planted tasks, z-scored.
fn planted_window<R: Rng + ?Sized>(cfg: &TaskConfig, interval: f64, alternating: bool, spike: bool, rng: &mut R) -> Vec<f64> {
    let n = cfg.window_len;
    let fs = cfg.fs;
    let duration = n as f64 / fs;
    let mut onsets = Vec::new();
    let mut t = -rng.random_range(0.0..2.0 * interval);
    let mut long = rng.random_bool(0.5);
    while t < duration + 0.5 {
        onsets.push(t);
        let base = if alternating {
            interval * if long { 1.0 + cfg.alternation } else { 1.0 - cfg.alternation }
        } else {
            interval
        };
        long = !long;
        t += base * (1.0 + cfg.jitter * rng.random_range(-1.0..1.0));
    }
    let drift_f = rng.random_range(0.1..0.3);
    let drift_p = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let ti = i as f64 / fs;
            let mut v: f64 = onsets.iter().filter(|&&o| (ti - o).abs() < 1.0).map(|&o| beat(ti - o)).sum();
            v += cfg.drift_amplitude * (std::f64::consts::TAU * drift_f * ti + drift_p).sin();
            if cfg.noise_std > 0.0 {
                v += noise.sample(rng);
            }
            v
        })
        .collect();
    if spike {
        let centre = rng.random_range(0.05 * duration..0.95 * duration);
        let height = uniform(rng, cfg.spike_amplitude);
        for (i, v) in x.iter_mut().enumerate() {
            let d = (i as f64 / fs - centre) / cfg.spike_width_s;
            *v += height * (-0.5 * d * d).exp();
        }
    }
    dsp::zscore(&x).unwrap_or(x)
}

/// Balanced binary task: every subject contributes both classes.
pub fn planted_task(task: PlantedTask, cfg: &TaskConfig, seed: u64) -> Result<LabeledSet> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.subjects * cfg.windows_per_subject);
    let mut subjects = Vec::with_capacity(rows.capacity());
    let mut labels = Vec::with_capacity(rows.capacity());
    for s in 0..cfg.subjects as u32 {
        let mut srng = stream(seed, purpose::TASK, u64::from(s) << 32 | 0xffff_ffff);
        let interval = uniform(&mut srng, cfg.mean_interval_s);
        let mut subject_labels: Vec<usize> = (0..cfg.windows_per_subject).map(|i| i % 2).collect();
        subject_labels.shuffle(&mut srng);
        for (w, &label) in subject_labels.iter().enumerate() {
            let mut rng = stream(seed, purpose::TASK, u64::from(s) << 32 | w as u64);
            let positive = label == 1;
            // Nuisance factors are drawn independently of the label.
            let (alternating, spike) = match task {
                PlantedTask::FineTransient => (rng.random_bool(0.5), positive),
                PlantedTask::CoarseRhythm => (positive, false),
                PlantedTask::Independent => (rng.random_bool(0.5), rng.random_bool(0.5)),
            };
            rows.push(planted_window(cfg, interval, alternating, spike, &mut rng));
            subjects.push(s);
            labels.push(label);
        }
    }
    LabeledSet::new(Dataset::from_windows(&rows, subjects)?, labels, 2)
}

/// Unlabelled windows from the task generator for encoder pretraining:
/// half the windows from each non-independent task, drawn from subjects
/// outside `0..cfg.subjects` so no probe window is reused.
pub fn unlabeled_corpus(cfg: &TaskConfig, subjects: usize, seed: u64) -> Result<Dataset> {
    let mut c = cfg.clone();
    c.subjects = subjects;
    let mut rows = Vec::new();
    let mut subj = Vec::new();
    for (k, task) in [PlantedTask::FineTransient, PlantedTask::CoarseRhythm].into_iter().enumerate() {
        let set = planted_task(task, &c, crate::rng::derive_seed(seed, purpose::TASK, 1 + k as u64))?;
        let w = set.data.windows();
        for i in (k..set.len()).step_by(2) {
            rows.push(w.item(i).to_vec());
            subj.push(set.data.subjects()[i] + (k * subjects) as u32);
        }
    }
    Dataset::from_windows(&rows, subj)
}

/// Train/test window indices of a probe task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ProbeSplit {
    /// Hex digest identifying the assignment.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for side in [&self.train, &self.test] {
            h.update((side.len() as u64).to_le_bytes());
            for &i in side {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Subject-disjoint split with class proportions on the test side as close
/// as possible to the overall ones. Subjects are visited in shuffled order
/// and sent to the test side while that lowers the distance to the target
/// per-class counts.
pub fn stratified_subject_split(subjects: &[u32], labels: &[usize], test_fraction: f64, seed: u64) -> Result<ProbeSplit> {
    if subjects.len() != labels.len() {
        return Err(HimaeError::Shape("subjects and labels differ in length".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return config_err(format!("test fraction {test_fraction} outside (0, 1)"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut ids: Vec<u32> = subjects.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return config_err("a subject-disjoint split needs at least two subjects");
    }
    ids.shuffle(&mut stream(seed, purpose::SPLIT, 1));
    let count = |s: u32| {
        let mut c = vec![0.0; classes];
        for (&subj, &l) in subjects.iter().zip(labels) {
            if subj == s {
                c[l] += 1.0;
            }
        }
        c
    };
    let mut target = vec![0.0; classes];
    for &l in labels {
        target[l] += test_fraction;
    }
    let dist = |c: &[f64]| c.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut current = vec![0.0; classes];
    let mut test_subjects = Vec::new();
    for &s in &ids {
        if test_subjects.len() + 1 == ids.len() {
            break;
        }
        let c = count(s);
        let next: Vec<f64> = current.iter().zip(&c).map(|(a, b)| a + b).collect();
        if test_subjects.is_empty() || dist(&next) < dist(&current) {
            current = next;
            test_subjects.push(s);
        }
    }
    test_subjects.sort_unstable();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in subjects.iter().enumerate() {
        if test_subjects.binary_search(s).is_ok() {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(ProbeSplit { train, test })
}

/// Frozen features of `level` (1-based), one row per window: the flattened
/// `(width, T)` map, or its time average when `mean_pool` is set.
pub fn level_features(model: &HimaeModel, data: &Dataset, level: usize, mean_pool: bool, batch: usize) -> Result<Array2<f64>> {
    Ok(pyramid_features(model, data, &[level], mean_pool, batch)?.remove(0))
}

/// Features for several levels from one encoder pass per batch.
pub fn pyramid_features(
    model: &HimaeModel,
    data: &Dataset,
    levels: &[usize],
    mean_pool: bool,
    batch: usize,
) -> Result<Vec<Array2<f64>>> {
    let depth = model.config().depth();
    if let Some(&bad) = levels.iter().find(|&&l| l == 0 || l > depth) {
        return config_err(format!("level {bad} outside 1..={depth}"));
    }
    let batch = batch.max(1);
    let mut out: Vec<Option<Array2<f64>>> = vec![None; levels.len()];
    let mut start = 0;
    while start < data.len() {
        let idx: Vec<usize> = (start..(start + batch).min(data.len())).collect();
        let pyramid = model.encode(&data.batch(&idx)?)?;
        for (slot, &level) in out.iter_mut().zip(levels) {
            let t = &pyramid.levels[level - 1];
            let [_, c, len] = t.shape().dims();
            let dim = if mean_pool { c } else { c * len };
            let m = slot.get_or_insert_with(|| Array2::zeros((data.len(), dim)));
            for (k, &i) in idx.iter().enumerate() {
                let item = t.item(k);
                let mut row = m.row_mut(i);
                if mean_pool {
                    for ch in 0..c {
                        row[ch] = item[ch * len..(ch + 1) * len].iter().sum::<f64>() / len as f64;
                    }
                } else {
                    row.iter_mut().zip(item).for_each(|(r, v)| *r = *v);
                }
            }
        }
        start += batch;
    }
    Ok(out.into_iter().map(|m| m.unwrap_or_else(|| Array2::zeros((0, 0)))).collect())
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), idx)
}

/// AUROC of a probe trained on `split.train` and scored on `split.test`.
pub fn probe_auroc(features: &Array2<f64>, set: &LabeledSet, split: &ProbeSplit, cfg: &ProbeConfig) -> Result<f64> {
    let xtr = rows(features, &split.train);
    let xte = rows(features, &split.test);
    let ytr: Vec<usize> = split.train.iter().map(|&i| set.labels[i]).collect();
    let yte: Vec<usize> = split.test.iter().map(|&i| set.labels[i]).collect();
    if set.classes == 2 {
        let b = |v: &[usize]| v.iter().map(|&l| l == 1).collect::<Vec<_>>();
        Ok(train_and_score(xtr.view(), &b(&ytr), xte.view(), &b(&yte), cfg)?.auroc)
    } else {
        train_and_score_multiclass(xtr.view(), &ytr, xte.view(), &yte, set.classes, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `(level, auroc)`, levels ascending.
    pub curve: Vec<(usize, f64)>,
    pub best_level: usize,
    pub split_hash: String,
}

/// One probe per encoder level on the same split.
pub fn resolution_sweep(
    model: &HimaeModel,
    set: &LabeledSet,
    split: &ProbeSplit,
    cfg: &ProbeConfig,
    mean_pool: bool,
) -> Result<SweepResult> {
    let depth = model.config().depth();
    if depth < 2 {
        return config_err("resolution sweep needs at least two levels");
    }
    let levels: Vec<usize> = (1..=depth).collect();
    let feats = pyramid_features(model, &set.data, &levels, mean_pool, 32)?;
    let mut curve = Vec::with_capacity(depth);
    for (level, f) in levels.iter().zip(&feats) {
        curve.push((*level, probe_auroc(f, set, split, cfg)?));
    }
    let best_level = curve
        .iter()
        .fold((0, f64::NEG_INFINITY), |best, &(l, a)| if a > best.1 { (l, a) } else { best })
        .0;
    Ok(SweepResult {
        curve,
        best_level,
        split_hash: split.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPoint {
    pub k: usize,
    pub mean: f64,
    pub sd: f64,
    pub aurocs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotCurve {
    pub points: Vec<FewShotPoint>,
    /// Kendall tau between k and mean AUROC.
    pub trend: f64,
}

/// Kendall's tau-a.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += ((x[i] - x[j]) * (y[i] - y[j])).signum();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Test AUROC when the probe sees only `k` training windows per class,
/// repeated over `repeats` random draws.
pub fn few_shot_curve(
    features: &Array2<f64>,
    set: &LabeledSet,
    split: &ProbeSplit,
    ks: &[usize],
    repeats: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<FewShotCurve> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.classes];
    for &i in &split.train {
        by_class[set.labels[i]].push(i);
    }
    let support = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > support) {
        return config_err(format!("k = {k} outside 1..={support} (smallest class support)"));
    }
    if repeats == 0 {
        return config_err("few-shot needs at least one repeat");
    }
    let mut points = Vec::with_capacity(ks.len());
    for (ki, &k) in ks.iter().enumerate() {
        let mut aurocs = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = stream(seed, purpose::FEW_SHOT, (ki as u64) << 32 | r as u64);
            let mut train = Vec::with_capacity(k * set.classes);
            for members in &by_class {
                train.extend(members.choose_multiple(&mut rng, k).copied());
            }
            train.sort_unstable();
            let sub = ProbeSplit {
                train,
                test: split.test.clone(),
            };
            aurocs.push(probe_auroc(features, set, &sub, cfg)?);
        }
        let mean = dsp::mean(&aurocs);
        let sd = if aurocs.len() > 1 { dsp::std_dev(&aurocs) } else { 0.0 };
        points.push(FewShotPoint { k, mean, sd, aurocs });
    }
    let kx: Vec<f64> = points.iter().map(|p| p.k as f64).collect();
    let my: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let trend = kendall_tau(&kx, &my);
    Ok(FewShotCurve { points, trend })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_stratified() {
        let cfg = TaskConfig {
            subjects: 20,
            windows_per_subject: 6,
            ..Default::default()
        };
        let set = planted_task(PlantedTask::FineTransient, &cfg, 1).unwrap();
        let s = stratified_subject_split(set.data.subjects(), &set.labels, 0.2, 1).unwrap();
        assert_eq!(s.train.len() + s.test.len(), set.len());
        let subj = set.data.subjects();
        for &i in &s.test {
            assert!(s.train.iter().all(|&j| subj[j] != subj[i]));
        }
        let pos = s.test.iter().filter(|&&i| set.labels[i] == 1).count();
        assert_eq!(pos * 2, s.test.len());
        assert_eq!(s.test.len(), 24);
    }

    #[test]
    fn kendall_extremes() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[0.3, 0.2, 0.1]), -1.0);
    }

    #[test]
    fn task_names_round_trip() {
        for t in PlantedTask::ALL {
            assert_eq!(t.name().parse::<PlantedTask>().unwrap(), t);
        }
    }
}
