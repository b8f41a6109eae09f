//! Shared oracles for the integration tests.
#![allow(dead_code)]

use himae::autodiff::{Mode, Tape, Var};
use himae::masking::{mask_tensor, sample_mask_seeded, MaskRegime};
use himae::model::{HimaeConfig, HimaeModel};
use himae::nn::InitPolicy;
use himae::tensor::{Shape3, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn random_tensor(shape: Shape3, rng: &mut ChaCha8Rng) -> Tensor3 {
    Tensor3::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
}

/// Scalarizes `build`'s output with a fixed random projection and compares
/// tape gradients of every input with central differences at `coords`
/// random coordinates.
pub fn fd_check(
    inputs: &[Tensor3],
    build: &dyn Fn(&mut Tape, &[Var]) -> himae::Result<Var>,
    coords: usize,
    seed: u64,
) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape()
    };
    let projection = random_tensor(probe_shape, &mut rng);
    let eval = |inputs: &[Tensor3], with_grad: bool| -> (f64, Vec<Tensor3>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let r = tape.leaf(projection.clone());
        let prod = tape.mul(out, r).unwrap();
        let s = tape.sum(prod);
        let value = tape.value(s).data()[0];
        if !with_grad {
            return (value, Vec::new());
        }
        let grads = tape.backward(s).unwrap();
        (value, vars.iter().map(|&v| grads.get(v)).collect())
    };
    let (_, grads) = eval(inputs, true);
    let mut max_rel: f64 = 0.0;
    for _ in 0..coords {
        let which = rng.random_range(0..inputs.len());
        let idx = rng.random_range(0..inputs[which].len());
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[idx] += FD_STEP;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[idx] -= FD_STEP;
        let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(grads[which].data()[idx], numeric));
    }
    FdReport { checked: coords, max_rel }
}

/// Central differences of the train-mode masked MSE of HiMAE-tiny on a
/// batch of two windows against `loss_and_grads`.
pub fn tiny_model_fd(coords: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = HimaeModel::new(HimaeConfig::tiny(), &InitPolicy::new(seed)).unwrap();
    let cfg = model.config().clone();
    let x = Tensor3::from_vec(
        Shape3::new(2, 1, cfg.input_len),
        (0..2 * cfg.input_len)
            .map(|i| (i as f64 * 0.063).sin() + 0.3 * (i as f64 * 0.21).cos() + rng.random_range(-0.1..0.1))
            .collect(),
    )
    .unwrap();
    let masks: Vec<_> = (0..2)
        .map(|b| sample_mask_seeded(cfg.num_patches(), cfg.patch_len, 0.8, MaskRegime::Random, seed + b).unwrap())
        .collect();
    let mask = mask_tensor(&masks).unwrap();
    let (_, grads) = model.clone().loss_and_grads(&x, &mask, Mode::Train).unwrap();
    let loss_at = |m: &HimaeModel| m.clone().loss_and_grads(&x, &mask, Mode::Train).unwrap().0;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.len()).collect();
    let mut max_rel: f64 = 0.0;
    for c in 0..coords {
        // Cycle through tensors so every parameter is covered.
        let which = c % sizes.len();
        let idx = rng.random_range(0..sizes[which]);
        let shifted = |delta: f64| {
            let mut m = model.clone();
            m.params_mut().values_mut().nth(which).unwrap().data_mut()[idx] += delta;
            loss_at(&m)
        };
        let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(grads[which].data()[idx], numeric));
    }
    FdReport { checked: coords, max_rel }
}

/// `(#concordant + 0.5 #ties) / #pairs`.
pub fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}
