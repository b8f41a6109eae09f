mod common;

use common::{fd_check, random_tensor, tiny_model_fd, FD_TOLERANCE};
use himae::autodiff::{BatchNormConfig, BatchNormStats, ConvSpec, Mode, Tape, Var};
use himae::tensor::{Shape3, Tensor3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensors(shapes: &[Shape3], seed: u64) -> Vec<Tensor3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes.iter().map(|&s| random_tensor(s, &mut rng)).collect()
}

fn assert_fd(inputs: &[Tensor3], build: &dyn Fn(&mut Tape, &[Var]) -> himae::Result<Var>) {
    let r = fd_check(inputs, build, 120, 7);
    assert!(r.max_rel <= FD_TOLERANCE, "max relative error {:e}", r.max_rel);
}

#[test]
fn conv1d_strided_with_bias() {
    let spec = ConvSpec::new(3, 4, 5, 2, 2);
    let inputs = tensors(&[Shape3::new(2, 3, 17), Shape3::new(4, 3, 5), Shape3::new(1, 1, 4)], 1);
    assert_fd(&inputs, &|t, v| t.conv1d(v[0], v[1], Some(v[2]), spec));
}

#[test]
fn conv1d_even_kernel_no_padding() {
    let spec = ConvSpec::new(2, 3, 4, 1, 0);
    let inputs = tensors(&[Shape3::new(2, 2, 11), Shape3::new(3, 2, 4)], 2);
    assert_fd(&inputs, &|t, v| t.conv1d(v[0], v[1], None, spec));
}

#[test]
fn conv_transpose1d_with_output_padding() {
    let spec = ConvSpec::new(3, 2, 5, 2, 2).with_output_padding(1);
    let inputs = tensors(&[Shape3::new(2, 3, 9), Shape3::new(3, 2, 5), Shape3::new(1, 1, 2)], 3);
    assert_fd(&inputs, &|t, v| t.conv_transpose1d(v[0], v[1], Some(v[2]), spec));
}

#[test]
fn batch_norm_train_mode() {
    let inputs = tensors(&[Shape3::new(3, 4, 6), Shape3::new(1, 1, 4), Shape3::new(1, 1, 4)], 4);
    assert_fd(&inputs, &|t, v| {
        let mut stats = BatchNormStats::new(4);
        t.batch_norm1d(v[0], v[1], v[2], &mut stats, Mode::Train, BatchNormConfig::default())
    });
}

#[test]
fn batch_norm_eval_mode() {
    let inputs = tensors(&[Shape3::new(2, 3, 5), Shape3::new(1, 1, 3), Shape3::new(1, 1, 3)], 5);
    assert_fd(&inputs, &|t, v| {
        let mut stats = BatchNormStats {
            running_mean: vec![0.1, -0.2, 0.3],
            running_var: vec![0.5, 1.5, 2.0],
        };
        t.batch_norm1d(v[0], v[1], v[2], &mut stats, Mode::Eval, BatchNormConfig::default())
    });
}

#[test]
fn elementwise_ops() {
    let inputs = tensors(&[Shape3::new(2, 3, 7), Shape3::new(2, 3, 7)], 6);
    assert_fd(&inputs, &|t, v| Ok(t.gelu(v[0])));
    assert_fd(&inputs, &|t, v| Ok(t.tanh(v[0])));
    assert_fd(&inputs, &|t, v| t.add(v[0], v[1]));
    assert_fd(&inputs, &|t, v| t.mul(v[0], v[1]));
}

#[test]
fn concat_and_crop() {
    let inputs = tensors(&[Shape3::new(2, 3, 8), Shape3::new(2, 2, 8)], 7);
    assert_fd(&inputs, &|t, v| t.concat_channels(v[0], v[1]));
    assert_fd(&inputs, &|t, v| t.crop_time(v[0], 5));
}

#[test]
fn masked_mse_loss() {
    let inputs = tensors(&[Shape3::new(2, 2, 10)], 8);
    let target = tensors(&[Shape3::new(2, 2, 10)], 9).remove(0);
    let mask = Tensor3::from_vec(Shape3::new(2, 1, 10), (0..20).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
    assert_fd(&inputs, &|t, v| t.masked_mse(v[0], &target, &mask));
}

#[test]
fn full_tiny_model_masked_loss() {
    let r = tiny_model_fd(100, 3);
    assert!(r.max_rel <= FD_TOLERANCE, "max relative error {:e}", r.max_rel);
}
