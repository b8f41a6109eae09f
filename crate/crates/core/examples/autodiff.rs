//! Recording a small graph on the tape and checking one gradient entry
//! against a central difference.

use himae::autodiff::{ConvSpec, Tape};
use himae::tensor::{Shape3, Tensor3};

fn loss(x: &Tensor3, w: &Tensor3) -> himae::Result<(f64, Tensor3)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let y = tape.conv1d(xv, wv, None, ConvSpec::new(1, 2, 3, 2, 1))?;
    let y = tape.gelu(y);
    let s = tape.sum(y);
    let value = tape.value(s).data()[0];
    let grads = tape.backward(s)?;
    Ok((value, grads.get(wv)))
}

fn main() -> himae::Result<()> {
    let x = Tensor3::from_vec(Shape3::new(1, 1, 8), (0..8).map(|i| (i as f64 * 0.7).sin()).collect())?;
    let w = Tensor3::from_vec(Shape3::new(2, 1, 3), vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6])?;
    let (value, grad) = loss(&x, &w)?;
    let h = 1e-5;
    let mut plus = w.clone();
    plus.data_mut()[2] += h;
    let mut minus = w.clone();
    minus.data_mut()[2] -= h;
    let fd = (loss(&x, &plus)?.0 - loss(&x, &minus)?.0) / (2.0 * h);
    println!("loss {value:.6}");
    println!("dL/dw[2]: analytic {:.9}, central difference {fd:.9}", grad.data()[2]);
    Ok(())
}
