//! Band-pass filtering and Savitzky-Golay smoothing.

use himae::data::dsp::{savgol_weights, savitzky_golay, Sos};

fn main() -> himae::Result<()> {
    let sos = Sos::butterworth_bandpass(0.5, 8.0, 100.0, 2)?;
    for f in [0.0, 0.1, 0.5, 2.0, 8.0, 20.0, 45.0] {
        let g = sos.response(2.0 * std::f64::consts::PI * f / 100.0).norm();
        println!("{f:>5.1} Hz  gain {g:.4}  ({:+.1} dB)", 20.0 * g.max(1e-300).log10());
    }
    let w = savgol_weights(5, 2)?;
    println!("window-5 order-2 centre weights x35: {:?}", w[2].iter().map(|v| (v * 35.0).round()).collect::<Vec<_>>());
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin() + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
    let y = savitzky_golay(&x, 7, 2)?;
    println!("first smoothed samples {:?}", &y[..4]);
    Ok(())
}
