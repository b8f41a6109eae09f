//! A tiny variant ablation through the grid driver.

use himae::eval::ablate::{median, run_grid, GridAxis};
use himae::RunConfig;

fn main() -> himae::Result<()> {
    let mut base = RunConfig::default();
    base.apply_overrides(&[
        "preset=tiny",
        "steps=40",
        "batch_size=16",
        "subjects=12",
        "windows_per_subject=12",
    ])?;
    let axes: Vec<GridAxis> = vec!["variant=full,no-skip,plain-cnn".parse()?, "patch_len=5,7".parse()?];
    let results = run_grid(&base, &axes, &[0, 1], 1, &|_| {})?;
    for cell in 0..6 {
        let rs: Vec<_> = results.iter().filter(|r| r.cell == cell).collect();
        let settings: Vec<String> = rs[0].settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match &rs[0].skipped {
            Some(why) => println!("{:<30} skipped: {why}", settings.join(" ")),
            None => {
                let vals: Vec<f64> = rs.iter().filter_map(|r| r.val_mse).collect();
                println!("{:<30} median val MSE {:.5}", settings.join(" "), median(&vals).unwrap_or(f64::NAN));
            }
        }
    }
    Ok(())
}
