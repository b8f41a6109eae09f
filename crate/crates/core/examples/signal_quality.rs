//! Screening a synthetic cohort with the signal-quality index.

use himae::data::sqi::{sqi, SqiConfig};
use himae::data::synth::{generate_cohort, SynthConfig};

fn main() -> himae::Result<()> {
    let synth = SynthConfig {
        subjects: 10,
        windows_per_subject: 10,
        ..Default::default()
    };
    let cfg = SqiConfig::default();
    let (mut clean_ok, mut clean, mut art_ok, mut art) = (0, 0, 0, 0);
    for w in generate_cohort(&synth, 3)? {
        let r = sqi(&w.samples, &cfg)?;
        if w.artifact {
            art += 1;
            art_ok += usize::from(r.accepted);
        } else {
            clean += 1;
            clean_ok += usize::from(r.accepted);
        }
        if w.index == 0 {
            println!(
                "subject {:>2}: gamma {:+.2} coverage {:.3} agreement {:.3} composite {:.3} {}",
                w.subject,
                r.gamma,
                r.coverage,
                r.agreement,
                r.composite,
                r.reject_stage.map_or("accepted", |s| s.name())
            );
        }
    }
    println!("clean accepted {clean_ok}/{clean}, artifact accepted {art_ok}/{art}");
    Ok(())
}
