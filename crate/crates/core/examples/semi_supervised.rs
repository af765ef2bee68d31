//! Label-fraction splits and paired baseline / DCL runs on them.
//!
//! Usage: `cargo run --release --example semi_supervised -- [EPOCHS]`

use fgvc_ssl::dataset::{generate_synthetic, split_semi_supervised, SplitSpec};
use fgvc_ssl::trainer::{train, Mode, TrainConfig};

fn main() -> fgvc_ssl::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let (tr, te) = generate_synthetic(5, 20, 10, 32, 2)?;
    for fraction in [0.1, 0.3, 0.5, 1.0] {
        let spec = SplitSpec { label_fraction: fraction, seed: 0 };
        let kept = split_semi_supervised(&tr, spec)?;
        let mut line = format!("fraction {fraction:.1}: {:>3} labeled", kept.len());
        for mode in [Mode::Baseline, Mode::Dcl] {
            let cfg = TrainConfig {
                epochs,
                lr_decay_epoch: epochs,
                split: spec,
                ..TrainConfig::with_mode(mode)
            };
            let acc = train::<f32>(&cfg, &tr, &te)?.history.last().unwrap().test_top1;
            line.push_str(&format!("  {} {acc:>6.2}", mode.as_str()));
        }
        println!("{line}");
    }
    Ok(())
}
