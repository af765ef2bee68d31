//! Trains every mode for a few epochs on a small synthetic set and prints
//! the final accuracies.
//!
//! Usage: `cargo run --release --example train_modes -- [EPOCHS]`

use fgvc_ssl::dataset::generate_synthetic;
use fgvc_ssl::trainer::{train, Mode, TrainConfig};

fn main() -> fgvc_ssl::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let (tr, te) = generate_synthetic(6, 20, 10, 32, 1)?;
    for mode in Mode::ALL {
        let cfg = TrainConfig {
            epochs,
            lr_decay_epoch: epochs / 2,
            pirl: fgvc_ssl::trainer::PirlConfig {
                negatives: 64,
                ..Default::default()
            },
            gce: fgvc_ssl::losses::GceConfig { k: 3, warmup_epochs: epochs / 2 },
            ..TrainConfig::with_mode(mode)
        };
        let out = train::<f32>(&cfg, &tr, &te)?;
        let last = out.history.last().unwrap();
        println!(
            "{:<9} loss {:.3} (ssl {:.3})  top1 {:>6.2}  top2 {:>6.2}",
            mode.as_str(),
            last.train_total_loss,
            last.train_ssl_loss,
            last.test_top1,
            last.test_top2
        );
    }
    Ok(())
}
