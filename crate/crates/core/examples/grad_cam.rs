//! Trains a DCL model briefly, exports Grad-CAM heatmaps and overlays for a
//! few test images and reports how often the peak hits the glyph.
//!
//! Usage: `cargo run --release --example grad_cam -- [OUT_DIR] [EPOCHS]`

use std::path::PathBuf;

use fgvc_ssl::dataset::generate_synthetic;
use fgvc_ssl::explain::{export_heatmap, grad_cam, localization_rate};
use fgvc_ssl::trainer::{train, Mode, TrainConfig};
use fgvc_ssl::transforms::Preprocess;

fn main() -> fgvc_ssl::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fgvc-ssl-cam"));
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let (tr, te) = generate_synthetic(10, 60, 20, 32, 4)?;
    let cfg = TrainConfig {
        epochs,
        lr_decay_epoch: epochs,
        ..TrainConfig::with_mode(Mode::Dcl)
    };
    let model = train::<f32>(&cfg, &tr, &te)?.model;

    std::fs::create_dir_all(&out)?;
    let pre = Preprocess::for_size(32);
    for s in te.samples().iter().take(5) {
        let view = pre.eval(&s.image)?;
        let hm = grad_cam(&model, &view, s.label)?;
        let stem = out.join(format!("{:04}", s.id));
        export_heatmap(&hm, &view, &stem.with_extension("pgm"), &stem.with_extension("ppm"))?;
    }
    println!("heatmaps in {}", out.display());
    println!("localization {:.1}%", localization_rate(&model, &te)?);
    Ok(())
}
