//! Suppression masks over class activation maps.

use fgvc_ssl::diversification::{apply_suppression, class_peaks, suppression_mask, DbConfig};
use fgvc_ssl::rng::stream;
use fgvc_ssl::tensor::Tensor;

fn main() -> fgvc_ssl::Result<()> {
    let (c, h, w) = (3, 4, 4);
    let cams = Tensor::<f32>::new(
        vec![c, h, w],
        (0..c * h * w).map(|i| ((i * 37) % 17) as f32 / 17.0).collect(),
    )?;
    println!("peak cells per class {:?}", class_peaks(&cams)?);

    let cfg = DbConfig {
        p_peak: 0.5,
        p_patch: 0.5,
        ..DbConfig::default()
    };
    let mask = suppression_mask(&cams, &cfg, &mut stream(4, &[0]))?;
    let out = apply_suppression(&cams, &mask, cfg.alpha)?;
    for ch in 0..c {
        let row: String = (0..h * w)
            .map(|i| if mask.values()[ch * h * w + i] { 'x' } else { '.' })
            .collect();
        println!("class {ch} mask {row}");
    }
    println!("{} of {} cells scaled by {}", mask.count(), c * h * w, cfg.alpha);
    println!("sum before {:.3} after {:.3}", cams.data().iter().sum::<f32>(), out.data().iter().sum::<f32>());
    Ok(())
}
