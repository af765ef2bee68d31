//! Generates the synthetic fine-grained dataset, writes it to disk as a
//! pixmap tree with a manifest and reads it back.
//!
//! Usage: `cargo run --example synthetic_data -- [OUT_DIR]`

use std::path::PathBuf;

use fgvc_ssl::dataset::{apply_manifest, generate_synthetic, write_dataset, write_manifest, SplitTag, MANIFEST_FILE};

fn main() -> fgvc_ssl::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fgvc-ssl-synthetic"));
    let (train, test) = generate_synthetic(5, 10, 4, 32, 7)?;
    println!("train {} / test {} samples, {} classes", train.len(), test.len(), train.num_classes());
    println!("per-class counts {:?}", train.class_counts());
    for s in train.samples().iter().take(3) {
        let b = s.glyph_box.unwrap();
        println!("id {:>3} label {} glyph rows {}..{} cols {}..{}", s.id, s.label, b.row0, b.row1, b.col0, b.col1);
    }

    let mut entries = write_dataset(&train, &out)?;
    entries.extend(write_dataset(&test, &out)?);
    write_manifest(&entries, &out.join(MANIFEST_FILE))?;
    let back = apply_manifest(&out, SplitTag::Train)?;
    // pixels come back quantized to 8 bits; ids, labels and boxes exactly
    for (a, b) in back.samples().iter().zip(train.samples()) {
        assert_eq!((a.id, a.label, a.glyph_box), (b.id, b.label, b.glyph_box));
    }
    println!("wrote and reloaded {}", out.display());
    Ok(())
}
