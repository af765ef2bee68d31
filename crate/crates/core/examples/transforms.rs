//! Rotation, crops, the region confusion shuffle with its location targets,
//! and jigsaw patch extraction on one synthetic image.

use fgvc_ssl::dataset::generate_synthetic;
use fgvc_ssl::rng::stream;
use fgvc_ssl::transforms::{
    apply_rcm, extract_jigsaw_patches, location_targets, rcm_permutation, reassemble, rotate90, Preprocess,
    RotationLabel,
};

fn main() -> fgvc_ssl::Result<()> {
    let (train, _) = generate_synthetic(2, 1, 1, 32, 3)?;
    let img = &train.samples()[0].image;

    for r in RotationLabel::ALL {
        let out = rotate90(img, r)?;
        println!("rotation {:>3} deg -> {}x{}", r.degrees(), out.height(), out.width());
    }

    let pre = Preprocess::for_size(32);
    let view = pre.train(img, &mut stream(1, &[0]))?;
    println!("train view {}x{} (resize {} then crop {})", view.height(), view.width(), pre.resize, pre.crop);

    let perm = rcm_permutation(4, 2, &mut stream(2, &[0]))?;
    let (shuffled, perm) = apply_rcm(&view, &perm)?;
    println!("row permutations {:?}", perm.row_perms());
    println!("max displacement {} (bound < {})", perm.max_displacement(), 2 * perm.range());
    let targets = location_targets(&perm);
    println!("target of cell (0,0): {:?}", targets.at(0, 0));
    assert_eq!(reassemble(&shuffled, &perm)?, view);

    let patches = extract_jigsaw_patches(img, 36, None, 3, 8, &mut stream(3, &[0]))?;
    println!("{} jigsaw patches of side {}", patches.len(), patches.patch_size());
    Ok(())
}
