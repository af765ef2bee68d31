//! Cross entropy against its top-k variant, the contrastive loss against a
//! memory bank, and the deconstruction losses.

use fgvc_ssl::losses::{
    cross_entropy_value, dcl_adv_loss, dcl_cls_loss, dcl_loc_loss, gce_value, pirl_loss, LocMode, MemoryBank,
};
use fgvc_ssl::rng::stream;
use fgvc_ssl::tensor::{Graph, Tensor};
use fgvc_ssl::transforms::{location_targets, rcm_permutation};

fn main() -> fgvc_ssl::Result<()> {
    let scores = [2.0, 0.5, 1.8, -1.0, 0.3];
    println!("CE            {:.4}", cross_entropy_value(&scores, 0)?);
    for k in 1..5 {
        println!("GCE k={k}       {:.4}", gce_value(&scores, 0, k)?);
    }

    let ids: Vec<u64> = (0..32).collect();
    let mut bank = MemoryBank::new(&ids, 8, 0.5, 0)?;
    let negs = bank.negatives::<f64>(&[0, 1], 16, &mut stream(0, &[1]))?;
    let mut g = Graph::<f64>::new();
    let v = g.param(Tensor::new(vec![4, 8], (0..32).map(|i| ((i * 7) % 11) as f64 - 5.0).collect())?);
    let v = g.l2_normalize(v)?;
    let vi = g.slice_leading(v, 0, 2)?;
    let vt = g.slice_leading(v, 2, 4)?;
    let l = pirl_loss(&mut g, vi, vt, &[0, 1], &negs, 0.07)?;
    println!("PIRL          {:.4} with {} negatives", g.value(l).item()?, negs.len());
    bank.update(0, &g.value(vi).data()[..8])?;

    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::new(vec![2, 3], vec![1.0, 0.2, -0.3, 0.1, 0.9, 0.0])?);
    let d = g.constant(Tensor::new(vec![2, 2], vec![2.0, -1.0, -1.0, 1.5])?);
    let (si, sp) = (g.slice_leading(s, 0, 1)?, g.slice_leading(s, 1, 2)?);
    let (di, dp) = (g.slice_leading(d, 0, 1)?, g.slice_leading(d, 1, 2)?);
    let cls = dcl_cls_loss(&mut g, si, sp, &[0])?;
    let adv = dcl_adv_loss(&mut g, di, dp)?;
    let targets = vec![location_targets(&rcm_permutation(3, 1, &mut stream(5, &[0]))?)];
    let zeros = g.constant(Tensor::zeros(vec![1, 2, 3, 3]));
    let loc = dcl_loc_loss(&mut g, zeros, zeros, &targets, LocMode::Mse)?;
    println!(
        "DCL cls {:.4} adv {:.4} loc {:.4}",
        g.value(cls).item()?,
        g.value(adv).item()?,
        g.value(loc).item()?
    );
    Ok(())
}
