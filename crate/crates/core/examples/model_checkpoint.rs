//! Builds models with different heads, runs a forward pass and round-trips
//! a checkpoint.

use fgvc_ssl::dataset::{generate_synthetic, Image};
use fgvc_ssl::model::{load_checkpoint, save_checkpoint, CheckpointInfo, Model, ModelSpec};

fn main() -> fgvc_ssl::Result<()> {
    let (train, _) = generate_synthetic(10, 1, 1, 32, 0)?;
    let images: Vec<&Image> = train.samples().iter().take(4).map(|s| &s.image).collect();
    let batch = Image::batch::<f32>(&images)?;

    for spec in [
        ModelSpec::classifier(10),
        ModelSpec::classifier(10).with_rotation(),
        ModelSpec::classifier(10).with_dcl(4, false),
        ModelSpec::classifier(10).with_cam(),
    ] {
        let m = Model::<f32>::new(spec, 0)?;
        let n: usize = m.params().iter().map(|p| p.value.len()).sum();
        println!("{:<60} {n:>7} params, scores {:?}", format!("{spec:?}"), m.predict(&batch)?.shape());
    }

    let m = Model::<f32>::new(ModelSpec::classifier(10).with_dcl(4, false), 1)?;
    let path = std::env::temp_dir().join("fgvc-ssl-example.ckpt");
    save_checkpoint(&m, &path, CheckpointInfo { epoch: 3, config_hash: 42 })?;
    let (back, info) = load_checkpoint::<f32>(&path)?;
    assert_eq!(back.predict(&batch)?, m.predict(&batch)?);
    println!("checkpoint epoch {} hash {} restored {} tensors", info.epoch, info.config_hash, back.params().len());
    Ok(())
}
