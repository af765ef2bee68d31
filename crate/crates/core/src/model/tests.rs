use super::*;
use crate::rng::stream;
use rand::Rng as _;
use tempfile::tempdir;

fn images(n: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = stream(seed, &[42]);
    let data = (0..n * 3 * size * size).map(|_| rng.random::<f32>()).collect();
    Tensor::new(vec![n, 3, size, size], data).unwrap()
}

#[test]
fn backbone_shapes_and_determinism() {
    let m = Model::<f32>::new(ModelSpec::classifier(5), 1).unwrap();
    let x = images(2, 32, 0);
    let f = m.backbone_forward(&x).unwrap();
    assert_eq!(f.shape(), &[2, 64, 8, 8]);

    let mut twin = x.data()[..3 * 32 * 32].to_vec();
    twin.extend_from_slice(&x.data()[..3 * 32 * 32]);
    let f = m.backbone_forward(&Tensor::new(vec![2, 3, 32, 32], twin).unwrap()).unwrap();
    let half = f.len() / 2;
    assert_eq!(f.data()[..half], f.data()[half..]);

    assert!(m.backbone_forward(&images(1, 30, 0)).is_err());
}

#[test]
fn zero_final_conv_gives_zero_features() {
    let mut m = Model::<f32>::new(ModelSpec::classifier(3), 2).unwrap();
    m.param_mut("conv3.w").unwrap().data_mut().fill(0.0);
    let f = m.backbone_forward(&images(2, 16, 1)).unwrap();
    assert!(f.data().iter().all(|&v| v == 0.0));
}

#[test]
fn init_is_seeded_per_name() {
    let a = Model::<f64>::new(ModelSpec::classifier(4), 9).unwrap();
    let b = Model::<f64>::new(ModelSpec::classifier(4).with_rotation().with_dcl(4, false), 9).unwrap();
    let c = Model::<f64>::new(ModelSpec::classifier(4), 10).unwrap();
    for p in a.params().iter() {
        assert_eq!(b.param(&p.name).unwrap(), &p.value);
    }
    assert_ne!(a.param("conv1.w"), c.param("conv1.w"));
    assert!(a.param("conv2.b").unwrap().data().iter().all(|&v| v == 0.0));
    // fan-in scaling: conv1 has fan-in 27
    let w = a.param("conv1.w").unwrap().data();
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var - 2.0 / 27.0).abs() < 0.03, "variance {var}");
}

#[test]
fn pirl_embeddings() {
    let m = Model::<f64>::new(ModelSpec::classifier(3).with_pirl(4), 3).unwrap();
    let x = images(2, 16, 2).cast::<f64>();
    let p = images(8, 8, 3).cast::<f64>();
    let (vi, vt) = m.pirl_embed(&x, &p).unwrap();
    assert_eq!(vi.shape(), &[2, EMBED_DIM]);
    assert_eq!(vt.shape(), &[2, EMBED_DIM]);
    for row in vi.data().chunks(EMBED_DIM).chain(vt.data().chunks(EMBED_DIM)) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    // swap the first two patches of image 0
    let plen = 3 * 8 * 8;
    let mut swapped = p.data().to_vec();
    for i in 0..plen {
        swapped.swap(i, plen + i);
    }
    let (_, vt2) = m.pirl_embed(&x, &Tensor::new(p.shape().to_vec(), swapped).unwrap()).unwrap();
    assert_ne!(vt.data()[..EMBED_DIM], vt2.data()[..EMBED_DIM]);
    assert_eq!(vt.data()[EMBED_DIM..], vt2.data()[EMBED_DIM..]);

    assert!(m.pirl_embed(&x, &images(7, 8, 3).cast()).is_err());
}

#[test]
fn cam_variant() {
    let mut m = Model::<f64>::new(ModelSpec::classifier(20).with_cam(), 4).unwrap();
    let x = images(2, 32, 5).cast::<f64>();
    let a = m.cam_forward(&x).unwrap();
    assert_eq!(a.shape(), &[2, 20, 8, 8]);
    let scores = m.predict(&x).unwrap();
    for (i, plane) in a.data().chunks(64).enumerate() {
        let mean = plane.iter().sum::<f64>() / 64.0;
        assert!((scores.data()[i] - mean).abs() < 1e-6);
    }
    m.param_mut("cam.w").unwrap().data_mut().fill(0.0);
    assert!(m.cam_forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));

    let plain = Model::<f64>::new(ModelSpec::classifier(20), 4).unwrap();
    assert!(plain.cam_forward(&x).is_err());
}

#[test]
fn location_head_is_bounded() {
    let m = Model::<f64>::new(ModelSpec::classifier(3).with_dcl(4, false), 5).unwrap();
    let mut g = Graph::new();
    let s = m.session(&mut g, false);
    let x = g.constant(images(3, 16, 6).cast());
    let f = s.features(&mut g, x).unwrap();
    let loc = s.location(&mut g, f).unwrap();
    assert_eq!(g.shape(loc), &[3, 2, 4, 4]);
    assert!(g.value(loc).data().iter().all(|&v| v > -1.0 && v < 1.0));
}

#[test]
fn auxiliary_gradients_reach_shared_trunk() {
    let mut m = Model::<f64>::new(ModelSpec::classifier(3).with_rotation(), 6).unwrap();
    let x = images(2, 16, 7).cast::<f64>();
    let trunk_grad = |m: &mut Model<f64>, head: &str| {
        m.params_mut().zero_grad();
        let mut g = Graph::new();
        let s = m.session(&mut g, true);
        let xv = g.constant(x.clone());
        let f = s.features(&mut g, xv).unwrap();
        let y = if head == "rot" {
            s.rotation_scores(&mut g, f).unwrap()
        } else {
            s.class_scores(&mut g, f).unwrap()
        };
        let l = g.sum(y, None).unwrap();
        g.backward(l).unwrap();
        let bound = s.bound().clone();
        m.accumulate_grads(&g, &bound);
        m.params().by_name("conv1.w").unwrap().grad.clone()
    };
    let from_rot = trunk_grad(&mut m, "rot");
    assert!(from_rot.iter().any(|&v| v != 0.0));
    assert!(m.params().by_name("cls.w").unwrap().grad.iter().all(|&v| v == 0.0));
    let from_cls = trunk_grad(&mut m, "cls");
    assert_ne!(from_rot, from_cls);
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempdir().unwrap();
    let spec = ModelSpec::classifier(6).with_dcl(3, true);
    let m = Model::<f32>::new(spec, 7).unwrap();
    let info = CheckpointInfo {
        epoch: 12,
        config_hash: 0xfeed,
    };
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&m, &a, info).unwrap();
    let (back, got) = load_checkpoint::<f32>(&a).unwrap();
    assert_eq!(got, info);
    assert_eq!(back.spec(), &spec);
    for p in m.params().iter() {
        assert_eq!(back.param(&p.name).unwrap(), &p.value);
    }
    save_checkpoint(&back, &b, info).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    for s in [ModelSpec::classifier(4).with_cam(), ModelSpec::classifier(3).with_pirl(9).with_rotation()] {
        let m = Model::<f32>::new(s, 1).unwrap();
        save_checkpoint(&m, &a, info).unwrap();
        assert_eq!(load_checkpoint::<f32>(&a).unwrap().0.spec(), &s);
    }
}

#[test]
fn checkpoint_errors() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::<f32>::new(ModelSpec::classifier(6), 7).unwrap();
    let info = CheckpointInfo {
        epoch: 1,
        config_hash: 3,
    };
    save_checkpoint(&m, &path, info).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
    assert!(err.contains("truncated payload"), "{err}");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(load_checkpoint::<f32>(&path).unwrap_err().to_string().contains("bad magic"));

    std::fs::write(&path, &bytes).unwrap();
    let mut other = Model::<f32>::new(ModelSpec::classifier(5), 7).unwrap();
    let err = other.load_weights(&path, None).unwrap_err().to_string();
    assert!(err.contains("cls.w"), "{err}");

    let mut same = Model::<f32>::new(ModelSpec::classifier(6), 8).unwrap();
    assert_eq!(same.load_weights(&path, Some(99)).unwrap(), info);
    assert_eq!(same.param("conv2.w"), m.param("conv2.w"));
}
