//! Self-check suites run by `fgvc-ssl verify`.
//!
//! Each check reports the measured quantity next to the tolerance it was
//! held to.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::dataset::Image;
use crate::diversification::{apply_suppression, suppression_mask, DbConfig};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, cross_entropy_value, dcl_adv_loss, dcl_cls_loss, dcl_loc_loss, gce_loss, gce_value,
    pirl_loss, rotation_total, LocMode, MemoryBank, Negatives,
};
use crate::model::{Model, ModelSpec};
use crate::rng::stream;
use crate::tensor::{grad_check, Graph, ParamStore, Scalar, Tensor, Var};
use crate::transforms::{apply_rcm, location_targets, rcm_permutation, reassemble, JigsawPermutation};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const GCE_TOL: f64 = 1e-12;
pub const BANK_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-6;
pub const PERM_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Perm,
    Loss,
    All,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Suite::Grad),
            "perm" => Ok(Suite::Perm),
            "loss" => Ok(Suite::Loss),
            "all" => Ok(Suite::All),
            _ => Err(Error::InvalidArgument(format!("unknown suite {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    /// Measured error (or failure count).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn below(suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }

    fn at_most(suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            passed: value <= tolerance,
            ..Self::below(suite, name, value, tolerance)
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<5} {:<28} value {:.3e} tol {:.1e}",
            if self.passed { "ok" } else { "FAIL" },
            self.suite,
            self.name,
            self.value,
            self.tolerance
        )
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Grad => grad_checks()?,
        Suite::Perm => perm_checks()?,
        Suite::Loss => loss_checks()?,
        Suite::All => {
            let mut v = grad_checks()?;
            v.extend(perm_checks()?);
            v.extend(loss_checks()?);
            v
        }
    })
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, &[0x7e57]);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub type OpUnderTest = fn(&mut Graph<f64>, Var) -> crate::Result<Var>;

/// Every differentiable op, each reduced to a scalar through a nonlinear
/// readout so that constant gradients cannot hide mistakes.
pub fn op_cases() -> Vec<(&'static str, Vec<usize>, OpUnderTest)> {
    fn readout(g: &mut Graph<f64>, y: Var) -> crate::Result<Var> {
        let w = g.constant(random(g.shape(y), 999));
        let yw = g.mul(y, w)?;
        let sq = g.mul(yw, y)?;
        g.sum(sq, None)
    }
    vec![
        ("add", vec![3, 4], |g, x| {
            let c = g.constant(random(&[3, 4], 1));
            let y = g.add(x, c)?;
            readout(g, y)
        }),
        ("sub", vec![5], |g, x| {
            let c = g.constant(Tensor::scalar(0.3));
            let y = g.sub(c, x)?;
            readout(g, y)
        }),
        ("mul", vec![2, 3], |g, x| {
            let y = g.mul(x, x)?;
            readout(g, y)
        }),
        ("scale", vec![4], |g, x| {
            let y = g.scale(x, -1.7)?;
            readout(g, y)
        }),
        ("relu", vec![7], |g, x| {
            let y = g.relu(x)?;
            readout(g, y)
        }),
        ("tanh", vec![2, 2, 3], |g, x| {
            let y = g.tanh(x)?;
            readout(g, y)
        }),
        ("exp", vec![6], |g, x| {
            let y = g.exp(x)?;
            readout(g, y)
        }),
        ("log", vec![6], |g, x| {
            let y = g.exp(x)?;
            let y = g.add_scalar(y, 0.5)?;
            let y = g.log(y)?;
            readout(g, y)
        }),
        ("neg", vec![3], |g, x| {
            let y = g.neg(x)?;
            readout(g, y)
        }),
        ("softplus", vec![8], |g, x| {
            let y = g.scale(x, 4.0)?;
            let y = g.softplus(y)?;
            readout(g, y)
        }),
        ("matmul", vec![3, 4], |g, x| {
            let b = g.constant(random(&[4, 2], 5));
            let y = g.matmul(x, b)?;
            readout(g, y)
        }),
        ("transpose", vec![3, 2], |g, x| {
            let y = g.transpose(x)?;
            readout(g, y)
        }),
        ("conv2d", vec![1, 2, 6, 6], |g, x| {
            let k = g.constant(random(&[3, 2, 3, 3], 6));
            let y = g.conv2d(x, k, 1, 1)?;
            readout(g, y)
        }),
        ("bias_add", vec![3], |g, b| {
            let x = g.constant(random(&[2, 3, 2, 2], 7));
            let y = g.bias_add(x, b)?;
            readout(g, y)
        }),
        ("sum_axis", vec![3, 4, 2], |g, x| {
            let y = g.sum(x, Some(1))?;
            readout(g, y)
        }),
        ("mean_axis", vec![3, 4], |g, x| {
            let y = g.mean(x, Some(0))?;
            readout(g, y)
        }),
        ("max_axis", vec![4, 5], |g, x| {
            let y = g.max(x, 1)?;
            readout(g, y)
        }),
        ("softmax", vec![3, 5], |g, x| {
            let y = g.softmax(x, 1)?;
            readout(g, y)
        }),
        ("log_softmax", vec![4, 3], |g, x| {
            let y = g.log_softmax(x, 0)?;
            readout(g, y)
        }),
        ("global_avg_pool", vec![2, 3, 4, 4], |g, x| {
            let y = g.global_avg_pool(x)?;
            readout(g, y)
        }),
        ("max_pool2", vec![1, 2, 4, 6], |g, x| {
            let y = g.max_pool2(x)?;
            readout(g, y)
        }),
        ("adaptive_avg_pool", vec![1, 2, 7, 5], |g, x| {
            let y = g.adaptive_avg_pool(x, 3, 2)?;
            readout(g, y)
        }),
        ("reshape", vec![2, 6], |g, x| {
            let y = g.reshape(x, &[3, 4])?;
            readout(g, y)
        }),
        ("concat", vec![2, 3], |g, x| {
            let c = g.constant(random(&[2, 2], 8));
            let y = g.concat(&[x, c, x], 1)?;
            readout(g, y)
        }),
        ("gather", vec![3, 4], |g, x| {
            let y = g.gather(x, &[0, 3, 1, 1, 2, 0])?;
            readout(g, y)
        }),
        ("slice_leading", vec![4, 3], |g, x| {
            let y = g.slice_leading(x, 1, 3)?;
            readout(g, y)
        }),
        ("l2_normalize", vec![3, 4], |g, x| {
            let y = g.l2_normalize(x)?;
            readout(g, y)
        }),
    ]
}

type LossUnderTest = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>;

fn loss_cases() -> Result<Vec<(&'static str, Vec<usize>, LossUnderTest)>> {
    let k = 3;
    let shuffled: Vec<_> = (0..2)
        .map(|s| rcm_permutation(k, 1, &mut stream(s + 4, &[5])).map(|p| location_targets(&p)))
        .collect::<Result<_>>()?;
    let bank = MemoryBank::new(&(0..12).collect::<Vec<_>>(), 6, 0.5, 2)?;
    let negs: Negatives<f64> = bank.negatives(&[0, 1, 2], 5, &mut stream(1, &[2]))?;

    let split = |g: &mut Graph<f64>, v: Var, at: usize| -> Result<(Var, Var)> {
        let n = g.shape(v)[0];
        Ok((g.slice_leading(v, 0, at)?, g.slice_leading(v, at, n)?))
    };
    let mut cases: Vec<(&'static str, Vec<usize>, LossUnderTest)> = vec![
        ("ce", vec![3, 5], Box::new(|g, v| cross_entropy(g, v, &[0, 4, 2]))),
        ("gce", vec![3, 5], Box::new(|g, v| gce_loss(g, v, &[0, 4, 2], 2))),
        (
            "rotation_total",
            vec![4, 5],
            Box::new(move |g, v| {
                let (a, b) = split(g, v, 2)?;
                let ca = cross_entropy(g, a, &[1, 0])?;
                let cb = cross_entropy(g, b, &[2, 3])?;
                rotation_total(g, ca, cb, 0.3)
            }),
        ),
        (
            "pirl",
            vec![6, 6],
            Box::new(move |g, v| {
                let n = g.l2_normalize(v)?;
                let (a, b) = split(g, n, 3)?;
                pirl_loss(g, a, b, &[0, 1, 2], &negs, 0.5)
            }),
        ),
        (
            "dcl_cls",
            vec![4, 5],
            Box::new(move |g, v| {
                let (a, b) = split(g, v, 2)?;
                dcl_cls_loss(g, a, b, &[1, 3])
            }),
        ),
        (
            "dcl_adv",
            vec![6, 2],
            Box::new(move |g, v| {
                let (a, b) = split(g, v, 3)?;
                dcl_adv_loss(g, a, b)
            }),
        ),
    ];
    for (name, mode) in [("dcl_loc_mse", LocMode::Mse), ("dcl_loc_l1", LocMode::L1), ("dcl_loc_bce", LocMode::Bce)] {
        let t = shuffled.clone();
        let channels = if mode == LocMode::Bce { k * k } else { 2 };
        cases.push((
            name,
            vec![4, channels, k, k],
            Box::new(move |g, v| {
                let v = if mode == LocMode::Bce { v } else { g.tanh(v)? };
                let (a, b) = split(g, v, 2)?;
                dcl_loc_loss(g, a, b, &t, mode)
            }),
        ));
    }
    Ok(cases)
}

/// Autodiff against central differences for every op and loss.
pub fn grad_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, shape, f) in op_cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..3 {
            let x = random(&shape, 1000 + seed).map(|v| v + 0.05);
            worst = worst.max(grad_check(f, &x, GRAD_EPS)?);
        }
        out.push(Check::below("grad", name, worst, GRAD_TOL));
    }
    for (name, shape, f) in loss_cases()? {
        let mut worst: f64 = 0.0;
        for seed in 0..3 {
            // shifted and shrunk so no residual sits on the |·| kink
            let x = random(&shape, 2000 + seed).map(|v| 0.5 * v + 0.07);
            worst = worst.max(grad_check(&f, &x, GRAD_EPS)?);
        }
        out.push(Check::below("grad", name, worst, GRAD_TOL));
    }
    Ok(out)
}

fn random_image(size: usize, seed: u64) -> Result<Image> {
    let mut rng = stream(seed, &[0x1a6e]);
    Image::new(size, size, (0..3 * size * size).map(|_| rng.random::<f32>()).collect())
}

/// Displacement bound and bijectivity over many draws, then bitwise
/// reassembly.
pub fn perm_checks() -> Result<Vec<Check>> {
    let mut violations = 0usize;
    for i in 0..PERM_DRAWS {
        let k = if i % 2 == 0 { 4 } else { 7 };
        let d = 1 + (i / 2) % 3;
        let p = rcm_permutation(k, d, &mut stream(i as u64, &[0x9e]))?;
        if p.validate().is_err() || p.max_displacement() >= 2 * d {
            violations += 1;
        }
    }
    let mut mismatched = 0usize;
    for seed in 0..100u64 {
        let img = random_image(28, seed)?;
        let k = [2, 4, 7][seed as usize % 3];
        let p = rcm_permutation(k, 1 + seed as usize % (k - 1), &mut stream(seed, &[0x9f]))?;
        let (phi, p) = apply_rcm(&img, &p)?;
        if reassemble(&phi, &p)?.data() != img.data() {
            mismatched += 1;
        }
    }
    Ok(vec![
        Check::at_most("perm", format!("rcm_bound_{PERM_DRAWS}_draws"), violations as f64, 0.0),
        Check::at_most("perm", "rcm_roundtrip_100", mismatched as f64, 0.0),
    ])
}

/// Closed-form and boundary identities of the losses.
pub fn loss_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    let mut rng = stream(11, &[0x6ce]);
    for _ in 0..1000 {
        let n = rng.random_range(2..=12);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let label = rng.random_range(0..n);
        worst = worst.max((gce_value(&s, label, n - 1)? - cross_entropy_value(&s, label)?).abs());
    }
    out.push(Check::below("loss", "gce_full_k_equals_ce", worst, GCE_TOL));

    let (dim, beta) = (5, 0.7);
    let ids: Vec<u64> = (0..8).collect();
    let mut bank = MemoryBank::new(&ids, dim, beta, 3)?;
    let mut shadow: Vec<Vec<f64>> = ids.iter().map(|&i| bank.get(i).unwrap().to_vec()).collect();
    let mut rng = stream(12, &[0xba]);
    for _ in 0..500 {
        let id = rng.random_range(0..ids.len());
        let rep: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        bank.update(id as u64, &rep)?;
        let m: Vec<f64> = shadow[id].iter().zip(&rep).map(|(m, r)| beta * m + (1.0 - beta) * r).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        shadow[id] = m.iter().map(|v| v / norm).collect();
    }
    let (mut dev, mut norm_dev): (f64, f64) = (0.0, 0.0);
    for (&id, want) in ids.iter().zip(&shadow) {
        let got = bank.get(id).unwrap();
        for (a, b) in got.iter().zip(want) {
            dev = dev.max((a - b).abs());
        }
        norm_dev = norm_dev.max((got.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
    }
    out.push(Check::below("loss", "bank_ema_recursion", dev, BANK_TOL));
    out.push(Check::below("loss", "bank_unit_norm", norm_dev, NORM_TOL));

    let cams = random(&[5, 4, 4], 13);
    let mut changed = 0usize;
    for (i, cfg) in [
        DbConfig { p_peak: 0.0, p_patch: 0.0, ..DbConfig::default() },
        DbConfig { p_peak: 1.0, p_patch: 1.0, alpha: 1.0, ..DbConfig::default() },
    ]
    .iter()
    .enumerate()
    {
        let mask = suppression_mask(&cams, cfg, &mut stream(14, &[i as u64]))?;
        let out = apply_suppression(&cams, &mask, cfg.alpha)?;
        changed += out.data().iter().zip(cams.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    out.push(Check::at_most("loss", "db_identity_bitwise", changed as f64, 0.0));

    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let k = 2 + seed as usize % 4;
        let perm = rcm_permutation(k, 1, &mut stream(seed, &[0x10c]))?;
        let shuffled = vec![location_targets(&perm)];
        let ident = location_targets(&JigsawPermutation::identity(k));
        let grid = |t: &crate::transforms::LocationTargets| -> Result<Tensor<f64>> {
            let mut data = Vec::with_capacity(2 * k * k);
            for axis in 0..2 {
                data.extend(t.coords().iter().map(|c| c[axis]));
            }
            Tensor::new(vec![1, 2, k, k], data)
        };
        for mode in [LocMode::Mse, LocMode::L1] {
            let mut g = Graph::new();
            let pi = g.constant(grid(&ident)?);
            let pp = g.constant(grid(&shuffled[0])?);
            let l = dcl_loc_loss(&mut g, pi, pp, &shuffled, mode)?;
            worst = worst.max(g.value(l).item()?.abs());
        }
    }
    out.push(Check::at_most("loss", "loc_loss_perfect_is_zero", worst, 0.0));
    Ok(out)
}

/// Two-class model that reads colour directly: class 0 wins on red-dominant
/// input, class 1 on green-dominant input.
pub fn oracle_model<T: Scalar>() -> Model<T> {
    let spec = ModelSpec::classifier(2);
    let mut params = ParamStore::new();
    for (name, shape) in spec.layout() {
        let mut t = Tensor::<T>::zeros(shape.clone());
        if name.ends_with(".w") && shape.len() == 4 {
            // centre tap copying input channel c into output channel c
            for c in 0..2 {
                t.data_mut()[((c * shape[1] + c) * 3 + 1) * 3 + 1] = T::one();
            }
        } else if name == "cls.w" {
            t.data_mut()[0] = T::one();
            t.data_mut()[3] = T::one();
        }
        params.add(name, t).expect("layout names are unique");
    }
    Model::from_params(spec, params).expect("layout matches spec")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for c in run(Suite::All).unwrap() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn suite_names() {
        assert_eq!("perm".parse::<Suite>().unwrap(), Suite::Perm);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn oracle_scores() {
        let m = oracle_model::<f64>();
        let red = Image::filled(8, 8, [1.0, 0.0, 0.0]);
        let green = Image::filled(8, 8, [0.0, 1.0, 0.0]);
        let s = m.predict(&Image::batch::<f64>(&[&red, &green]).unwrap()).unwrap();
        assert_eq!(s.data(), &[2.0, 0.0, 0.0, 2.0]);
    }
}
