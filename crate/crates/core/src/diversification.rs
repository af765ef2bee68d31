//! Stochastic suppression of class activation maps.
//!
//! For each class map, the peak may be damped (`p_peak`) and every `K×K`
//! block may be damped (`p_patch`). Blocks never damp a class's peak cell;
//! only the peak draw decides that cell. Damped cells are scaled by `α`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbConfig {
    pub p_peak: f64,
    pub p_patch: f64,
    pub patch_k: usize,
    pub alpha: f64,
    pub train_only: bool,
}

impl Default for DbConfig {
    fn default() -> Self {
        Self {
            p_peak: 0.2,
            p_patch: 0.2,
            patch_k: 2,
            alpha: 0.5,
            train_only: true,
        }
    }
}

impl DbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_peak", self.p_peak), ("p_patch", self.p_patch), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.patch_k == 0 {
            return invalid("patch_k must be positive");
        }
        Ok(())
    }

    /// True when no draw can change a map.
    pub fn is_identity(&self) -> bool {
        self.alpha == 1.0 || (self.p_peak == 0.0 && self.p_patch == 0.0)
    }
}

/// Binary `C×H×W` mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuppressionMask {
    shape: [usize; 3],
    m: Vec<bool>,
}

impl SuppressionMask {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            shape: [c, h, w],
            m: vec![false; c * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        let [_, h, w] = self.shape;
        self.m[(c * h + y) * w + x]
    }

    pub fn values(&self) -> &[bool] {
        &self.m
    }

    pub fn count(&self) -> usize {
        self.m.iter().filter(|&&b| b).count()
    }

    /// Cell-wise OR, i.e. the sum clamped to {0, 1}.
    pub fn union(&self, other: &SuppressionMask) -> Result<SuppressionMask> {
        if self.shape != other.shape {
            return invalid(format!("mask shapes {:?} and {:?} differ", self.shape, other.shape));
        }
        Ok(SuppressionMask {
            shape: self.shape,
            m: self.m.iter().zip(&other.m).map(|(a, b)| *a || *b).collect(),
        })
    }
}

fn dims<T: Scalar>(cams: &Tensor<T>) -> Result<[usize; 3]> {
    match *cams.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => invalid(format!("activation maps must be C×H×W, got {:?}", cams.shape())),
    }
}

/// Row-major index of each class's first maximum.
pub fn class_peaks<T: Scalar>(cams: &Tensor<T>) -> Result<Vec<usize>> {
    let [_, h, w] = dims(cams)?;
    Ok(cams
        .data()
        .chunks_exact(h * w)
        .map(|plane| {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// One Bernoulli(`p_peak`) draw per class; a hit marks that class's peak.
pub fn peak_mask<T: Scalar>(cams: &Tensor<T>, p_peak: f64, rng: &mut Rng) -> Result<SuppressionMask> {
    let [c, h, w] = dims(cams)?;
    if !(0.0..=1.0).contains(&p_peak) {
        return invalid(format!("p_peak = {p_peak} outside [0, 1]"));
    }
    let mut mask = SuppressionMask::zeros(c, h, w);
    for (cls, peak) in class_peaks(cams)?.into_iter().enumerate() {
        if rng.random_bool(p_peak) {
            mask.m[cls * h * w + peak] = true;
        }
    }
    Ok(mask)
}

/// One Bernoulli(`p_patch`) draw per class per `K×K` block; peak cells are
/// always left at zero.
pub fn patch_mask<T: Scalar>(cams: &Tensor<T>, k: usize, p_patch: f64, rng: &mut Rng) -> Result<SuppressionMask> {
    let [c, h, w] = dims(cams)?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return invalid(format!("block size {k} does not divide {h}×{w}"));
    }
    if !(0.0..=1.0).contains(&p_patch) {
        return invalid(format!("p_patch = {p_patch} outside [0, 1]"));
    }
    let mut mask = SuppressionMask::zeros(c, h, w);
    for (cls, peak) in class_peaks(cams)?.into_iter().enumerate() {
        for by in 0..h / k {
            for bx in 0..w / k {
                if !rng.random_bool(p_patch) {
                    continue;
                }
                for y in by * k..(by + 1) * k {
                    for x in bx * k..(bx + 1) * k {
                        mask.m[(cls * h + y) * w + x] = true;
                    }
                }
            }
        }
        mask.m[cls * h * w + peak] = false;
    }
    Ok(mask)
}

/// Peak and block masks combined.
pub fn suppression_mask<T: Scalar>(cams: &Tensor<T>, cfg: &DbConfig, rng: &mut Rng) -> Result<SuppressionMask> {
    let peak = peak_mask(cams, cfg.p_peak, rng)?;
    let patch = patch_mask(cams, cfg.patch_k, cfg.p_patch, rng)?;
    peak.union(&patch)
}

/// Per-cell factors: `α` where the mask is set, 1 elsewhere.
pub fn multiplier<T: Scalar>(mask: &SuppressionMask, alpha: f64) -> Tensor<T> {
    let a = T::of(alpha);
    let data = mask.m.iter().map(|&b| if b { a } else { T::one() }).collect();
    Tensor::new(mask.shape.to_vec(), data).expect("mask extents are positive")
}

pub fn apply_suppression<T: Scalar>(cams: &Tensor<T>, mask: &SuppressionMask, alpha: f64) -> Result<Tensor<T>> {
    if cams.shape() != mask.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "apply_suppression",
            lhs: cams.shape().to_vec(),
            rhs: mask.shape.to_vec(),
        });
    }
    if alpha == 1.0 {
        return Ok(cams.clone());
    }
    let a = T::of(alpha);
    let data = cams
        .data()
        .iter()
        .zip(&mask.m)
        .map(|(&v, &m)| if m { a * v } else { v })
        .collect();
    Tensor::new(cams.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn cams(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, &[11]);
        let data = (0..c * h * w).map(|_| rng.random::<f64>()).collect();
        Tensor::new(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn peak_examples() {
        let a = cams(5, 4, 4, 1);
        assert_eq!(peak_mask(&a, 0.0, &mut stream(0, &[1])).unwrap().count(), 0);
        let m = peak_mask(&a, 1.0, &mut stream(0, &[1])).unwrap();
        let peaks = class_peaks(&a).unwrap();
        assert_eq!(m.count(), 5);
        for (c, p) in peaks.iter().enumerate() {
            assert!(m.get(c, p / 4, p % 4));
        }
        // ties resolve to the first cell in row-major order
        let flat = Tensor::<f64>::full(vec![1, 2, 2], 3.0);
        assert_eq!(class_peaks(&flat).unwrap(), vec![0]);
    }

    #[test]
    fn peak_rate_matches_probability() {
        let a = cams(1, 4, 4, 2);
        let hits = (0..10_000)
            .filter(|&s| peak_mask(&a, 0.2, &mut stream(s, &[9])).unwrap().count() == 1)
            .count();
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.2).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn patch_examples() {
        let a = cams(3, 4, 6, 3);
        assert_eq!(patch_mask(&a, 2, 0.0, &mut stream(0, &[1])).unwrap().count(), 0);
        let full = patch_mask(&a, 2, 1.0, &mut stream(0, &[1])).unwrap();
        assert_eq!(full.count(), 3 * 24 - 3);
        for (c, p) in class_peaks(&a).unwrap().iter().enumerate() {
            assert!(!full.get(c, p / 6, p % 6));
        }
        assert!(patch_mask(&a, 4, 0.5, &mut stream(0, &[1])).is_err());

        let peaks = class_peaks(&a).unwrap();
        for seed in 0..50 {
            let m = patch_mask(&a, 2, 0.5, &mut stream(seed, &[1])).unwrap();
            for c in 0..3 {
                for by in 0..2 {
                    for bx in 0..3 {
                        let cells: Vec<bool> = (0..4)
                            .map(|i| (by * 2 + i / 2, bx * 2 + i % 2))
                            .filter(|&(y, x)| y * 6 + x != peaks[c])
                            .map(|(y, x)| m.get(c, y, x))
                            .collect();
                        assert!(cells.iter().all(|&v| v == cells[0]));
                    }
                }
            }
        }
    }

    #[test]
    fn suppression_examples() {
        let a = cams(4, 4, 4, 5);
        let m = suppression_mask(&a, &DbConfig::default(), &mut stream(3, &[1])).unwrap();
        assert_eq!(apply_suppression(&a, &m, 1.0).unwrap(), a);
        assert_eq!(apply_suppression(&a, &SuppressionMask::zeros(4, 4, 4), 0.5).unwrap(), a);

        let mut one = SuppressionMask::zeros(1, 2, 2);
        one.m[3] = true;
        let t = Tensor::<f64>::from_f64(vec![1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = apply_suppression(&t, &one, 0.5).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 2.0]);
        assert!(apply_suppression(&t, &SuppressionMask::zeros(1, 2, 3), 0.5).is_err());
    }

    #[test]
    fn disabled_block_is_identity() {
        let a = cams(6, 8, 8, 6);
        for seed in 0..20 {
            for cfg in [
                DbConfig {
                    p_peak: 0.0,
                    p_patch: 0.0,
                    ..DbConfig::default()
                },
                DbConfig {
                    alpha: 1.0,
                    p_peak: 1.0,
                    p_patch: 1.0,
                    ..DbConfig::default()
                },
            ] {
                assert!(cfg.is_identity());
                let m = suppression_mask(&a, &cfg, &mut stream(seed, &[1])).unwrap();
                let out = apply_suppression(&a, &m, cfg.alpha).unwrap();
                assert_eq!(out, a);
                let mul = multiplier::<f64>(&m, cfg.alpha);
                let prod: Vec<f64> = a.data().iter().zip(mul.data()).map(|(x, y)| x * y).collect();
                assert_eq!(prod, a.data());
            }
        }
    }

    #[test]
    fn peak_cell_follows_peak_draw_only() {
        let a = cams(2, 4, 4, 7);
        let peaks = class_peaks(&a).unwrap();
        let cfg = DbConfig {
            p_peak: 0.0,
            p_patch: 1.0,
            ..DbConfig::default()
        };
        let m = suppression_mask(&a, &cfg, &mut stream(1, &[1])).unwrap();
        for (c, p) in peaks.iter().enumerate() {
            assert!(!m.get(c, p / 4, p % 4));
        }
        let cfg = DbConfig { p_peak: 1.0, ..cfg };
        let m = suppression_mask(&a, &cfg, &mut stream(1, &[1])).unwrap();
        assert_eq!(m.count(), 32);
    }
}
