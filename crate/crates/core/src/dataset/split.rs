use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};
use crate::rng::{purpose, stream};

/// Stratified label-fraction selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub label_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            label_fraction: 1.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Samples kept from a class of `count` samples.
    pub fn keep(&self, count: usize) -> usize {
        if count == 0 {
            return 0;
        }
        ((self.label_fraction * count as f64).round() as usize).clamp(1, count)
    }
}

/// Keeps `max(1, round(fraction · count))` samples of every class, chosen by
/// a per-class seeded shuffle; the result preserves the input order.
pub fn split_semi_supervised(train: &Dataset, spec: SplitSpec) -> Result<Dataset> {
    if !(spec.label_fraction > 0.0 && spec.label_fraction <= 1.0) {
        return invalid(format!("label fraction must be in (0, 1], got {}", spec.label_fraction));
    }
    let mut keep = vec![false; train.len()];
    for class in 0..train.num_classes() {
        let mut members: Vec<usize> = train
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        let n = spec.keep(members.len());
        members.shuffle(&mut stream(spec.seed, &[purpose::SPLIT, class as u64]));
        for &i in &members[..n] {
            keep[i] = true;
        }
    }
    let samples = train
        .samples()
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect();
    Dataset::new(samples, train.num_classes(), train.split())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use proptest::prelude::*;

    fn data() -> Dataset {
        generate_synthetic(20, 100, 1, 16, 5).unwrap().0
    }

    #[test]
    fn full_fraction_is_identity() {
        let d = data();
        let s = split_semi_supervised(&d, SplitSpec { label_fraction: 1.0, seed: 3 }).unwrap();
        assert_eq!(s, d);
    }

    #[test]
    fn ten_percent_keeps_ten_per_class() {
        let s = split_semi_supervised(&data(), SplitSpec { label_fraction: 0.10, seed: 3 }).unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s.class_counts(), vec![10; 20]);
    }

    #[test]
    fn deterministic_under_seed() {
        let d = data();
        let spec = SplitSpec { label_fraction: 0.3, seed: 9 };
        let a = split_semi_supervised(&d, spec).unwrap().ids();
        let b = split_semi_supervised(&d, spec).unwrap().ids();
        assert_eq!(a, b);
        let c = split_semi_supervised(&d, SplitSpec { seed: 10, ..spec }).unwrap().ids();
        assert_ne!(a, c);
    }

    #[test]
    fn non_positive_fraction_is_rejected() {
        assert!(split_semi_supervised(&data(), SplitSpec { label_fraction: 0.0, seed: 0 }).is_err());
        assert!(split_semi_supervised(&data(), SplitSpec { label_fraction: 1.5, seed: 0 }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn stratification_holds(fraction in 0.01f64..=1.0, seed in 0u64..1000) {
            let (d, _) = generate_synthetic(3, 7, 1, 16, 1).unwrap();
            let s = split_semi_supervised(&d, SplitSpec { label_fraction: fraction, seed }).unwrap();
            let expect = ((fraction * 7.0).round() as usize).max(1);
            prop_assert_eq!(s.class_counts(), vec![expect; 3]);
        }
    }
}
