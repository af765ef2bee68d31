//! Training objectives, built as graph ops so every term is differentiable.
//!
//! Batch losses return a scalar `Var` averaged over the batch. The `*_value`
//! functions evaluate a single example in double precision.

mod dcl;
mod pirl;

use serde::{Deserialize, Serialize};

pub use dcl::{dcl_adv_loss, dcl_cls_loss, dcl_loc_loss, dcl_total, DclAblation, DclParts, LocMode};
pub use pirl::{nce_h, pirl_loss, pirl_loss_value, MemoryBank, Negatives};

use crate::error::{invalid, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

fn check_labels<T: Scalar>(g: &Graph<T>, scores: Var, labels: &[usize]) -> Result<(usize, usize)> {
    let s = g.shape(scores);
    if s.len() != 2 || s[0] != labels.len() {
        return invalid(format!("scores {s:?} do not match {} labels", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= s[1]) {
        return invalid(format!("label {l} out of range for {} classes", s[1]));
    }
    Ok((s[0], s[1]))
}

/// `−log_softmax(scores)[label]`, meaned over the batch.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, scores: Var, labels: &[usize]) -> Result<Var> {
    check_labels(g, scores, labels)?;
    let lp = g.log_softmax(scores, 1)?;
    let picked = g.gather(lp, labels)?;
    let m = g.mean(picked, None)?;
    g.neg(m)
}

/// Top-`k` competing classes of one score row, excluding `label`; ties go to
/// the lower index.
pub fn hardest_negatives(row: &[f64], label: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&i| i != label).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Cross entropy restricted to the label and its `k` highest-scoring
/// competitors, meaned over the batch.
pub fn gce_loss<T: Scalar>(g: &mut Graph<T>, scores: Var, labels: &[usize], k: usize) -> Result<Var> {
    let (n, classes) = check_labels(g, scores, labels)?;
    if k == 0 || k >= classes {
        return invalid(format!("gce k={k} must lie in 1..={}", classes - 1));
    }
    let values = g.value(scores).to_f64_vec();
    let mut index = Vec::with_capacity(n * (k + 1));
    for (row, &l) in values.chunks_exact(classes).zip(labels) {
        index.push(l);
        index.extend(hardest_negatives(row, l, k));
    }
    let sel = g.gather(scores, &index)?;
    let lp = g.log_softmax(sel, 1)?;
    let first = g.gather(lp, &vec![0; n])?;
    let m = g.mean(first, None)?;
    g.neg(m)
}

fn single_row(scores: &[f64]) -> Result<(Graph<f64>, Var)> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(vec![1, scores.len()], scores.to_vec())?);
    Ok((g, s))
}

pub fn cross_entropy_value(scores: &[f64], label: usize) -> Result<f64> {
    let (mut g, s) = single_row(scores)?;
    let l = cross_entropy(&mut g, s, &[label])?;
    g.value(l).item()
}

pub fn gce_value(scores: &[f64], label: usize, k: usize) -> Result<f64> {
    let (mut g, s) = single_row(scores)?;
    let l = gce_loss(&mut g, s, &[label], k)?;
    g.value(l).item()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return invalid(format!("lambda {lambda} outside [0, 1]"));
    }
    Ok(())
}

/// `(1−λ)·cls + λ·rot`.
pub fn rotation_total<T: Scalar>(g: &mut Graph<T>, cls: Var, rot: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let a = g.scale(cls, T::of(1.0 - lambda))?;
    let b = g.scale(rot, T::of(lambda))?;
    g.add(a, b)
}

pub fn rotation_total_value(cls: f64, rot: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * cls + lambda * rot)
}

pub fn pirl_total<T: Scalar>(g: &mut Graph<T>, cls: Var, pirl: Var) -> Result<Var> {
    g.add(cls, pirl)
}

/// Top-`k` cross entropy settings and the epoch it takes over from plain
/// cross entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GceConfig {
    pub k: usize,
    pub warmup_epochs: usize,
}

impl Default for GceConfig {
    fn default() -> Self {
        Self { k: 5, warmup_epochs: 10 }
    }
}

impl GceConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.k == 0 || self.k >= num_classes {
            return invalid(format!("gce k={} must lie in 1..={}", self.k, num_classes - 1));
        }
        Ok(())
    }
}
