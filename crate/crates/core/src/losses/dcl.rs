use serde::{Deserialize, Serialize};

use super::cross_entropy;
use crate::error::{invalid, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::transforms::{location_targets, JigsawPermutation, LocationTargets};

/// Form of the location objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocMode {
    #[default]
    Mse,
    L1,
    /// Each cell classifies which of the `k²` source cells it holds.
    Bce,
}

impl LocMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LocMode::Mse => "mse",
            LocMode::L1 => "l1",
            LocMode::Bce => "bce",
        }
    }
}

impl std::str::FromStr for LocMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LocMode::Mse),
            "l1" => Ok(LocMode::L1),
            "bce" => Ok(LocMode::Bce),
            other => invalid(format!("unknown location loss mode {other}")),
        }
    }
}

/// Classification on originals and deconstructed images: mean over the
/// batch of `CE(I) + CE(φ(I))`.
pub fn dcl_cls_loss<T: Scalar>(g: &mut Graph<T>, scores_i: Var, scores_phi: Var, labels: &[usize]) -> Result<Var> {
    if g.shape(scores_i) != g.shape(scores_phi) {
        return invalid(format!(
            "branch scores {:?} and {:?} differ",
            g.shape(scores_i),
            g.shape(scores_phi)
        ));
    }
    let a = cross_entropy(g, scores_i, labels)?;
    let b = cross_entropy(g, scores_phi, labels)?;
    g.add(a, b)
}

/// Discriminator loss: each original is labelled 0, each deconstructed
/// image 1. Summed per pair, meaned over pairs.
pub fn dcl_adv_loss<T: Scalar>(g: &mut Graph<T>, disc_i: Var, disc_phi: Var) -> Result<Var> {
    for v in [disc_i, disc_phi] {
        let s = g.shape(v);
        if s.len() != 2 || s[1] != 2 {
            return invalid(format!("discriminator scores must be N×2, got {s:?}"));
        }
    }
    let n = g.shape(disc_i)[0];
    if g.shape(disc_phi)[0] != n {
        return invalid("discriminator branches differ in batch size");
    }
    let a = cross_entropy(g, disc_i, &vec![0; n])?;
    let b = cross_entropy(g, disc_phi, &vec![1; n])?;
    g.add(a, b)
}

fn coordinate_grid<T: Scalar>(targets: &[LocationTargets], k: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(targets.len() * 2 * k * k);
    for t in targets {
        if t.k() != k {
            return invalid(format!("targets for grid {} against predictions for grid {k}", t.k()));
        }
        for axis in 0..2 {
            data.extend(t.coords().iter().map(|c| c[axis]));
        }
    }
    Tensor::from_f64(vec![targets.len(), 2, k, k], &data)
}

fn one_hot<T: Scalar>(targets: &[LocationTargets], k: usize) -> Result<Tensor<T>> {
    let cells = k * k;
    let mut data = vec![0.0; targets.len() * cells * cells];
    for (n, t) in targets.iter().enumerate() {
        if t.k() != k {
            return invalid(format!("targets for grid {} against predictions for grid {k}", t.k()));
        }
        for (pos, src) in t.cell_indices().into_iter().enumerate() {
            data[(n * cells + src) * cells + pos] = 1.0;
        }
    }
    Tensor::from_f64(vec![targets.len(), cells, k, k], &data)
}

fn branch<T: Scalar>(g: &mut Graph<T>, pred: Var, targets: &[LocationTargets], mode: LocMode) -> Result<Var> {
    let s = g.shape(pred).to_vec();
    if s.len() != 4 || s[0] != targets.len() || s[2] != s[3] {
        return invalid(format!("location predictions {s:?} for {} targets", targets.len()));
    }
    let k = s[2];
    let want = if mode == LocMode::Bce { k * k } else { 2 };
    if s[1] != want {
        return invalid(format!("{} location loss needs {want} channels, got {}", mode.as_str(), s[1]));
    }
    let per_image = match mode {
        LocMode::Mse | LocMode::L1 => {
            let t = g.constant(coordinate_grid(targets, k)?);
            let r = g.sub(pred, t)?;
            let e = if mode == LocMode::Mse {
                g.mul(r, r)?
            } else {
                let pos = g.relu(r)?;
                let nr = g.neg(r)?;
                let neg = g.relu(nr)?;
                g.add(pos, neg)?
            };
            g.sum(e, None)?
        }
        LocMode::Bce => {
            let oh = g.constant(one_hot(targets, k)?);
            let lp = g.log_softmax(pred, 1)?;
            let picked = g.mul(lp, oh)?;
            let s = g.sum(picked, None)?;
            g.neg(s)?
        }
    };
    // per-cell average within each image, then batch mean
    g.scale(per_image, T::of(1.0 / (k * k * targets.len()) as f64))
}

/// Location loss over both branches: deconstructed predictions against the
/// shuffled targets, original predictions against the identity layout.
pub fn dcl_loc_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred_i: Var,
    pred_phi: Var,
    shuffled: &[LocationTargets],
    mode: LocMode,
) -> Result<Var> {
    let k = shuffled.first().map(|t| t.k()).unwrap_or(2);
    let identity = vec![location_targets(&JigsawPermutation::identity(k)); shuffled.len()];
    let a = branch(g, pred_phi, shuffled, mode)?;
    let b = branch(g, pred_i, &identity, mode)?;
    g.add(a, b)
}

/// Which terms of the combined objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DclAblation {
    pub cls: bool,
    pub adv: bool,
    pub loc: bool,
}

impl Default for DclAblation {
    fn default() -> Self {
        Self {
            cls: true,
            adv: true,
            loc: true,
        }
    }
}

impl DclAblation {
    pub fn is_empty(&self) -> bool {
        !(self.cls || self.adv || self.loc)
    }
}

/// The three term values of one step.
#[derive(Clone, Copy, Debug)]
pub struct DclParts {
    pub cls: Var,
    pub adv: Var,
    pub loc: Var,
}

/// Unweighted sum of the enabled terms.
pub fn dcl_total<T: Scalar>(g: &mut Graph<T>, parts: DclParts, ablation: DclAblation) -> Result<Var> {
    let terms: Vec<Var> = [(ablation.cls, parts.cls), (ablation.adv, parts.adv), (ablation.loc, parts.loc)]
        .into_iter()
        .filter(|&(on, _)| on)
        .map(|(_, v)| v)
        .collect();
    let Some((&first, rest)) = terms.split_first() else {
        return invalid("every loss term is ablated");
    };
    let mut acc = first;
    for &v in rest {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}
