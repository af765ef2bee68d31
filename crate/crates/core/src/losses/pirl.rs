use std::collections::HashMap;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng::{purpose, stream, Rng};
use crate::tensor::{Graph, Scalar, Tensor, Var};

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return invalid("cosine similarity of a zero or non-finite vector");
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `exp(s(a,b)/τ) / (exp(s(a,b)/τ) + Σ_n exp(s(b,n)/τ))` with cosine `s`.
pub fn nce_h(a: &[f64], b: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return invalid(format!("temperature {tau} must be positive"));
    }
    let (a, b) = (unit(a)?, unit(b)?);
    let pos = dot(&a, &b) / tau;
    let mut logits = vec![pos];
    for n in negatives {
        logits.push(dot(&b, &unit(n)?) / tau);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    Ok((pos - m).exp() / z)
}

/// Negatives shared by one batch, with the ids they were drawn from.
#[derive(Clone, Debug)]
pub struct Negatives<T> {
    pub ids: Vec<u64>,
    /// `M×E`, or `None` when nothing was drawn.
    pub reps: Option<Tensor<T>>,
}

impl<T> Negatives<T> {
    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            reps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Core of the contrastive loss, without the id bookkeeping.
fn pirl_terms<T: Scalar>(g: &mut Graph<T>, vi: Var, vt: Var, negs: Option<&Tensor<T>>, tau: f64) -> Result<Var> {
    let s = g.shape(vi).to_vec();
    if s.len() != 2 || g.shape(vt) != s.as_slice() {
        return invalid(format!("embeddings {s:?} and {:?} differ", g.shape(vt)));
    }
    if tau <= 0.0 {
        return invalid(format!("temperature {tau} must be positive"));
    }
    let (b, e) = (s[0], s[1]);
    let inv_tau = T::of(1.0 / tau);
    let prod = g.mul(vi, vt)?;
    let pos = g.sum(prod, Some(1))?;
    let pos = g.reshape(pos, &[b, 1])?;
    let pos = g.scale(pos, inv_tau)?;
    let Some(negs) = negs else {
        // −log(1) for the first term and nothing to sum in the second
        let lp = g.log_softmax(pos, 1)?;
        let m = g.mean(lp, None)?;
        return g.neg(m);
    };
    if negs.rank() != 2 || negs.shape()[1] != e {
        return invalid(format!("negatives {:?} do not match embedding size {e}", negs.shape()));
    }
    let m = negs.shape()[0];
    // c_n = log Σ_{n'} exp(s(n, n')/τ), fixed for this batch
    let nd = negs.to_f64_vec();
    let mut offsets = Vec::with_capacity(b * m);
    let mut c = Vec::with_capacity(m);
    for i in 0..m {
        let row: Vec<f64> = (0..m).map(|j| dot(&nd[i * e..(i + 1) * e], &nd[j * e..(j + 1) * e]) / tau).collect();
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        c.push(mx + row.iter().map(|r| (r - mx).exp()).sum::<f64>().ln());
    }
    for _ in 0..b {
        offsets.extend(c.iter().map(|&v| -v));
    }
    let mut nt = Vec::with_capacity(e * m);
    for j in 0..e {
        nt.extend((0..m).map(|i| nd[i * e + j]));
    }
    let negs_t = g.constant(Tensor::from_f64(vec![e, m], &nt)?);
    let sbn = g.matmul(vt, negs_t)?;
    let sbn = g.scale(sbn, inv_tau)?;

    let logits = g.concat(&[pos, sbn], 1)?;
    let lp = g.log_softmax(logits, 1)?;
    let first = g.gather(lp, &vec![0; b])?;
    let term1 = g.neg(first)?;

    let shift = g.constant(Tensor::from_f64(vec![b, m], &offsets)?);
    let shifted = g.add(sbn, shift)?;
    let sp = g.softplus(shifted)?;
    let term2 = g.sum(sp, Some(1))?;
    let term2 = g.reshape(term2, &[b, 1])?;

    let per = g.add(term1, term2)?;
    g.mean(per, None)
}

/// Contrastive loss between image embeddings `vi` and patch embeddings `vt`
/// (both `B×E`, unit rows), meaned over the batch. Fails if any batch id was
/// drawn as a negative.
pub fn pirl_loss<T: Scalar>(
    g: &mut Graph<T>,
    vi: Var,
    vt: Var,
    batch_ids: &[u64],
    negatives: &Negatives<T>,
    tau: f64,
) -> Result<Var> {
    if let Some(id) = negatives.ids.iter().find(|id| batch_ids.contains(id)) {
        return invalid(format!("sample {id} appears among its own negatives"));
    }
    pirl_terms(g, vi, vt, negatives.reps.as_ref(), tau)
}

/// Single-example loss in double precision.
pub fn pirl_loss_value(vi: &[f64], vt: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    let (vi, vt) = (unit(vi)?, unit(vt)?);
    let e = vi.len();
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::new(vec![1, e], vi)?);
    let b = g.constant(Tensor::new(vec![1, e], vt)?);
    let negs = if negatives.is_empty() {
        None
    } else {
        let mut flat = Vec::with_capacity(negatives.len() * e);
        for n in negatives {
            flat.extend(unit(n)?);
        }
        Some(Tensor::new(vec![negatives.len(), e], flat)?)
    };
    let l = pirl_terms(&mut g, a, b, negs.as_ref(), tau)?;
    g.value(l).item()
}

/// One unit-norm representation per training sample, updated by an
/// exponential moving average.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    dim: usize,
    beta: f64,
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    reps: Vec<f64>,
}

impl MemoryBank {
    /// Starts every entry at a seeded random unit vector.
    pub fn new(ids: &[u64], dim: usize, beta: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return invalid(format!("bank momentum {beta} outside [0, 1]"));
        }
        if dim == 0 {
            return invalid("bank dimension must be positive");
        }
        let mut index = HashMap::with_capacity(ids.len());
        let mut reps = Vec::with_capacity(ids.len() * dim);
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return invalid(format!("duplicate bank id {id}"));
            }
            let mut rng = stream(seed, &[purpose::BANK_INIT, id]);
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            reps.extend(unit(&v)?);
        }
        Ok(Self {
            dim,
            beta,
            ids: ids.to_vec(),
            index,
            reps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.index.get(&id).map(|&i| &self.reps[i * self.dim..(i + 1) * self.dim])
    }

    /// Overwrites an entry after normalizing `rep`.
    pub fn set(&mut self, id: u64, rep: &[f64]) -> Result<()> {
        let i = self.slot(id, rep)?;
        let u = unit(rep)?;
        self.reps[i * self.dim..(i + 1) * self.dim].copy_from_slice(&u);
        Ok(())
    }

    fn slot(&self, id: u64, rep: &[f64]) -> Result<usize> {
        let i = *self
            .index
            .get(&id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bank id {id}")))?;
        if rep.len() != self.dim {
            return invalid(format!("representation of length {} for bank of dim {}", rep.len(), self.dim));
        }
        Ok(i)
    }

    /// `m ← normalize(β·m + (1−β)·rep)`.
    pub fn update(&mut self, id: u64, rep: &[f64]) -> Result<()> {
        let i = self.slot(id, rep)?;
        let (b, dim) = (self.beta, self.dim);
        if b == 1.0 {
            return Ok(());
        }
        let m = &self.reps[i * dim..(i + 1) * dim];
        let mixed: Vec<f64> = m.iter().zip(rep).map(|(m, r)| b * m + (1.0 - b) * r).collect();
        let u = unit(&mixed).map_err(|_| Error::InvalidArgument(format!("bank entry {id} cancelled to zero")))?;
        self.reps[i * dim..(i + 1) * dim].copy_from_slice(&u);
        Ok(())
    }

    /// Up to `count` entries drawn uniformly without replacement from every
    /// id not in `exclude`.
    pub fn negatives<T: Scalar>(&self, exclude: &[u64], count: usize, rng: &mut Rng) -> Result<Negatives<T>> {
        let pool: Vec<usize> = (0..self.ids.len())
            .filter(|&i| !exclude.contains(&self.ids[i]))
            .collect();
        let take = count.min(pool.len());
        if take == 0 {
            return Ok(Negatives::empty());
        }
        let mut picked: Vec<usize> = sample(rng, pool.len(), take).into_iter().map(|j| pool[j]).collect();
        picked.sort_unstable();
        let mut flat = Vec::with_capacity(take * self.dim);
        for &i in &picked {
            flat.extend(self.reps[i * self.dim..(i + 1) * self.dim].iter().map(|&v| T::of(v)));
        }
        Ok(Negatives {
            ids: picked.iter().map(|&i| self.ids[i]).collect(),
            reps: Some(Tensor::new(vec![take, self.dim], flat)?),
        })
    }
}
