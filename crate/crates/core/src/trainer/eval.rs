use crate::dataset::{Dataset, Image};
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};
use crate::transforms::Preprocess;

const EVAL_CHUNK: usize = 64;

/// Top-1 and top-2 accuracy in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    pub top2: f64,
}

/// Position of `label` when classes are ranked by score, ties going to
/// the lower index.
pub fn label_rank(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Center-cropped test tensors, prepared once and reused every epoch.
pub struct EvalSet<T> {
    chunks: Vec<(Tensor<T>, Vec<usize>)>,
    len: usize,
}

impl<T: Scalar> EvalSet<T> {
    pub fn new(test: &Dataset, pre: &Preprocess) -> Result<Self> {
        if test.is_empty() {
            return invalid("evaluation set is empty");
        }
        let views: Vec<Image> = test.samples().iter().map(|s| pre.eval(&s.image)).collect::<Result<_>>()?;
        let mut chunks = Vec::new();
        for (i, chunk) in views.chunks(EVAL_CHUNK).enumerate() {
            let refs: Vec<&Image> = chunk.iter().collect();
            let labels = test.samples()[i * EVAL_CHUNK..i * EVAL_CHUNK + chunk.len()]
                .iter()
                .map(|s| s.label)
                .collect();
            chunks.push((Image::batch(&refs)?, labels));
        }
        Ok(Self { chunks, len: test.len() })
    }

    pub fn accuracy(&self, model: &Model<T>) -> Result<Accuracy> {
        let (mut hit1, mut hit2) = (0usize, 0usize);
        let n = model.num_classes();
        for (x, labels) in &self.chunks {
            let scores = model.predict(x)?.to_f64_vec();
            for (row, &l) in scores.chunks_exact(n).zip(labels) {
                let r = label_rank(row, l);
                hit1 += (r < 1) as usize;
                hit2 += (r < 2) as usize;
            }
        }
        let pct = |h: usize| 100.0 * h as f64 / self.len as f64;
        Ok(Accuracy {
            top1: pct(hit1),
            top2: pct(hit2),
        })
    }
}

/// Accuracy on `test` with resize-then-center-crop preprocessing.
pub fn evaluate<T: Scalar>(model: &Model<T>, test: &Dataset) -> Result<Accuracy> {
    let Some((h, _)) = test.image_size() else {
        return invalid("evaluation set is empty");
    };
    EvalSet::new(test, &Preprocess::for_size(h))?.accuracy(model)
}
