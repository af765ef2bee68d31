use rand::seq::SliceRandom;

use super::eval::EvalSet;
use super::schedule::{loss_schedule, sgd_step, LrSchedule};
use super::{MetricsRow, Mode, TrainConfig};
use crate::dataset::{split_semi_supervised, Dataset, Image, Sample};
use crate::diversification::{multiplier, suppression_mask};
use crate::error::{invalid, Error, Result};
use crate::losses::{
    cross_entropy, dcl_adv_loss, dcl_cls_loss, dcl_loc_loss, dcl_total, gce_loss, pirl_loss, pirl_total,
    rotation_total, DclParts, MemoryBank,
};
use crate::model::{Model, EMBED_DIM};
use crate::rng::{purpose, stream};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::transforms::{
    apply_rcm, extract_jigsaw_patches, location_targets, rcm_permutation, rotate90, Preprocess, RotationLabel,
};

/// Final weights plus the per-epoch log.
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub history: Vec<MetricsRow>,
    /// Optimizer steps taken.
    pub steps: usize,
}

#[derive(Default)]
struct StepLosses {
    total: f64,
    cls: f64,
    ssl: f64,
}

struct Run<'a, T> {
    config: &'a TrainConfig,
    samples: Vec<&'a Sample>,
    /// Training images after the deterministic resize.
    resized: Vec<Image>,
    pre: Preprocess,
    bank: Option<MemoryBank>,
    model: Model<T>,
}

pub fn train<T: Scalar>(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome<T>> {
    train_with(config, train, test, |_, _| {})
}

/// Trains from seeded initial weights, calling `observer` after each epoch's
/// evaluation.
pub fn train_with<T: Scalar>(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    observer: impl FnMut(&MetricsRow, &Model<T>),
) -> Result<TrainOutcome<T>> {
    let model = Model::new(config.model_spec(train.num_classes()), config.seed)?;
    train_from(config, model, train, test, observer)
}

/// Trains starting from `model`, whose heads must match the mode.
pub fn train_from<T: Scalar>(
    config: &TrainConfig,
    model: Model<T>,
    train: &Dataset,
    test: &Dataset,
    mut observer: impl FnMut(&MetricsRow, &Model<T>),
) -> Result<TrainOutcome<T>> {
    let (Some((h, w)), Some(test_size)) = (train.image_size(), test.image_size()) else {
        return invalid("training and test sets must be nonempty");
    };
    if h != w || test_size != (h, w) {
        return invalid(format!("expected square images of one size, got {h}×{w} and {test_size:?}"));
    }
    if train.samples().iter().any(|s| (s.image.height(), s.image.width()) != (h, w)) {
        return invalid("training images differ in size");
    }
    if train.num_classes() != test.num_classes() {
        return invalid("training and test sets disagree on the class count");
    }
    config.validate(train.num_classes(), h)?;
    let expected = config.model_spec(train.num_classes());
    if model.spec() != &expected {
        return invalid(format!("model heads {:?} do not fit mode {}", model.spec(), config.mode.as_str()));
    }

    let labeled = if config.split.label_fraction < 1.0 {
        split_semi_supervised(train, config.split)?
    } else {
        train.clone()
    };
    let pre = Preprocess::for_size(h);
    let samples: Vec<&Sample> = labeled.samples().iter().collect();
    let resized = samples
        .iter()
        .map(|s| crate::transforms::resize(&s.image, pre.resize, pre.resize))
        .collect::<Result<_>>()?;
    let bank = if config.mode == Mode::Pirl {
        Some(MemoryBank::new(&labeled.ids(), EMBED_DIM, config.pirl.beta, config.seed)?)
    } else {
        None
    };
    let eval = EvalSet::new(test, &pre)?;
    let schedule = LrSchedule {
        base: config.lr,
        factor: config.lr_decay_factor,
        decay_epoch: config.lr_decay_epoch,
    };
    let mut run = Run {
        config,
        samples,
        resized,
        pre,
        bank,
        model,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let lr = schedule.lr(epoch);
        let mut order: Vec<usize> = (0..run.samples.len()).collect();
        order.shuffle(&mut stream(config.seed, &[purpose::SHUFFLE, epoch as u64]));
        let mut sums = StepLosses::default();
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch,
                    step,
                    source: Box::new(e),
                },
                other => other,
            };
            let l = run.step(epoch, step, batch).map_err(diverged)?;
            sgd_step(run.model.params_mut(), lr, config.momentum)?;
            run.model.params_mut().zero_grad();
            if run.model.params().iter().any(|p| !p.value.all_finite()) {
                return Err(diverged(Error::NonFinite { op: "sgd_step" }));
            }
            let n = batch.len() as f64;
            sums.total += l.total * n;
            sums.cls += l.cls * n;
            sums.ssl += l.ssl * n;
            steps += 1;
        }
        let acc = eval.accuracy(&run.model)?;
        let n = run.samples.len() as f64;
        let row = MetricsRow {
            epoch,
            train_total_loss: sums.total / n,
            train_cls_loss: sums.cls / n,
            train_ssl_loss: sums.ssl / n,
            test_top1: acc.top1,
            test_top2: acc.top2,
            lr,
        };
        log::info!(
            "epoch {epoch} loss {:.4} (cls {:.4}, ssl {:.4}) top1 {:.2} top2 {:.2}",
            row.train_total_loss,
            row.train_cls_loss,
            row.train_ssl_loss,
            row.test_top1,
            row.test_top2
        );
        observer(&row, &run.model);
        history.push(row);
    }
    Ok(TrainOutcome {
        model: run.model,
        history,
        steps,
    })
}

fn item<T: Scalar>(g: &Graph<T>, v: Var) -> Result<f64> {
    Ok(g.value(v).item()?.as_f64())
}

impl<T: Scalar> Run<'_, T> {
    fn crop(&self, epoch: usize, i: usize) -> Result<Image> {
        let id = self.samples[i].id;
        let mut rng = stream(self.config.seed, &[purpose::CROP, epoch as u64, id]);
        crate::transforms::random_crop(&self.resized[i], self.pre.crop, self.pre.crop, &mut rng)
    }

    fn step(&mut self, epoch: usize, step: usize, batch: &[usize]) -> Result<StepLosses> {
        let views: Vec<Image> = batch.iter().map(|&i| self.crop(epoch, i)).collect::<Result<_>>()?;
        let labels: Vec<usize> = batch.iter().map(|&i| self.samples[i].label).collect();
        let ids: Vec<u64> = batch.iter().map(|&i| self.samples[i].id).collect();
        let b = batch.len();
        let cfg = self.config;

        let mut g = Graph::<T>::new();
        let session = self.model.session(&mut g, true);
        let (loss, out) = match cfg.mode {
            Mode::Baseline => {
                let x = g.constant(Image::batch(&views.iter().collect::<Vec<_>>())?);
                let f = session.features(&mut g, x)?;
                let s = session.class_scores(&mut g, f)?;
                let l = cross_entropy(&mut g, s, &labels)?;
                let v = item(&g, l)?;
                (l, StepLosses { total: v, cls: v, ssl: 0.0 })
            }
            Mode::Rotation => {
                // originals first, so the classification slice is the plain batch
                let mut all: Vec<Image> = views.clone();
                let mut rot_labels = vec![0; b];
                for r in 1..4u8 {
                    for v in &views {
                        all.push(rotate90(v, RotationLabel::new(r)?)?);
                    }
                    rot_labels.extend(std::iter::repeat_n(r as usize, b));
                }
                let x = g.constant(Image::batch(&all.iter().collect::<Vec<_>>())?);
                let f = session.features(&mut g, x)?;
                let f0 = g.slice_leading(f, 0, b)?;
                let s = session.class_scores(&mut g, f0)?;
                let cls = cross_entropy(&mut g, s, &labels)?;
                let rs = session.rotation_scores(&mut g, f)?;
                let rot = cross_entropy(&mut g, rs, &rot_labels)?;
                let l = rotation_total(&mut g, cls, rot, cfg.lambda)?;
                let out = StepLosses {
                    total: item(&g, l)?,
                    cls: item(&g, cls)?,
                    ssl: item(&g, rot)?,
                };
                (l, out)
            }
            Mode::Dcl => {
                let mut all = views.clone();
                let mut targets = Vec::with_capacity(b);
                for (v, &id) in views.iter().zip(&ids) {
                    let mut rng = stream(cfg.seed, &[purpose::RCM, epoch as u64, id]);
                    let perm = rcm_permutation(cfg.rcm.k, cfg.rcm.d, &mut rng)?;
                    let (phi, perm) = apply_rcm(v, &perm)?;
                    all.push(phi);
                    targets.push(location_targets(&perm));
                }
                let x = g.constant(Image::batch(&all.iter().collect::<Vec<_>>())?);
                let f = session.features(&mut g, x)?;
                let s = session.class_scores(&mut g, f)?;
                let si = g.slice_leading(s, 0, b)?;
                let sp = g.slice_leading(s, b, 2 * b)?;
                let cls = dcl_cls_loss(&mut g, si, sp, &labels)?;
                let d = session.adversary_scores(&mut g, f)?;
                let di = g.slice_leading(d, 0, b)?;
                let dp = g.slice_leading(d, b, 2 * b)?;
                let adv = dcl_adv_loss(&mut g, di, dp)?;
                let m = session.location(&mut g, f)?;
                let mi = g.slice_leading(m, 0, b)?;
                let mp = g.slice_leading(m, b, 2 * b)?;
                let loc = dcl_loc_loss(&mut g, mi, mp, &targets, cfg.loc_mode)?;
                let l = dcl_total(&mut g, DclParts { cls, adv, loc }, cfg.dcl_ablation)?;
                let plain = cross_entropy(&mut g, si, &labels)?;
                let v = item(&g, l)?;
                (
                    l,
                    StepLosses {
                        total: v,
                        cls: item(&g, plain)?,
                        ssl: v,
                    },
                )
            }
            Mode::Pirl => {
                let p = &cfg.pirl;
                let mut patches = Vec::with_capacity(b * p.grid * p.grid);
                for (&i, &id) in batch.iter().zip(&ids) {
                    let mut rng = stream(cfg.seed, &[purpose::JIGSAW, epoch as u64, id]);
                    let set = extract_jigsaw_patches(&self.samples[i].image, p.resize, p.crop, p.grid, p.patch_size, &mut rng)?;
                    patches.extend(set.shuffled(&mut rng).patches().iter().cloned());
                }
                let bank = self.bank.as_ref().expect("pirl mode keeps a bank");
                let count = p.negatives.min(bank.len().saturating_sub(1));
                let mut rng = stream(cfg.seed, &[purpose::NEGATIVES, epoch as u64, step as u64]);
                let negs = bank.negatives::<T>(&ids, count, &mut rng)?;

                let x = g.constant(Image::batch(&views.iter().collect::<Vec<_>>())?);
                let f = session.features(&mut g, x)?;
                let s = session.class_scores(&mut g, f)?;
                let cls = cross_entropy(&mut g, s, &labels)?;
                let vi = session.image_embedding(&mut g, f)?;
                let px = g.constant(Image::batch(&patches.iter().collect::<Vec<_>>())?);
                let pf = session.features(&mut g, px)?;
                let vt = session.patch_embedding(&mut g, pf)?;
                let nce = pirl_loss(&mut g, vi, vt, &ids, &negs, p.tau)?;
                let l = pirl_total(&mut g, cls, nce)?;
                let out = StepLosses {
                    total: item(&g, l)?,
                    cls: item(&g, cls)?,
                    ssl: item(&g, nce)?,
                };
                let reps = g.value(vi).to_f64_vec();
                let bank = self.bank.as_mut().expect("pirl mode keeps a bank");
                for (id, rep) in ids.iter().zip(reps.chunks_exact(EMBED_DIM)) {
                    bank.update(*id, rep)?;
                }
                (l, out)
            }
            Mode::DbGce => {
                let x = g.constant(Image::batch(&views.iter().collect::<Vec<_>>())?);
                let f = session.features(&mut g, x)?;
                let a = session.cams(&mut g, f)?;
                let a = if cfg.db.is_identity() {
                    a
                } else {
                    let shape = g.shape(a).to_vec();
                    let per = shape[1] * shape[2] * shape[3];
                    let values = g.value(a).data().to_vec();
                    let mut factors = Vec::with_capacity(b);
                    for (n, &id) in ids.iter().enumerate() {
                        let cams = Tensor::new(shape[1..].to_vec(), values[n * per..(n + 1) * per].to_vec())?;
                        let mut rng = stream(cfg.seed, &[purpose::DIVERSIFY, epoch as u64, id]);
                        let mask = suppression_mask(&cams, &cfg.db, &mut rng)?;
                        factors.push(multiplier::<T>(&mask, cfg.db.alpha));
                    }
                    let m = g.constant(Tensor::stack(&factors)?);
                    g.mul(a, m)?
                };
                let s = g.global_avg_pool(a)?;
                let l = if loss_schedule(epoch, &cfg.gce).use_ce {
                    cross_entropy(&mut g, s, &labels)?
                } else {
                    gce_loss(&mut g, s, &labels, cfg.gce.k)?
                };
                let v = item(&g, l)?;
                (l, StepLosses { total: v, cls: v, ssl: 0.0 })
            }
        };
        if !out.total.is_finite() {
            return Err(Error::NonFinite { op: "loss" });
        }
        g.backward(loss)?;
        let bound = session.bound().clone();
        self.model.accumulate_grads(&g, &bound);
        Ok(out)
    }
}
