//! Small convolutional backbone with optional heads for each training mode.

mod checkpoint;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo, CHECKPOINT_MAGIC};

use crate::error::{invalid, Result};
use crate::rng::{fnv1a, purpose, stream};
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Backbone channel widths.
pub const WIDTHS: [usize; 3] = [16, 32, 64];
/// Channels of the final feature map.
pub const FEATURE_DIM: usize = 64;
/// Embedding size of the contrastive projections.
pub const EMBED_DIM: usize = 32;
/// Fixed input standardization applied before the first convolution.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Location head layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationHead {
    /// Cells per side of the shuffled grid.
    pub k: usize,
    /// Predict one of `k²` cells per position instead of regressing two
    /// coordinates.
    pub classify: bool,
}

impl LocationHead {
    pub fn outputs(&self) -> usize {
        if self.classify {
            self.k * self.k
        } else {
            2
        }
    }
}

/// Which heads sit on top of the shared backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_classes: usize,
    /// Class scores come from a 1×1 conv producing activation maps, pooled
    /// spatially, instead of a pooled linear classifier.
    pub cam: bool,
    pub rotation: bool,
    pub adversarial: bool,
    pub location: Option<LocationHead>,
    /// Number of patches fed to the patch projection.
    pub pirl_patches: Option<usize>,
}

impl ModelSpec {
    pub fn classifier(num_classes: usize) -> Self {
        Self {
            num_classes,
            cam: false,
            rotation: false,
            adversarial: false,
            location: None,
            pirl_patches: None,
        }
    }

    pub fn with_rotation(mut self) -> Self {
        self.rotation = true;
        self
    }

    pub fn with_dcl(mut self, k: usize, classify_location: bool) -> Self {
        self.adversarial = true;
        self.location = Some(LocationHead {
            k,
            classify: classify_location,
        });
        self
    }

    pub fn with_pirl(mut self, patches: usize) -> Self {
        self.pirl_patches = Some(patches);
        self
    }

    pub fn with_cam(mut self) -> Self {
        self.cam = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return invalid(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if let Some(l) = self.location {
            if l.k < 2 {
                return invalid(format!("location grid {} too small", l.k));
            }
        }
        if self.pirl_patches == Some(0) {
            return invalid("patch projection needs at least one patch");
        }
        Ok(())
    }

    /// Parameter names and shapes, in store order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = 3;
        for (i, &c) in WIDTHS.iter().enumerate() {
            out.push((format!("conv{}.w", i + 1), vec![c, c_in, 3, 3]));
            out.push((format!("conv{}.b", i + 1), vec![c]));
            c_in = c;
        }
        let n = self.num_classes;
        let mut linear = |name: &str, outputs: usize| {
            out.push((format!("{name}.w"), vec![FEATURE_DIM, outputs]));
            out.push((format!("{name}.b"), vec![outputs]));
        };
        if !self.cam {
            linear("cls", n);
        }
        if self.rotation {
            linear("rot", 4);
        }
        if self.adversarial {
            linear("adv", 2);
        }
        if let Some(p) = self.pirl_patches {
            linear("pirl_f", EMBED_DIM);
            out.push(("pirl_g.w".into(), vec![p * FEATURE_DIM, EMBED_DIM]));
            out.push(("pirl_g.b".into(), vec![EMBED_DIM]));
        }
        if let Some(l) = self.location {
            out.push(("loc.w".into(), vec![l.outputs(), FEATURE_DIM, 1, 1]));
            out.push(("loc.b".into(), vec![l.outputs()]));
        }
        if self.cam {
            out.push(("cam.w".into(), vec![n, FEATURE_DIM, 1, 1]));
            out.push(("cam.b".into(), vec![n]));
        }
        out
    }
}

fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [_, c_in, kh, kw] => c_in * kh * kw,
        [rows, _] => *rows,
        _ => 1,
    }
}

/// Backbone plus heads, owning its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    params: ParamStore<T>,
}

/// Graph handles for one forward pass.
pub struct Session<'m, T> {
    model: &'m Model<T>,
    bound: Bound,
}

impl<T: Scalar> Model<T> {
    /// Kaiming fan-in normal weights and zero biases. Each parameter draws
    /// from a stream keyed by the seed and its name, so heads added or
    /// removed elsewhere never shift another parameter's values.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in spec.layout() {
            let len: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![T::zero(); len]
            } else {
                let std = (2.0 / fan_in(&shape) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let mut rng = stream(seed, &[purpose::PARAM_INIT, fnv1a(name.as_bytes())]);
                (0..len).map(|_| T::of(normal.sample(&mut rng))).collect()
            };
            params.add(name, Tensor::new(shape, data)?)?;
        }
        Ok(Self { spec, params })
    }

    /// Builds a model around existing parameters, which must match the
    /// spec's layout exactly.
    pub fn from_params(spec: ModelSpec, params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != params.len() {
            return invalid(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            ));
        }
        for ((name, shape), p) in layout.iter().zip(params.iter()) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return invalid(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                ));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.by_name(name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.params.id(name)?;
        Some(&mut self.params.get_mut(id).value)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Registers parameters on `g`; gradients are tracked only when
    /// `trainable`.
    pub fn session(&self, g: &mut Graph<T>, trainable: bool) -> Session<'_, T> {
        let bound = if trainable {
            self.params.bind(g)
        } else {
            self.params.bind_frozen(g)
        };
        Session { model: self, bound }
    }

    /// Collects the leaf gradients of a session into the parameter buffers.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, bound: &Bound) {
        self.params.accumulate_grads(g, bound);
    }

    /// Features of an `N×3×H×W` batch without building a trainable graph.
    pub fn backbone_forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let s = self.session(&mut g, false);
        let x = g.constant(images.clone());
        let f = s.features(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Class scores (`N×classes`) for a batch, evaluation path.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let s = self.session(&mut g, false);
        let x = g.constant(images.clone());
        let f = s.features(&mut g, x)?;
        let y = s.class_scores(&mut g, f)?;
        Ok(g.value(y).clone())
    }

    /// Class activation maps `N×classes×h×w`; only for the CAM variant.
    pub fn cam_forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let s = self.session(&mut g, false);
        let x = g.constant(images.clone());
        let f = s.features(&mut g, x)?;
        let a = s.cams(&mut g, f)?;
        Ok(g.value(a).clone())
    }

    /// Unit-norm embeddings of images and of their ordered patch sets.
    /// `patches` is `(N·n)×3×p×p`, grouped by image.
    pub fn pirl_embed(&self, images: &Tensor<T>, patches: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let s = self.session(&mut g, false);
        let x = g.constant(images.clone());
        let p = g.constant(patches.clone());
        let f = s.features(&mut g, x)?;
        let vi = s.image_embedding(&mut g, f)?;
        let fp = s.features(&mut g, p)?;
        let vt = s.patch_embedding(&mut g, fp)?;
        Ok((g.value(vi).clone(), g.value(vt).clone()))
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast()).expect("names stay unique");
        }
        Model {
            spec: self.spec,
            params,
        }
    }
}

impl<T: Scalar> Session<'_, T> {
    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    fn var(&self, name: &str) -> Result<Var> {
        match self.model.params.id(name) {
            Some(id) => Ok(self.bound.var(id)),
            None => invalid(format!("model has no parameter {name}")),
        }
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.model.params.id(name)
    }

    /// `N×3×H×W → N×64×H/4×W/4`.
    pub fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return invalid(format!("backbone input {s:?} must be N×3×H×W with H, W divisible by 4"));
        }
        let centered = g.add_scalar(x, T::of(-INPUT_MEAN))?;
        let mut h = g.scale(centered, T::of(1.0 / INPUT_STD))?;
        for i in 1..=3 {
            h = g.conv2d(h, self.var(&format!("conv{i}.w"))?, 1, 1)?;
            h = g.bias_add(h, self.var(&format!("conv{i}.b"))?)?;
            h = g.relu(h)?;
            if i < 3 {
                h = g.max_pool2(h)?;
            }
        }
        Ok(h)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let y = g.matmul(x, self.var(&format!("{name}.w"))?)?;
        g.bias_add(y, self.var(&format!("{name}.b"))?)
    }

    fn pooled_linear(&self, g: &mut Graph<T>, feats: Var, name: &str) -> Result<Var> {
        let p = g.global_avg_pool(feats)?;
        self.linear(g, p, name)
    }

    /// `N×classes`; the CAM variant pools its activation maps.
    pub fn class_scores(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        if self.model.spec.cam {
            let a = self.cams(g, feats)?;
            g.global_avg_pool(a)
        } else {
            self.pooled_linear(g, feats, "cls")
        }
    }

    pub fn cams(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        if !self.model.spec.cam {
            return invalid("model was not built with activation-map head");
        }
        let a = g.conv2d(feats, self.var("cam.w")?, 1, 0)?;
        g.bias_add(a, self.var("cam.b")?)
    }

    pub fn rotation_scores(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        self.pooled_linear(g, feats, "rot")
    }

    pub fn adversary_scores(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        self.pooled_linear(g, feats, "adv")
    }

    /// `N×2×k×k` coordinates in (−1, 1), or `N×k²×k×k` cell scores when the
    /// head classifies.
    pub fn location(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        let Some(head) = self.model.spec.location else {
            return invalid("model was not built with a location head");
        };
        let m = g.conv2d(feats, self.var("loc.w")?, 1, 0)?;
        let m = g.bias_add(m, self.var("loc.b")?)?;
        let m = g.adaptive_avg_pool(m, head.k, head.k)?;
        if head.classify {
            Ok(m)
        } else {
            g.tanh(m)
        }
    }

    pub fn image_embedding(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        let v = self.pooled_linear(g, feats, "pirl_f")?;
        g.l2_normalize(v)
    }

    /// Pools each patch, concatenates per image in patch order and projects.
    pub fn patch_embedding(&self, g: &mut Graph<T>, patch_feats: Var) -> Result<Var> {
        let Some(n) = self.model.spec.pirl_patches else {
            return invalid("model was not built with patch projection");
        };
        let total = g.shape(patch_feats)[0];
        if total % n != 0 {
            return invalid(format!("{total} patches do not group into sets of {n}"));
        }
        let p = g.global_avg_pool(patch_feats)?;
        let p = g.reshape(p, &[total / n, n * FEATURE_DIM])?;
        let v = self.linear(g, p, "pirl_g")?;
        g.l2_normalize(v)
    }
}

#[cfg(test)]
mod tests;
