//! Grad-CAM saliency maps, their export as pixmaps, and a localization
//! score against the synthetic glyph boxes.

use std::path::Path;

use crate::dataset::{write_graymap, write_pixmap, Dataset, Image, Sample};
use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::tensor::{Graph, Scalar};
use crate::transforms::geometric::bilinear;
use crate::transforms::Preprocess;

/// Nonnegative saliency grid at feature-map resolution, max-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    values: Vec<f64>,
    height: usize,
    width: usize,
    pub class_index: usize,
    pub sample_id: Option<u64>,
}

impl Heatmap {
    /// Clamps negatives to zero and scales so the peak is 1. An all-zero
    /// grid stays zero.
    pub fn new(height: usize, width: usize, raw: Vec<f64>, class_index: usize) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return invalid(format!("heatmap of {} values for {height}×{width}", raw.len()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "heatmap" });
        }
        let mut values: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
        let peak = values.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            values.iter_mut().for_each(|v| *v /= peak);
        }
        Ok(Self {
            values,
            height,
            width,
            class_index,
            sample_id: None,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Bilinear resize to `h×w`.
    pub fn upsample(&self, h: usize, w: usize) -> Vec<f32> {
        let src: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        bilinear(&src, self.height, self.width, 1, h, w)
    }
}

/// Grad-CAM of `class_index` for a single image already at model input size.
pub fn grad_cam<T: Scalar>(model: &Model<T>, image: &Image, class_index: usize) -> Result<Heatmap> {
    if class_index >= model.num_classes() {
        return invalid(format!(
            "class {class_index} out of range for {} classes",
            model.num_classes()
        ));
    }
    let feats = model.backbone_forward(&Image::batch(&[image])?)?;
    let [_, c, h, w] = feats.shape() else {
        unreachable!("backbone output is 4-d")
    };
    let (c, h, w) = (*c, *h, *w);

    let mut g = Graph::new();
    let f = g.param(feats.clone());
    let session = model.session(&mut g, false);
    let scores = session.class_scores(&mut g, f)?;
    let picked = g.gather(scores, &[class_index])?;
    let score = g.sum(picked, None)?;
    g.backward(score)?;
    let grad = g.grad(f).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); c * h * w]);

    let hw = h * w;
    let fv = feats.data();
    let mut raw = vec![0.0; hw];
    for ch in 0..c {
        let weight = grad[ch * hw..(ch + 1) * hw].iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / hw as f64;
        if weight == 0.0 {
            continue;
        }
        for (r, v) in raw.iter_mut().zip(&fv[ch * hw..(ch + 1) * hw]) {
            *r += weight * v.to_f64().unwrap();
        }
    }
    Heatmap::new(h, w, raw, class_index)
}

/// Writes the upsampled map as a graymap and a red-tinted overlay on
/// `base`.
pub fn export_heatmap(heatmap: &Heatmap, base: &Image, gray: &Path, overlay: &Path) -> Result<()> {
    let (h, w) = (base.height(), base.width());
    let up = heatmap.upsample(h, w);
    write_graymap(&up, h, w, gray)?;
    let data: Vec<f32> = base
        .data()
        .chunks_exact(3)
        .zip(&up)
        .flat_map(|(px, &v)| [0.5 * px[0] + 0.5 * v, 0.5 * px[1], 0.5 * px[2]])
        .collect();
    write_pixmap(&Image::new(h, w, data)?, overlay)
}

/// Whether the map's peak, taken in the eval crop at full resolution and
/// mapped back to source pixels, falls in the sample's glyph box.
pub fn peak_in_box(heatmap: &Heatmap, sample: &Sample, pre: &Preprocess) -> Result<bool> {
    let bbox = sample
        .glyph_box
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no glyph box", sample.id)))?;
    let up = heatmap.upsample(pre.crop, pre.crop);
    let mut best = 0;
    for (i, &v) in up.iter().enumerate() {
        if v > up[best] {
            best = i;
        }
    }
    let (y, x) = pre.eval_to_source(best / pre.crop, best % pre.crop, sample.image.height(), sample.image.width());
    Ok(bbox.contains(y, x))
}

/// Percentage of heatmaps whose peak lands inside the matching sample's
/// glyph box.
pub fn hit_rate(heatmaps: &[Heatmap], test: &Dataset, pre: &Preprocess) -> Result<f64> {
    if test.is_empty() {
        return invalid("localization over an empty set");
    }
    if heatmaps.len() != test.len() {
        return invalid(format!("{} heatmaps for {} samples", heatmaps.len(), test.len()));
    }
    let mut hits = 0usize;
    for (hm, s) in heatmaps.iter().zip(test.samples()) {
        hits += peak_in_box(hm, s, pre)? as usize;
    }
    Ok(100.0 * hits as f64 / test.len() as f64)
}

/// Grad-CAM for each test sample's true class on its eval crop, scored by
/// [`hit_rate`].
pub fn localization_rate<T: Scalar>(model: &Model<T>, test: &Dataset) -> Result<f64> {
    let Some((h, _)) = test.image_size() else {
        return invalid("localization over an empty set");
    };
    if let Some(s) = test.samples().iter().find(|s| s.glyph_box.is_none()) {
        return invalid(format!("sample {} has no glyph box", s.id));
    }
    let pre = Preprocess::for_size(h);
    let maps = test
        .samples()
        .iter()
        .map(|s| {
            let mut hm = grad_cam(model, &pre.eval(&s.image)?, s.label)?;
            hm.sample_id = Some(s.id);
            Ok(hm)
        })
        .collect::<Result<Vec<_>>>()?;
    hit_rate(&maps, test, &pre)
}
