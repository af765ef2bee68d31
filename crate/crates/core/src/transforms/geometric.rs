use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Rotation class `r`, meaning a counter-clockwise turn of `90·r` degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RotationLabel(u8);

impl RotationLabel {
    pub const ALL: [RotationLabel; 4] = [RotationLabel(0), RotationLabel(1), RotationLabel(2), RotationLabel(3)];

    pub fn new(r: u8) -> Result<Self> {
        if r > 3 {
            return invalid(format!("rotation label {r} outside 0..=3"));
        }
        Ok(Self(r))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn degrees(self) -> u32 {
        90 * self.0 as u32
    }
}

fn rotate_once(image: &Image) -> Image {
    let (h, w) = (image.height(), image.width());
    // (y, x) moves to (w - 1 - x, y)
    let mut out = Image::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(w - 1 - x, y, image.pixel(y, x));
        }
    }
    out
}

/// Counter-clockwise rotation by `90·r` degrees.
pub fn rotate90(image: &Image, r: RotationLabel) -> Result<Image> {
    if r.0 % 2 == 1 && image.height() != image.width() {
        return invalid(format!(
            "odd quarter turn of a non-square {}×{} image",
            image.height(),
            image.width()
        ));
    }
    let mut out = image.clone();
    for _ in 0..r.0 {
        out = rotate_once(&out);
    }
    Ok(out)
}

/// Source coordinate sampled by output index `i` under corner-aligned
/// bilinear resampling.
pub(crate) fn corner_aligned(i: usize, out: usize, inp: usize) -> f64 {
    if out <= 1 {
        0.0
    } else {
        i as f64 * (inp - 1) as f64 / (out - 1) as f64
    }
}

/// Bilinear resampling of an `h×w` grid with `channels` interleaved values.
pub(crate) fn bilinear(src: &[f32], h: usize, w: usize, channels: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for oy in 0..out_h {
        let sy = corner_aligned(oy, out_h, h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = (sy - y0 as f64) as f32;
        for ox in 0..out_w {
            let sx = corner_aligned(ox, out_w, w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = (sx - x0 as f64) as f32;
            for c in 0..channels {
                let at = |y: usize, x: usize| src[(y * w + x) * channels + c];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

/// Corner-aligned bilinear resize.
pub fn resize(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return invalid(format!("resize to zero extent {out_h}×{out_w}"));
    }
    if (out_h, out_w) == (image.height(), image.width()) {
        return Ok(image.clone());
    }
    let data = bilinear(image.data(), image.height(), image.width(), 3, out_h, out_w)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Image::new(out_h, out_w, data)
}

fn crop_at(image: &Image, y0: usize, x0: usize, out_h: usize, out_w: usize) -> Image {
    let mut out = Image::filled(out_h, out_w, [0.0; 3]);
    for y in 0..out_h {
        for x in 0..out_w {
            out.set_pixel(y, x, image.pixel(y0 + y, x0 + x));
        }
    }
    out
}

fn check_crop(image: &Image, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || out_h > image.height() || out_w > image.width() {
        return invalid(format!(
            "crop {out_h}×{out_w} does not fit in {}×{}",
            image.height(),
            image.width()
        ));
    }
    Ok(())
}

/// Crop at offset `floor((in - out) / 2)` on each axis.
pub fn center_crop(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_crop(image, out_h, out_w)?;
    Ok(crop_at(
        image,
        (image.height() - out_h) / 2,
        (image.width() - out_w) / 2,
        out_h,
        out_w,
    ))
}

/// Offsets drawn uniformly from every valid placement.
pub fn random_crop_offsets(in_h: usize, in_w: usize, out_h: usize, out_w: usize, rng: &mut Rng) -> (usize, usize) {
    (rng.random_range(0..=in_h - out_h), rng.random_range(0..=in_w - out_w))
}

pub fn random_crop(image: &Image, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<Image> {
    check_crop(image, out_h, out_w)?;
    let (y0, x0) = random_crop_offsets(image.height(), image.width(), out_h, out_w, rng);
    Ok(crop_at(image, y0, x0, out_h, out_w))
}

/// Resize-then-crop preprocessing: random crop for training, center crop for
/// evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub resize: usize,
    pub crop: usize,
}

impl Preprocess {
    /// Resize by 9/8 then crop back to the original size.
    pub fn for_size(size: usize) -> Self {
        Self {
            resize: size + size / 8,
            crop: size,
        }
    }

    pub fn train(&self, image: &Image, rng: &mut Rng) -> Result<Image> {
        random_crop(&resize(image, self.resize, self.resize)?, self.crop, self.crop, rng)
    }

    pub fn eval(&self, image: &Image) -> Result<Image> {
        center_crop(&resize(image, self.resize, self.resize)?, self.crop, self.crop)
    }

    /// Maps a pixel of the evaluation view back to the source image.
    pub fn eval_to_source(&self, y: usize, x: usize, src_h: usize, src_w: usize) -> (usize, usize) {
        let off = (self.resize - self.crop) / 2;
        let back = |v: usize, src: usize| {
            let s = corner_aligned(v + off, self.resize, src).round() as usize;
            s.min(src - 1)
        };
        (back(y, src_h), back(x, src_w))
    }
}
