use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

/// `H×W×3` RGB image with channel values in `[0, 1]`, stored interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("empty image {height}×{width}"));
        }
        if data.len() != height * width * 3 {
            return invalid(format!(
                "image {height}×{width}×3 needs {} values, got {}",
                height * width * 3,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("pixel value {v} outside [0, 1]"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Values are clamped into `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let o = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[o + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Channel-major `3×H×W` tensor.
    pub fn to_chw<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::of(px[c] as f64);
            }
        }
        Tensor::new(vec![3, self.height, self.width], out).expect("image shape")
    }

    /// Stacks equally sized images into an `N×3×H×W` batch.
    pub fn batch<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
        let chw: Vec<Tensor<T>> = images.iter().map(|im| im.to_chw()).collect();
        Tensor::stack(&chw)
    }
}
