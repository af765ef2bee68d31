//! Procedural fine-grained dataset.
//!
//! Every image shows the same kind of object: a roughly centred body
//! silhouette with a head, drawn with per-sample nuisance variation
//! (background tint, position jitter, scale, pixel noise). Classes differ
//! only in a small glyph (shape × colour) stamped at a random location on the
//! body, so the discriminative evidence is local and occupies well under 5%
//! of the image.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Dataset, GlyphBox, Image, Sample, SplitTag};
use crate::error::{invalid, Result};
use crate::rng::{purpose, stream, Rng};

const SHAPES: usize = 5;
/// Opacity of the glyph over the body.
const GLYPH_ALPHA: f32 = 0.55;
const NOISE_SIGMA: f32 = 0.05;
const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.30, 0.90],
    [0.95, 0.85, 0.10],
    [0.15, 0.75, 0.20],
    [0.95, 0.95, 0.95],
    [0.05, 0.05, 0.05],
    [0.85, 0.20, 0.80],
    [0.10, 0.80, 0.85],
];

/// Largest class count with a distinct (shape, colour) glyph per class.
pub const MAX_SYNTHETIC_CLASSES: usize = SHAPES * PALETTE.len();

/// Side of the square glyph for a given image size.
pub fn glyph_side(image_size: usize) -> usize {
    (image_size * 3 / 16).max(3)
}

fn glyph_covers(shape: usize, u: f32, v: f32) -> bool {
    let (du, dv) = ((u - 0.5).abs(), (v - 0.5).abs());
    match shape {
        0 => true,
        1 => du < 0.2 || dv < 0.2,
        2 => (u - v).abs() < 0.22 || (u + v - 1.0).abs() < 0.22,
        3 => du.max(dv) > 0.22,
        _ => ((v * 3.0) as usize) % 2 == 0,
    }
}

struct Scene {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
}

impl Scene {
    fn inside(&self, y: f32, x: f32) -> bool {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        dy * dy + dx * dx <= 1.0
    }
}

fn draw_sample(label: usize, size: usize, rng: &mut Rng) -> (Image, GlyphBox) {
    let s = size as f32;
    let noise = Normal::new(0.0f32, NOISE_SIGMA).expect("valid sigma");

    let bg_base = [
        rng.random_range(0.2..0.6f32),
        rng.random_range(0.3..0.7f32),
        rng.random_range(0.2..0.6f32),
    ];
    let bg_slope = rng.random_range(-0.15..0.15f32);
    let scale = rng.random_range(0.85..1.1f32);
    let body = Scene {
        cy: s / 2.0 + rng.random_range(-0.08..0.08f32) * s,
        cx: s / 2.0 + rng.random_range(-0.08..0.08f32) * s,
        ry: s * 0.27 * scale,
        rx: s * 0.36 * scale,
    };
    let facing = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let head = Scene {
        cy: body.cy - body.ry * 0.9,
        cx: body.cx + facing * body.rx * 0.6,
        ry: s * 0.13 * scale,
        rx: s * 0.13 * scale,
    };
    let shade = rng.random_range(-0.08..0.08f32);
    let body_rgb = [0.55 + shade, 0.42 + shade, 0.30 + shade];

    let mut image = Image::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
            let rgb = if body.inside(fy, fx) || head.inside(fy, fx) {
                body_rgb
            } else {
                let t = bg_slope * (fy / s - 0.5);
                [bg_base[0] + t, bg_base[1] + t, bg_base[2] + t]
            };
            image.set_pixel(y, x, rgb);
        }
    }

    // Glyph: keep the whole box on the body.
    let side = glyph_side(size);
    let span = size - side;
    let mut origin = ((body.cy - side as f32 / 2.0) as usize, (body.cx - side as f32 / 2.0) as usize);
    for _ in 0..200 {
        let (r0, c0) = (rng.random_range(0..=span), rng.random_range(0..=span));
        let corners = [(r0, c0), (r0 + side, c0), (r0, c0 + side), (r0 + side, c0 + side)];
        if corners.iter().all(|&(y, x)| body.inside(y as f32, x as f32)) {
            origin = (r0, c0);
            break;
        }
    }
    let (r0, c0) = (origin.0.min(span), origin.1.min(span));
    let shape = label % SHAPES;
    let base = PALETTE[label / SHAPES];
    let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.06..0.06f32));
    for dy in 0..side {
        for dx in 0..side {
            let (u, v) = ((dx as f32 + 0.5) / side as f32, (dy as f32 + 0.5) / side as f32);
            if glyph_covers(shape, u, v) {
                let under = image.pixel(r0 + dy, c0 + dx);
                let rgb = std::array::from_fn(|c| GLYPH_ALPHA * (base[c] + tint[c]) + (1.0 - GLYPH_ALPHA) * under[c]);
                image.set_pixel(r0 + dy, c0 + dx, rgb);
            }
        }
    }

    for y in 0..size {
        for x in 0..size {
            let px = image.pixel(y, x);
            let rgb = std::array::from_fn(|c| px[c] + noise.sample(rng));
            image.set_pixel(y, x, rgb);
        }
    }

    let bbox = GlyphBox {
        row0: r0,
        col0: c0,
        row1: r0 + side,
        col1: c0 + side,
    };
    (image, bbox)
}

fn generate_split(
    split: SplitTag,
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
    id_offset: u64,
) -> Result<Dataset> {
    let split_tag = match split {
        SplitTag::Train => 0,
        SplitTag::Test => 1,
    };
    let samples = (0..num_classes * per_class)
        .map(|index| {
            let label = index / per_class;
            let mut rng = stream(seed, &[purpose::GENERATE, split_tag, index as u64]);
            let (image, bbox) = draw_sample(label, image_size, &mut rng);
            Sample {
                image,
                label,
                id: id_offset + index as u64,
                glyph_box: Some(bbox),
            }
        })
        .collect();
    Dataset::new(samples, num_classes, split)
}

/// Generates matching train and test splits.
///
/// Train ids run `0..num_classes·per_class_train`; test ids continue after
/// them so that ids are unique across both splits.
pub fn generate_synthetic(
    num_classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    image_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(2..=MAX_SYNTHETIC_CLASSES).contains(&num_classes) {
        return invalid(format!("num_classes must be in 2..={MAX_SYNTHETIC_CLASSES}, got {num_classes}"));
    }
    if image_size < 16 || image_size % 4 != 0 {
        return invalid(format!("image_size must be a multiple of 4 and at least 16, got {image_size}"));
    }
    if per_class_train == 0 || per_class_test == 0 {
        return invalid("per-class counts must be positive");
    }
    let train = generate_split(SplitTag::Train, num_classes, per_class_train, image_size, seed, 0)?;
    let offset = (num_classes * per_class_train) as u64;
    let test = generate_split(SplitTag::Test, num_classes, per_class_test, image_size, seed, offset)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic(3, 4, 2, 32, 7).unwrap();
        let b = generate_synthetic(3, 4, 2, 32, 7).unwrap();
        assert_eq!(a, b);
        let bits = |d: &Dataset| -> Vec<u32> {
            d.samples().iter().flat_map(|s| s.image.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a.0), bits(&b.0));
    }

    #[test]
    fn counts_per_label() {
        let (train, test) = generate_synthetic(20, 100, 5, 16, 1).unwrap();
        assert_eq!(train.len(), 2000);
        assert_eq!(train.class_counts(), vec![100; 20]);
        assert_eq!(test.class_counts(), vec![5; 20]);
        let mut ids = train.ids();
        ids.extend(test.ids());
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn glyph_boxes_are_small_and_on_the_body() {
        let (train, test) = generate_synthetic(20, 30, 10, 32, 3).unwrap();
        for s in train.samples().iter().chain(test.samples()) {
            let b = s.glyph_box.unwrap();
            assert!((b.area() as f64) / (32.0 * 32.0) < 0.05);
            assert!(b.row1 <= 32 && b.col1 <= 32);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn different_seeds_move_glyphs() {
        let (a, _) = generate_synthetic(4, 50, 1, 32, 1).unwrap();
        let (b, _) = generate_synthetic(4, 50, 1, 32, 2).unwrap();
        let moved = a
            .samples()
            .iter()
            .zip(b.samples())
            .filter(|(x, y)| x.glyph_box != y.glyph_box)
            .count();
        assert!(moved as f64 / a.len() as f64 > 0.9, "{moved}");
    }

    #[test]
    fn invalid_sizes() {
        assert!(generate_synthetic(1, 5, 5, 32, 0).is_err());
        assert!(generate_synthetic(2, 5, 5, 30, 0).is_err());
        assert!(generate_synthetic(MAX_SYNTHETIC_CLASSES + 1, 5, 5, 32, 0).is_err());
    }
}
