//! Images, datasets, pixmap I/O and semi-supervised splits.

mod image;
mod load;
mod pixmap;
mod split;
mod synthetic;

pub use image::Image;
pub use load::{apply_manifest, load_directory, read_manifest, write_dataset, write_manifest, ManifestEntry, MANIFEST_FILE};
pub use pixmap::{read_graymap, read_pixmap, write_graymap, write_pixmap};
pub use split::{split_semi_supervised, SplitSpec};
pub use synthetic::{generate_synthetic, glyph_side, MAX_SYNTHETIC_CLASSES};

use crate::error::{invalid, Result};

/// Half-open pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GlyphBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl GlyphBox {
    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub id: u64,
    /// Location of the class-discriminative glyph (synthetic data only).
    pub glyph_box: Option<GlyphBox>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// An ordered, immutable collection of labelled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    split: SplitTag,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, split: SplitTag) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return invalid(format!("sample {} has label {} >= {num_classes}", s.id, s.label));
        }
        let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate sample id");
        }
        Ok(Self {
            samples,
            num_classes,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// Number of samples carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.height(), s.image.width()))
    }
}
