use rand::Rng as _;
use rand::seq::SliceRandom;

use super::geometric::{center_crop, resize};
use crate::dataset::Image;
use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Square patches cut from a `grid×grid` partition, one per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    patches: Vec<Image>,
    grid: usize,
    source_cells: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn patches(&self) -> &[Image] {
        &self.patches
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn source_cells(&self) -> &[(usize, usize)] {
        &self.source_cells
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patches[0].height()
    }

    /// Same patches in a random order; `source_cells` follows them.
    pub fn shuffled(&self, rng: &mut Rng) -> PatchSet {
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        order.shuffle(rng);
        PatchSet {
            patches: order.iter().map(|&i| self.patches[i].clone()).collect(),
            grid: self.grid,
            source_cells: order.iter().map(|&i| self.source_cells[i]).collect(),
        }
    }
}

/// Resizes to `resize_dim`, optionally center-crops, then takes one random
/// `patch_size` crop inside each grid cell. Patches come out in row-major
/// cell order.
pub fn extract_jigsaw_patches(
    image: &Image,
    resize_dim: usize,
    crop: Option<usize>,
    grid: usize,
    patch_size: usize,
    rng: &mut Rng,
) -> Result<PatchSet> {
    if grid * grid != 4 && grid * grid != 9 {
        return invalid(format!("jigsaw grid {grid} must give 4 or 9 patches"));
    }
    let mut base = resize(image, resize_dim, resize_dim)?;
    if let Some(c) = crop {
        base = center_crop(&base, c, c)?;
    }
    let cell = base.height() / grid;
    if patch_size == 0 || patch_size > cell {
        return invalid(format!("patch {patch_size} larger than cell {cell}"));
    }
    let mut patches = Vec::with_capacity(grid * grid);
    let mut source_cells = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        for c in 0..grid {
            let y0 = r * cell + rng.random_range(0..=cell - patch_size);
            let x0 = c * cell + rng.random_range(0..=cell - patch_size);
            let mut p = Image::filled(patch_size, patch_size, [0.0; 3]);
            for y in 0..patch_size {
                for x in 0..patch_size {
                    p.set_pixel(y, x, base.pixel(y0 + y, x0 + x));
                }
            }
            patches.push(p);
            source_cells.push((r, c));
        }
    }
    Ok(PatchSet {
        patches,
        grid,
        source_cells,
    })
}
