use rand::Rng as _;

use crate::dataset::Image;
use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Region confusion shuffle of a `k×k` cell grid.
///
/// Permutations are stored in gather form: `row_perms[r][c]` is the column
/// (within row `r`) whose cell lands at column `c`, and `col_perms[c][r]` is
/// the row (within column `c`) whose cell lands at row `r`. Rows are shuffled
/// first, then columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JigsawPermutation {
    k: usize,
    d: usize,
    row_perms: Vec<Vec<usize>>,
    col_perms: Vec<Vec<usize>>,
    origin_of: Vec<(usize, usize)>,
}

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

impl JigsawPermutation {
    pub fn identity(k: usize) -> Self {
        let id: Vec<usize> = (0..k).collect();
        Self::from_parts(k, 0, vec![id.clone(); k], vec![id; k]).expect("identity is valid")
    }

    /// Builds a permutation from explicit gather-form row and column shuffles.
    /// `d` is recorded as the neighbourhood range but not enforced here.
    pub fn from_parts(k: usize, d: usize, row_perms: Vec<Vec<usize>>, col_perms: Vec<Vec<usize>>) -> Result<Self> {
        if k < 1 || row_perms.len() != k || col_perms.len() != k {
            return invalid(format!("expected {k} row and column permutations"));
        }
        if !row_perms.iter().chain(&col_perms).all(|p| p.len() == k && is_bijection(p)) {
            return invalid("row/column shuffles must be bijections on 0..k");
        }
        let mut origin_of = Vec::with_capacity(k * k);
        for r in 0..k {
            for c in 0..k {
                let mid_row = col_perms[c][r];
                origin_of.push((mid_row, row_perms[mid_row][c]));
            }
        }
        Ok(Self {
            k,
            d,
            row_perms,
            col_perms,
            origin_of,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn range(&self) -> usize {
        self.d
    }

    pub fn row_perms(&self) -> &[Vec<usize>] {
        &self.row_perms
    }

    pub fn col_perms(&self) -> &[Vec<usize>] {
        &self.col_perms
    }

    /// Source cell of the cell now at destination `(r, c)`.
    pub fn origin_of(&self, r: usize, c: usize) -> (usize, usize) {
        self.origin_of[r * self.k + c]
    }

    pub fn is_identity(&self) -> bool {
        (0..self.k * self.k).all(|i| self.origin_of[i] == (i / self.k, i % self.k))
    }

    /// Largest displacement over every row and column shuffle.
    pub fn max_displacement(&self) -> usize {
        self.row_perms
            .iter()
            .chain(&self.col_perms)
            .flat_map(|p| p.iter().enumerate().map(|(i, &s)| i.abs_diff(s)))
            .max()
            .unwrap_or(0)
    }

    /// Checks bijectivity of every shuffle and of the cell map, and the
    /// `< 2D` displacement bound when `D ≥ 1`.
    pub fn validate(&self) -> Result<()> {
        if !self.row_perms.iter().chain(&self.col_perms).all(|p| is_bijection(p)) {
            return invalid("shuffle is not a bijection");
        }
        let flat: Vec<usize> = self.origin_of.iter().map(|&(r, c)| r * self.k + c).collect();
        if !is_bijection(&flat) {
            return invalid("cell map is not a bijection");
        }
        if self.d >= 1 && self.max_displacement() >= 2 * self.d {
            return invalid(format!(
                "displacement {} violates bound < {}",
                self.max_displacement(),
                2 * self.d
            ));
        }
        Ok(())
    }
}

/// Stable argsort of `i + offsets[i]`: entry `t` is the index placed at `t`.
pub fn permutation_from_offsets(offsets: &[i64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..offsets.len()).collect();
    idx.sort_by_key(|&i| i as i64 + offsets[i]);
    idx
}

fn draw(k: usize, d: usize, rng: &mut Rng) -> Vec<usize> {
    let d = d as i64;
    let offsets: Vec<i64> = (0..k).map(|_| rng.random_range(-d..=d)).collect();
    permutation_from_offsets(&offsets)
}

/// Draws one shuffle per row, then one per column, each from integer
/// offsets uniform on `[-D, D]`.
pub fn rcm_permutation(k: usize, d: usize, rng: &mut Rng) -> Result<JigsawPermutation> {
    if k < 2 {
        return invalid(format!("rcm grid k={k} must be at least 2"));
    }
    if d >= k {
        return invalid(format!("rcm range D={d} must be below k={k}"));
    }
    let row_perms = (0..k).map(|_| draw(k, d, rng)).collect();
    let col_perms = (0..k).map(|_| draw(k, d, rng)).collect();
    JigsawPermutation::from_parts(k, d, row_perms, col_perms)
}

fn cell_dims(image: &Image, k: usize) -> Result<(usize, usize)> {
    if image.height() % k != 0 || image.width() % k != 0 {
        return invalid(format!(
            "{}×{} image does not split into {k}×{k} cells",
            image.height(),
            image.width()
        ));
    }
    Ok((image.height() / k, image.width() / k))
}

/// Copies cells so that `out[dst(r, c)] = image[src(r, c)]`.
fn move_cells(image: &Image, k: usize, mapping: impl Fn(usize, usize) -> ((usize, usize), (usize, usize))) -> Result<Image> {
    let (ch, cw) = cell_dims(image, k)?;
    let mut out = Image::filled(image.height(), image.width(), [0.0; 3]);
    for r in 0..k {
        for c in 0..k {
            let ((dr, dc), (sr, sc)) = mapping(r, c);
            for y in 0..ch {
                for x in 0..cw {
                    out.set_pixel(dr * ch + y, dc * cw + x, image.pixel(sr * ch + y, sc * cw + x));
                }
            }
        }
    }
    Ok(out)
}

/// Deconstructs `image` by moving its cells according to `perm`.
pub fn apply_rcm(image: &Image, perm: &JigsawPermutation) -> Result<(Image, JigsawPermutation)> {
    let out = move_cells(image, perm.k, |r, c| ((r, c), perm.origin_of(r, c)))?;
    Ok((out, perm.clone()))
}

/// Puts every cell of a deconstructed image back where it came from.
pub fn reassemble(image: &Image, perm: &JigsawPermutation) -> Result<Image> {
    move_cells(image, perm.k, |r, c| (perm.origin_of(r, c), (r, c)))
}

/// Per destination cell, the normalized `(row, col)` of its source cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationTargets {
    k: usize,
    coords: Vec<[f64; 2]>,
}

impl LocationTargets {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn at(&self, r: usize, c: usize) -> [f64; 2] {
        self.coords[r * self.k + c]
    }

    /// Row-major `k·k` pairs.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Flat source cell index `row·k + col` per destination cell, used by the
    /// classification form of the location loss.
    pub fn cell_indices(&self) -> Vec<usize> {
        let k = self.k;
        let idx = |t: f64| ((t + 1.0) * (k - 1) as f64 / 2.0).round() as usize;
        self.coords.iter().map(|&[r, c]| idx(r) * k + idx(c)).collect()
    }
}

fn normalize(idx: usize, k: usize) -> f64 {
    2.0 * idx as f64 / (k - 1) as f64 - 1.0
}

pub fn location_targets(perm: &JigsawPermutation) -> LocationTargets {
    let k = perm.k;
    let coords = perm
        .origin_of
        .iter()
        .map(|&(r, c)| [normalize(r, k), normalize(c, k)])
        .collect();
    LocationTargets { k, coords }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = stream(seed, &[99]);
        let data = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn zero_range_is_identity() {
        for seed in 0..20 {
            let p = rcm_permutation(5, 0, &mut stream(seed, &[5])).unwrap();
            assert!(p.is_identity());
            assert_eq!(p.max_displacement(), 0);
        }
    }

    #[test]
    fn bound_holds_over_many_seeds() {
        for seed in 0..1000 {
            let p = rcm_permutation(7, 2, &mut stream(seed, &[5])).unwrap();
            assert!(p.max_displacement() < 4, "seed {seed}");
            p.validate().unwrap();
        }
    }

    #[test]
    fn two_cell_swap() {
        // d = (+1, -1) gives p = (1, 0) in zero-based positions
        assert_eq!(permutation_from_offsets(&[1, -1]), vec![1, 0]);
        // p = (1, 2, 1): ties keep index order
        assert_eq!(permutation_from_offsets(&[1, 1, -1]), vec![0, 2, 1]);
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut rng = stream(0, &[5]);
        assert!(rcm_permutation(4, 4, &mut rng).is_err());
        assert!(rcm_permutation(1, 0, &mut rng).is_err());
        assert!(rcm_permutation(4, 3, &mut rng).is_ok());
    }

    #[test]
    fn row_first_composition() {
        let k = 2;
        let swap = vec![1, 0];
        let id = vec![0, 1];
        // swap columns in row 0 only, then swap rows in column 1 only
        let p = JigsawPermutation::from_parts(k, 1, vec![swap.clone(), id.clone()], vec![id, swap]).unwrap();
        // after rows: [[(0,1),(0,0)],[(1,0),(1,1)]]; then column 1 rows swap
        assert_eq!(p.origin_of(0, 0), (0, 1));
        assert_eq!(p.origin_of(0, 1), (1, 1));
        assert_eq!(p.origin_of(1, 0), (1, 0));
        assert_eq!(p.origin_of(1, 1), (0, 0));
    }

    #[test]
    fn apply_examples() {
        let im = random_image(8, 8, 1);
        let (out, _) = apply_rcm(&im, &JigsawPermutation::identity(4)).unwrap();
        assert_eq!(out, im);
        assert!(apply_rcm(&random_image(6, 8, 1), &JigsawPermutation::identity(4)).is_err());

        let perm = rcm_permutation(4, 2, &mut stream(3, &[5])).unwrap();
        let (out, _) = apply_rcm(&im, &perm).unwrap();
        let cells = |img: &Image| {
            let mut v: Vec<Vec<u32>> = Vec::new();
            for r in 0..4 {
                for c in 0..4 {
                    let mut cell = Vec::new();
                    for y in 0..2 {
                        for x in 0..2 {
                            cell.extend(img.pixel(r * 2 + y, c * 2 + x).map(f32::to_bits));
                        }
                    }
                    v.push(cell);
                }
            }
            v.sort();
            v
        };
        assert_eq!(cells(&out), cells(&im));
        let (ri, ci) = perm.origin_of(2, 3);
        assert_eq!(out.pixel(2 * 2, 3 * 2), im.pixel(ri * 2, ci * 2));
    }

    #[test]
    fn target_examples() {
        let t = location_targets(&JigsawPermutation::identity(2));
        assert_eq!(t.coords(), &[[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
        let t = location_targets(&JigsawPermutation::identity(3));
        assert_eq!(t.at(1, 1), [0.0, 0.0]);

        let perm = rcm_permutation(4, 3, &mut stream(8, &[5])).unwrap();
        let t = location_targets(&perm);
        let key = |v: &[[f64; 2]]| {
            let mut k: Vec<(i64, i64)> = v.iter().map(|p| ((p[0] * 3.0) as i64, (p[1] * 3.0) as i64)).collect();
            k.sort();
            k
        };
        assert_eq!(key(t.coords()), key(location_targets(&JigsawPermutation::identity(4)).coords()));
        let mut idx = t.cell_indices();
        assert_eq!(idx[0], perm.origin_of(0, 0).0 * 4 + perm.origin_of(0, 0).1);
        idx.sort();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn roundtrip_is_bitwise(seed in 0u64..10_000, k in prop::sample::select(vec![2usize, 3, 4]), d in 0usize..2) {
            let im = random_image(12, 12, seed);
            let perm = rcm_permutation(k, d.min(k - 1), &mut stream(seed, &[5])).unwrap();
            let (out, perm) = apply_rcm(&im, &perm).unwrap();
            prop_assert_eq!(reassemble(&out, &perm).unwrap(), im);
        }

        #[test]
        fn constraint_holds(seed in 0u64..100_000, k in 2usize..9, d in 1usize..4) {
            prop_assume!(d < k);
            let perm = rcm_permutation(k, d, &mut stream(seed, &[5])).unwrap();
            prop_assert!(perm.validate().is_ok());
        }
    }
}
