use super::{BBox, Vec2};
use crate::{Error, Result};

/// `rows × cols` grid of `dim`-dimensional tokens laid over an image;
/// token `(r, c)` covers pixels `[c·sx, (c+1)·sx) × [r·sy, (r+1)·sy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    /// Pixels per token along x and y.
    pub pixels_per_token: Vec2,
    /// Row-major tokens, `rows · cols · dim` values.
    pub data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, pixels_per_token: Vec2, data: Vec<f64>) -> Result<Self> {
        if rows * cols * dim != data.len() {
            return Err(Error::SizeMismatch(format!("{rows}×{cols}×{dim} grid with {} values", data.len())));
        }
        Ok(Self { rows, cols, dim, pixels_per_token, data })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cell_center(&self, index: usize) -> Vec2 {
        cell_center(self.cols, &self.pixels_per_token, index)
    }
}

fn cell_center(cols: usize, ppt: &Vec2, index: usize) -> Vec2 {
    let (r, c) = (index / cols, index % cols);
    Vec2::new((c as f64 + 0.5) * ppt.x, (r as f64 + 0.5) * ppt.y)
}

/// Averaging weights for [`region_pool`]: every token whose cell center
/// lies inside `b` (closed box) gets weight `1/k`; if none does, the token
/// nearest the box center gets weight 1 (ties go to the lower index).
pub fn region_pool_weights(rows: usize, cols: usize, pixels_per_token: &Vec2, b: &BBox) -> Vec<(usize, f64)> {
    let n = rows * cols;
    let inside: Vec<usize> = (0..n).filter(|&i| b.contains(&cell_center(cols, pixels_per_token, i))).collect();
    if inside.is_empty() {
        let nearest = (0..n)
            .map(|i| (i, (cell_center(cols, pixels_per_token, i) - b.center).norm_squared()))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        return vec![(nearest, 1.0)];
    }
    let w = 1.0 / inside.len() as f64;
    inside.into_iter().map(|i| (i, w)).collect()
}

/// Region-based average pooling of `grid` inside pixel box `b`.
pub fn region_pool(grid: &TokenGrid, b: &BBox) -> Result<Vec<f64>> {
    if grid.is_empty() || grid.dim == 0 {
        return Err(Error::InvalidInput("cannot pool an empty token grid".into()));
    }
    let mut out = vec![0.0; grid.dim];
    for (i, w) in region_pool_weights(grid.rows, grid.cols, &grid.pixels_per_token, b) {
        for (o, v) in out.iter_mut().zip(grid.token(i)) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng) -> TokenGrid {
        let data = (0..4 * 4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        TokenGrid::new(4, 4, 3, Vec2::new(16.0, 16.0), data).unwrap()
    }

    #[test]
    fn constant_grid_pools_to_constant() {
        let g = TokenGrid::new(4, 4, 2, Vec2::new(8.0, 8.0), [0.25, -2.0].repeat(16)).unwrap();
        for b in [
            BBox { center: Vec2::new(5.0, 5.0), size: Vec2::new(3.0, 3.0) },
            BBox { center: Vec2::new(16.0, 16.0), size: Vec2::new(32.0, 32.0) },
        ] {
            let p = region_pool(&g, &b).unwrap();
            assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] + 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn box_over_first_two_tokens_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_grid(&mut rng);
        // covers [0, 32] × [0, 16]: centers (8,8) and (24,8)
        let b = BBox::from_min_max(Vec2::new(0.0, 0.0), Vec2::new(32.0, 16.0));
        let p = region_pool(&g, &b).unwrap();
        let covered: Vec<usize> = (0..g.len()).filter(|&i| b.contains(&g.cell_center(i))).collect();
        assert_eq!(covered, vec![0, 1]);
        for k in 0..3 {
            assert!((p[k] - 0.5 * (g.token(0)[k] + g.token(1)[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn sub_cell_box_falls_back_to_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_grid(&mut rng);
        // between centers (24,24) and (40,24), closer to the first
        let b = BBox { center: Vec2::new(27.0, 25.0), size: Vec2::new(2.0, 2.0) };
        assert_eq!(region_pool_weights(4, 4, &g.pixels_per_token, &b), vec![(5, 1.0)]);
        assert_eq!(region_pool(&g, &b).unwrap(), g.token(5).to_vec());
    }

    #[test]
    fn tokens_outside_box_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_grid(&mut rng);
        let b = BBox::from_min_max(Vec2::new(10.0, 10.0), Vec2::new(40.0, 30.0));
        let before = region_pool(&g, &b).unwrap();
        let mut shuffled = g.clone();
        let outside: Vec<usize> = (0..g.len()).filter(|&i| !b.contains(&g.cell_center(i))).collect();
        for (a, bi) in outside.iter().zip(outside.iter().rev()) {
            for k in 0..3 {
                shuffled.data[a * 3 + k] = g.data[bi * 3 + k];
            }
        }
        assert_eq!(region_pool(&shuffled, &b).unwrap(), before);
    }
}
