use rayon::prelude::*;

use super::grid::{Grid, ImageSize, PatchGrid};
use crate::embedding::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};

/// Realness of one patch: one minus its cosine similarity to the
/// inconsistency description. Patches that match the description well are
/// the unrealistic ones. Always in `[0, 2]`.
pub fn patch_realness(patch: &EmbeddingVector, text: &EmbeddingVector) -> Result<f64> {
    Ok(1.0 - cosine_similarity(patch, text)?)
}

/// Per-pixel aggregation of patch scores at a single window size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    window: (u32, u32),
    size: ImageSize,
    sum: Vec<f64>,
    count: Vec<u32>,
    mean: Grid,
}

impl ScaleMap {
    /// `(width, height)` of the patches at this scale.
    pub fn patch_dims(&self) -> (u32, u32) {
        self.window
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn sum_grid(&self) -> &[f64] {
        &self.sum
    }

    pub fn count_grid(&self) -> &[u32] {
        &self.count
    }

    pub fn mean_grid(&self) -> &Grid {
        &self.mean
    }
}

/// Averages the scores of every patch covering each pixel.
///
/// Rows are filled independently, and inside a row patches are added in grid
/// order, so the result does not depend on thread scheduling. Scores are
/// summed as offsets from the first patch score, which keeps the sums small
/// and makes the mean of a constant field exactly that constant.
pub fn accumulate_scale(grid: &PatchGrid, scores: &[f64]) -> Result<ScaleMap> {
    if scores.len() != grid.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} patches",
            scores.len(),
            grid.len()
        )));
    }
    if let Some(i) = scores
        .iter()
        .position(|s| !s.is_finite() || !(0.0..=2.0).contains(s))
    {
        return Err(Error::invalid(format!(
            "patch score {} at index {i} outside [0, 2]",
            scores[i]
        )));
    }
    let size = grid.image_size();
    let width = size.width as usize;
    let (patch_w, patch_h) = grid.patch_dims();

    // positions are row-major, so each distinct y0 owns a contiguous run
    let mut bands: Vec<(u32, std::ops::Range<usize>)> = Vec::new();
    for (i, &(_, y0)) in grid.positions().iter().enumerate() {
        match bands.last_mut() {
            Some((y, range)) if *y == y0 => range.end = i + 1,
            _ => bands.push((y0, i..i + 1)),
        }
    }

    let reference = scores.first().copied().unwrap_or(0.0);
    let mut offset = vec![0.0f64; size.pixels()];
    let mut count = vec![0u32; size.pixels()];
    offset.par_chunks_mut(width)
        .zip(count.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (sum_row, count_row))| {
            let y = y as u32;
            for (y0, range) in &bands {
                if y < *y0 || y >= y0 + patch_h {
                    continue;
                }
                for i in range.clone() {
                    let x0 = grid.positions()[i].0 as usize;
                    let r = scores[i] - reference;
                    for x in x0..x0 + patch_w as usize {
                        sum_row[x] += r;
                        count_row[x] += 1;
                    }
                }
            }
        });

    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "pixel ({}, {}) is not covered by any patch",
            i % width,
            i / width
        )));
    }
    let mean = offset
        .iter()
        .zip(&count)
        .map(|(&d, &c)| reference + d / f64::from(c))
        .collect();
    let sum = offset
        .iter()
        .zip(&count)
        .map(|(&d, &c)| reference * f64::from(c) + d)
        .collect();
    Ok(ScaleMap {
        window: (patch_w, patch_h),
        size,
        sum,
        count,
        mean: Grid::from_vec(size, mean)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dream::grid::extract_positions;

    fn e(dim: usize, axis: usize) -> EmbeddingVector {
        EmbeddingVector::axis(dim, axis).unwrap()
    }

    #[test]
    fn realness_extremes() {
        let u = EmbeddingVector::new(vec![0.2, -0.4, 0.9]).unwrap();
        assert!(patch_realness(&u, &u).unwrap().abs() < 1e-9);
        assert!((patch_realness(&u, &-u.clone()).unwrap() - 2.0).abs() < 1e-9);
        assert!((patch_realness(&e(3, 0), &e(3, 2)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_patch_mean() {
        // 8 wide, 4 tall, windows of 4 at stride 2: x0 in {0, 2, 4}
        let g = extract_positions(ImageSize::new(4, 8), 4, 2).unwrap().unwrap();
        let m = accumulate_scale(&g, &[0.2, 0.4, 0.6]).unwrap();
        // column 1 is covered only by the first patch, column 2 by the first two
        assert!((m.mean_grid().get(1, 0) - 0.2).abs() < 1e-12);
        assert!((m.mean_grid().get(2, 0) - 0.3).abs() < 1e-12);
        assert_eq!(m.count_grid()[2], 2);
        assert!((m.mean_grid().get(7, 3) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_constant_map() {
        let g = extract_positions(ImageSize::new(37, 29), 8, 3).unwrap().unwrap();
        let m = accumulate_scale(&g, &vec![0.7; g.len()]).unwrap();
        assert!(m.mean_grid().as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn length_mismatch() {
        let g = extract_positions(ImageSize::new(16, 16), 8, 4).unwrap().unwrap();
        assert!(matches!(
            accumulate_scale(&g, &[0.1, 0.2]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn out_of_range_score() {
        let g = extract_positions(ImageSize::new(8, 8), 8, 4).unwrap().unwrap();
        assert!(accumulate_scale(&g, &[2.5]).is_err());
        assert!(accumulate_scale(&g, &[f64::NAN]).is_err());
    }
}
