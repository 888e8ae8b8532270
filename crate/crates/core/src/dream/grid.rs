use serde::{Deserialize, Serialize};

use crate::embedding::Rect;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: u32,
    pub width: u32,
}

impl ImageSize {
    pub fn new(height: u32, width: u32) -> Self {
        Self { height, width }
    }

    pub fn of(image: &image::RgbImage) -> Self {
        let (width, height) = image.dimensions();
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn min_side(&self) -> u32 {
        self.height.min(self.width)
    }
}

/// Row-major grid of `f64` values matching an image's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    size: ImageSize,
    data: Vec<f64>,
}

impl Grid {
    pub fn filled(size: ImageSize, value: f64) -> Self {
        Self {
            size,
            data: vec![value; size.pixels()],
        }
    }

    pub fn from_vec(size: ImageSize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size.pixels() {
            return Err(Error::invalid(format!(
                "grid data has {} values, {}x{} needs {}",
                data.len(),
                size.height,
                size.width,
                size.pixels()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.size.width as usize + x as usize]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Top-left corners of every sliding-window patch at one scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    image_size: ImageSize,
    patch_width: u32,
    patch_height: u32,
    stride: u32,
    /// `(x0, y0)` sorted row-major.
    positions: Vec<(u32, u32)>,
}

/// Start offsets along one axis: every multiple of `stride` that fits, plus a
/// final window flush with the far edge when the stride does not land on it.
fn axis_starts(extent: u32, window: u32, stride: u32) -> Vec<u32> {
    let last = extent - window;
    let mut starts: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Square `window` patches over `image_size` at the given stride.
///
/// Returns `Ok(None)` when the window does not fit inside the image; the
/// caller skips that scale. A stride longer than the window would leave
/// uncovered gaps between windows, so it is rejected.
pub fn extract_positions(
    image_size: ImageSize,
    window: u32,
    stride: u32,
) -> Result<Option<PatchGrid>> {
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if stride > window {
        return Err(Error::invalid(format!(
            "stride {stride} exceeds window {window}; pixels between windows would be uncovered"
        )));
    }
    if window > image_size.min_side() {
        return Ok(None);
    }
    let xs = axis_starts(image_size.width, window, stride);
    let ys = axis_starts(image_size.height, window, stride);
    let positions = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(Some(PatchGrid {
        image_size,
        patch_width: window,
        patch_height: window,
        stride,
        positions,
    }))
}

impl PatchGrid {
    /// One patch spanning the whole image.
    pub fn whole_image(image_size: ImageSize) -> Result<Self> {
        if image_size.pixels() == 0 {
            return Err(Error::invalid("image is empty"));
        }
        Ok(Self {
            image_size,
            patch_width: image_size.width,
            patch_height: image_size.height,
            stride: image_size.min_side(),
            positions: vec![(0, 0)],
        })
    }

    pub fn image_size(&self) -> ImageSize {
        self.image_size
    }

    /// Side length for square grids.
    pub fn window(&self) -> Option<u32> {
        (self.patch_width == self.patch_height).then_some(self.patch_width)
    }

    pub fn patch_dims(&self) -> (u32, u32) {
        (self.patch_width, self.patch_height)
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn positions(&self) -> &[(u32, u32)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn rect(&self, index: usize) -> Rect {
        let (x, y) = self.positions[index];
        Rect::new(x, y, self.patch_width, self.patch_height)
    }

    pub fn rects(&self) -> impl Iterator<Item = Rect> + '_ {
        (0..self.len()).map(|i| self.rect(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: u32, w: u32, window: u32, stride: u32) -> PatchGrid {
        extract_positions(ImageSize::new(h, w), window, stride)
            .unwrap()
            .unwrap()
    }

    #[test]
    fn divisible_grid() {
        let g = grid(64, 64, 32, 4);
        assert_eq!(g.len(), 81);
        assert_eq!(g.positions().first(), Some(&(0, 0)));
        assert_eq!(g.positions().last(), Some(&(32, 32)));
    }

    #[test]
    fn full_frame_window() {
        let g = grid(10, 10, 10, 4);
        assert_eq!(g.positions(), &[(0, 0)]);
    }

    #[test]
    fn edge_aligned_extra_window() {
        let g = grid(70, 70, 32, 4);
        let xs: Vec<u32> = g.positions().iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
        assert_eq!(xs, vec![0, 4, 8, 12, 16, 20, 24, 28, 32, 36, 38]);
        // brute-force count from the coverage-enumeration oracle
        assert_eq!(g.len(), 121);
    }

    #[test]
    fn rectangular_image() {
        let g = grid(40, 100, 32, 16);
        // x: 0,16,32,48,64,68; y: 0,8
        assert_eq!(g.len(), 12);
        assert!(g.rects().all(|r| r.x + r.width <= 100 && r.y + r.height <= 40));
    }

    #[test]
    fn oversized_window_is_skipped() {
        assert_eq!(extract_positions(ImageSize::new(20, 50), 32, 4).unwrap(), None);
    }

    #[test]
    fn invalid_parameters() {
        assert!(extract_positions(ImageSize::new(20, 20), 0, 4).is_err());
        assert!(extract_positions(ImageSize::new(20, 20), 8, 0).is_err());
        assert!(extract_positions(ImageSize::new(20, 20), 8, 9).is_err());
        assert!(extract_positions(ImageSize::new(20, 20), 8, 8).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn every_pixel_is_covered(h in 1u32..90, w in 1u32..90, window in 1u32..40, stride in 1u32..40) {
            proptest::prop_assume!(stride <= window && window <= h.min(w));
            let g = grid(h, w, window, stride);
            let mut count = vec![0u32; (h * w) as usize];
            for r in g.rects() {
                proptest::prop_assert!(r.x + r.width <= w && r.y + r.height <= h);
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        count[(y * w + x) as usize] += 1;
                    }
                }
            }
            proptest::prop_assert!(count.iter().all(|&c| c >= 1));
        }
    }

    #[test]
    fn positions_sorted_without_duplicates() {
        let g = grid(53, 61, 16, 5);
        let mut sorted: Vec<(u32, u32)> = g.positions().to_vec();
        sorted.sort_by_key(|&(x, y)| (y, x));
        sorted.dedup();
        assert_eq!(sorted, g.positions());
    }
}
