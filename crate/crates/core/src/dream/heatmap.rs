use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::grid::{Grid, ImageSize};
use crate::error::{Error, Result};

/// Value-to-color maps. Realness 0 always maps to the first stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    /// Diverging red-yellow-green: unrealistic regions come out red.
    #[default]
    RdYlGn,
    Jet,
    Gray,
}

const RDYLGN: [[f64; 3]; 5] = [
    [165.0, 0.0, 38.0],
    [244.0, 109.0, 67.0],
    [255.0, 255.0, 191.0],
    [166.0, 217.0, 106.0],
    [0.0, 104.0, 55.0],
];

const JET: [[f64; 3]; 5] = [
    [0.0, 0.0, 143.0],
    [0.0, 128.0, 255.0],
    [128.0, 255.0, 128.0],
    [255.0, 128.0, 0.0],
    [128.0, 0.0, 0.0],
];

const GRAY: [[f64; 3]; 2] = [[0.0, 0.0, 0.0], [255.0, 255.0, 255.0]];

impl Colormap {
    fn stops(&self) -> &'static [[f64; 3]] {
        match self {
            Colormap::RdYlGn => &RDYLGN,
            Colormap::Jet => &JET,
            Colormap::Gray => &GRAY,
        }
    }

    /// Linear interpolation between evenly spaced stops; input clamped to [0, 1].
    pub fn color_f64(&self, value: f64) -> [f64; 3] {
        let stops = self.stops();
        let t = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        let pos = t * (stops.len() - 1) as f64;
        let i = (pos.floor() as usize).min(stops.len() - 2);
        let frac = pos - i as f64;
        let (a, b) = (stops[i], stops[i + 1]);
        [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * frac)
    }

    pub fn color(&self, value: f64) -> Rgb<u8> {
        Rgb(self.color_f64(value).map(|c| c.round() as u8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapOptions {
    pub colormap: Colormap,
    /// Weight of the colormap layer over the photo; 1.0 gives the bare heatmap.
    pub alpha: f64,
}

impl Default for HeatmapOptions {
    fn default() -> Self {
        Self {
            colormap: Colormap::RdYlGn,
            alpha: 0.6,
        }
    }
}

/// Blends a color-mapped realness grid over the source image.
pub fn render_heatmap(grid: &Grid, image: &RgbImage, options: &HeatmapOptions) -> Result<RgbImage> {
    let size = ImageSize::of(image);
    if grid.size() != size {
        return Err(Error::invalid(format!(
            "grid is {}x{}, image is {}x{}",
            grid.size().height,
            grid.size().width,
            size.height,
            size.width
        )));
    }
    if !(0.0..=1.0).contains(&options.alpha) {
        return Err(Error::invalid("heatmap alpha must lie in [0, 1]"));
    }
    let a = options.alpha;
    Ok(RgbImage::from_fn(size.width, size.height, |x, y| {
        let heat = options.colormap.color_f64(grid.get(x, y));
        let px = image.get_pixel(x, y);
        Rgb([0, 1, 2].map(|c| (a * heat[c] + (1.0 - a) * f64::from(px[c])).round() as u8))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_first_stop() {
        for cm in [Colormap::RdYlGn, Colormap::Jet, Colormap::Gray] {
            let first = cm.stops()[0].map(|c| c as u8);
            assert_eq!(cm.color(0.0).0, first);
            let last = cm.stops()[cm.stops().len() - 1].map(|c| c as u8);
            assert_eq!(cm.color(1.0).0, last);
        }
    }

    #[test]
    fn uniform_half_map_gives_uniform_overlay() {
        let size = ImageSize::new(12, 9);
        let grid = Grid::filled(size, 0.5);
        let img = RgbImage::from_pixel(9, 12, Rgb([40, 90, 200]));
        let out = render_heatmap(&grid, &img, &HeatmapOptions::default()).unwrap();
        let first = *out.get_pixel(0, 0);
        assert!(out.pixels().all(|p| *p == first));

        let bare = render_heatmap(
            &grid,
            &img,
            &HeatmapOptions {
                alpha: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(*bare.get_pixel(3, 3), Colormap::RdYlGn.color(0.5));
    }

    #[test]
    fn dimension_mismatch() {
        let grid = Grid::filled(ImageSize::new(4, 4), 0.5);
        let img = RgbImage::new(5, 4);
        assert!(render_heatmap(&grid, &img, &HeatmapOptions::default()).is_err());
    }
}
