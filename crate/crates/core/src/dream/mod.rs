//! Dense realness mapping.
//!
//! Overlapping square windows at several sizes are slid across the image.
//! Each window is scored against the text description of what looks
//! unrealistic (`1 - cos`), scores are averaged per pixel at each scale, the
//! scales are fused elementwise and the result is min-max normalized.

mod export;
mod grid;
mod heatmap;
mod scale;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::embedding::{encode_patches, encode_text, EmbeddingBackend, Patch};
use crate::error::{Error, Result};

pub use export::{load_grid, save_grid, StoredMap, GRID_MAGIC};
pub use grid::{extract_positions, Grid, ImageSize, PatchGrid};
pub use heatmap::{render_heatmap, Colormap, HeatmapOptions};
pub use scale::{accumulate_scale, patch_realness, ScaleMap};

/// Number of patches materialized and encoded at a time.
const ENCODE_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Max,
    Min,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Fusion::Max),
            "min" => Ok(Fusion::Min),
            other => Err(Error::invalid(format!("unknown fusion rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePolicy {
    /// Regular stride grid plus one window flush with the far edge.
    #[default]
    EdgeAlignedExtraWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DreamConfig {
    pub windows: Vec<u32>,
    pub stride: u32,
    pub fusion: Fusion,
    pub edge_policy: EdgePolicy,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self {
            windows: vec![128, 64, 32],
            stride: 4,
            fusion: Fusion::Max,
            edge_policy: EdgePolicy::EdgeAlignedExtraWindow,
        }
    }
}

impl DreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::invalid("at least one window size is required"));
        }
        if self.windows.contains(&0) {
            return Err(Error::invalid("window sizes must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        let smallest = self.windows.iter().min().copied().unwrap_or(0);
        if self.stride > smallest {
            return Err(Error::invalid(format!(
                "stride {} exceeds the smallest window {smallest}",
                self.stride
            )));
        }
        Ok(())
    }
}

/// Elementwise fusion of per-scale mean grids.
pub fn fuse_scales(maps: &[ScaleMap], fusion: Fusion) -> Result<Grid> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no scale maps to fuse"))?;
    let size = first.size();
    if let Some(m) = maps.iter().find(|m| m.size() != size) {
        return Err(Error::invalid(format!(
            "scale map is {}x{}, expected {}x{}",
            m.size().height,
            m.size().width,
            size.height,
            size.width
        )));
    }
    let mut fused = first.mean_grid().as_slice().to_vec();
    for m in &maps[1..] {
        for (f, &v) in fused.iter_mut().zip(m.mean_grid().as_slice()) {
            *f = match fusion {
                Fusion::Max => f.max(v),
                Fusion::Min => f.min(v),
            };
        }
    }
    Grid::from_vec(size, fused)
}

/// Global min-max normalization to `[0, 1]`. A constant grid carries no
/// spatial contrast and maps to 0.5 everywhere.
pub fn normalize_map(fused: &Grid) -> Grid {
    let (lo, hi) = fused.min_max();
    let span = hi - lo;
    if !(span > 0.0) {
        return Grid::filled(fused.size(), 0.5);
    }
    let data = fused.as_slice().iter().map(|&v| (v - lo) / span).collect();
    Grid::from_vec(fused.size(), data).expect("same size")
}

#[derive(Debug, Clone)]
pub struct RealnessMap {
    pub description: String,
    /// Window sizes that fit the image, in configuration order.
    pub scales_used: Vec<u32>,
    /// Set when no window fit and the whole image was scored as one patch.
    pub whole_image_fallback: bool,
    pub scale_maps: Vec<ScaleMap>,
    pub fused_grid: Grid,
    pub final_grid: Grid,
}

impl RealnessMap {
    pub fn size(&self) -> ImageSize {
        self.final_grid.size()
    }
}

fn score_grid(
    image: &RgbImage,
    grid: &PatchGrid,
    text: &crate::embedding::EmbeddingVector,
    backend: &dyn EmbeddingBackend,
) -> Result<ScaleMap> {
    let mut scores = Vec::with_capacity(grid.len());
    let rects: Vec<_> = grid.rects().collect();
    for chunk in rects.chunks(ENCODE_CHUNK) {
        let patches: Vec<Patch> = chunk.iter().map(|&rect| Patch { image, rect }).collect();
        for u in encode_patches(&patches, backend)? {
            scores.push(patch_realness(&u, text)?);
        }
    }
    accumulate_scale(grid, &scores)
}

/// Full dense realness pipeline for one image and its inconsistency text.
pub fn compute_realness_map(
    image: &RgbImage,
    description: &str,
    backend: &dyn EmbeddingBackend,
    config: &DreamConfig,
) -> Result<RealnessMap> {
    config.validate()?;
    let size = ImageSize::of(image);
    if size.pixels() == 0 {
        return Err(Error::invalid("image is empty"));
    }
    let text = encode_text(description, backend)?;

    let mut scales_used = Vec::new();
    let mut scale_maps = Vec::new();
    for &window in &config.windows {
        let Some(grid) = extract_positions(size, window, config.stride)? else {
            tracing::debug!(window, ?size, "window larger than image, skipping scale");
            continue;
        };
        scale_maps.push(score_grid(image, &grid, &text, backend)?);
        scales_used.push(window);
    }
    let whole_image_fallback = scale_maps.is_empty();
    if whole_image_fallback {
        let grid = PatchGrid::whole_image(size)?;
        scale_maps.push(score_grid(image, &grid, &text, backend)?);
    }

    let fused_grid = fuse_scales(&scale_maps, config.fusion)?;
    let final_grid = normalize_map(&fused_grid);
    Ok(RealnessMap {
        description: description.to_owned(),
        scales_used,
        whole_image_fallback,
        scale_maps,
        fused_grid,
        final_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingVector, MockField, PlantedRegion, Rect};

    fn constant_scale(size: ImageSize, value: f64) -> ScaleMap {
        let g = extract_positions(size, size.min_side(), 1).unwrap().unwrap();
        accumulate_scale(&g, &vec![value; g.len()]).unwrap()
    }

    #[test]
    fn fusion_max_and_min() {
        let size = ImageSize::new(4, 4);
        let maps = [
            constant_scale(size, 0.2),
            constant_scale(size, 0.5),
            constant_scale(size, 0.4),
        ];
        let max = fuse_scales(&maps, Fusion::Max).unwrap();
        assert!(max.as_slice().iter().all(|&v| v == 0.5));
        let min = fuse_scales(&maps, Fusion::Min).unwrap();
        assert!(min.as_slice().iter().all(|&v| v == 0.2));
        let single = fuse_scales(&maps[..1], Fusion::Max).unwrap();
        assert_eq!(&single, maps[0].mean_grid());
    }

    #[test]
    fn fusion_errors() {
        assert!(fuse_scales(&[], Fusion::Max).is_err());
        let a = constant_scale(ImageSize::new(4, 4), 0.1);
        let b = constant_scale(ImageSize::new(4, 5), 0.1);
        assert!(fuse_scales(&[a, b], Fusion::Max).is_err());
    }

    #[test]
    fn normalization_rules() {
        let g = Grid::from_vec(ImageSize::new(1, 3), vec![0.5, 1.0, 1.5]).unwrap();
        assert_eq!(normalize_map(&g).as_slice(), &[0.0, 0.5, 1.0]);
        let c = Grid::filled(ImageSize::new(3, 3), 0.8);
        assert!(normalize_map(&c).as_slice().iter().all(|&v| v == 0.5));
        let unit = Grid::from_vec(ImageSize::new(1, 4), vec![0.0, 0.25, 1.0, 0.6]).unwrap();
        assert_eq!(normalize_map(&unit), unit);
    }

    #[test]
    fn config_validation() {
        assert!(DreamConfig::default().validate().is_ok());
        let bad = DreamConfig {
            stride: 0,
            ..DreamConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DreamConfig {
            windows: vec![32, 0],
            ..DreamConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("MAX".parse::<Fusion>().unwrap(), Fusion::Max);
        assert!("mean".parse::<Fusion>().is_err());
    }

    #[test]
    fn all_scales_fit() {
        let field = MockField::new(
            EmbeddingVector::axis(8, 0).unwrap(),
            EmbeddingVector::axis(8, 1).unwrap(),
            vec![],
            64,
        )
        .unwrap();
        let img = RgbImage::new(256, 256);
        let map = compute_realness_map(&img, "warped arches", &field, &DreamConfig::default())
            .unwrap();
        assert_eq!(map.scales_used, vec![128, 64, 32]);
        assert!(!map.whole_image_fallback);
        // no planted regions: uniform map
        assert!(map.final_grid.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn small_image_skips_and_falls_back() {
        let field = MockField::new(
            EmbeddingVector::axis(8, 0).unwrap(),
            EmbeddingVector::axis(8, 1).unwrap(),
            vec![PlantedRegion {
                rect: Rect::new(0, 0, 10, 10),
                vector: EmbeddingVector::axis(8, 1).unwrap(),
            }],
            64,
        )
        .unwrap();
        let img = RgbImage::new(100, 48);
        let map = compute_realness_map(&img, "text", &field, &DreamConfig::default()).unwrap();
        assert_eq!(map.scales_used, vec![32]);

        let tiny = RgbImage::new(20, 12);
        let map = compute_realness_map(&tiny, "text", &field, &DreamConfig::default()).unwrap();
        assert!(map.scales_used.is_empty());
        assert!(map.whole_image_fallback);
        assert!(map.final_grid.as_slice().iter().all(|&v| v == 0.5));

        let empty = RgbImage::new(0, 0);
        assert!(compute_realness_map(&empty, "text", &field, &DreamConfig::default()).is_err());
    }
}
