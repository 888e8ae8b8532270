//! Seeded toy image-text-MOS data for smoke runs.
//!
//! Each image is gray noise with one planted square whose brightness `level`
//! is drawn uniformly from `[0, 1]`. Each description reports an artifact
//! `severity` in `0..=3`. The score depends on both:
//! `mos = 1 + 2.5 * level + 0.5 * (3 - severity)`, so it spans `[1, 5]` and
//! neither modality alone determines it.

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, RealnessRecord, Source, Verdict};
use crate::error::{Error, Result};
use crate::regressor::Sample;

const DESCRIPTIONS: [&str; 4] = [
    "",
    "A faint seam runs along one edge of the square.",
    "The square has warped edges and smeared texture.",
    "The square is badly distorted, with melted and broken edges.",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 32,
            image_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticItem {
    pub id: String,
    pub image: RgbImage,
    pub description: String,
    pub verdict: Verdict,
    pub level: f64,
    pub severity: u8,
    pub mos: f64,
}

pub fn mos_for(level: f64, severity: u8) -> f64 {
    1.0 + 2.5 * level + 0.5 * f64::from(3 - severity.min(3))
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticItem>> {
    if spec.count == 0 || spec.image_size < 8 {
        return Err(Error::invalid("synthetic set needs count > 0 and image_size >= 8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.image_size;
    let side = s / 3;
    let items = (0..spec.count)
        .map(|i| {
            let level: f64 = rng.random_range(0.0..=1.0);
            let severity: u8 = rng.random_range(0..4);
            let mut image = RgbImage::from_fn(s, s, |_, _| {
                let v = rng.random_range(50..=90u8);
                Rgb([v, v, v])
            });
            let (x0, y0) = (rng.random_range(0..=s - side), rng.random_range(0..=s - side));
            let v = (40.0 + 200.0 * level).round() as u8;
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    image.put_pixel(x, y, Rgb([v, v, v]));
                }
            }
            let verdict = match severity {
                0 => Verdict::No,
                1 => Verdict::Somewhat,
                _ => Verdict::Yes,
            };
            SyntheticItem {
                id: format!("syn{i:04}"),
                image,
                description: DESCRIPTIONS[severity as usize].to_owned(),
                verdict,
                level,
                severity,
                mos: mos_for(level, severity),
            }
        })
        .collect();
    Ok(items)
}

pub fn to_samples(items: &[SyntheticItem]) -> Vec<Sample> {
    items
        .iter()
        .map(|it| Sample {
            id: it.id.clone(),
            image: Arc::new(it.image.clone()),
            description: it.description.clone(),
            mos: it.mos,
        })
        .collect()
}

/// Writes `images/<id>.png` and `manifest.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, items: &[SyntheticItem]) -> Result<DatasetManifest> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(items.len());
    for it in items {
        let rel = format!("images/{}.png", it.id);
        let path = dir.join(&rel);
        it.image.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let mut r = RealnessRecord::new(&it.id, rel, it.mos);
        r.description = it.description.clone();
        r.verdict = it.verdict;
        r.source = Source::Synthetic;
        records.push(r);
    }
    let mut manifest = DatasetManifest::new(records)?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    manifest.base_dir = Some(dir.to_owned());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_in_range() {
        let spec = SyntheticSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.len(), 32);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mos, y.mos);
            assert!((1.0..=5.0).contains(&x.mos));
            assert_eq!(x.mos, mos_for(x.level, x.severity));
            assert_eq!(x.description.is_empty(), x.severity == 0);
        }
        assert_ne!(generate(&SyntheticSpec { seed: 1, ..spec }).unwrap()[0].image, a[0].image);
    }

    #[test]
    fn written_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let items = generate(&SyntheticSpec {
            count: 5,
            ..Default::default()
        })
        .unwrap();
        write_dataset(dir.path(), &items).unwrap();
        let m = crate::dataset::load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m.len(), 5);
        let s = Sample::from_record(&m.records[2], m.base_dir.as_deref()).unwrap();
        assert_eq!(*s.image, items[2].image);
    }
}
