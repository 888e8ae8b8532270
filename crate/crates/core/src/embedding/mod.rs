//! Joint image-patch / text embedding backends.
//!
//! Dense realness mapping only needs two things from a vision-language model:
//! an embedding for a text description and embeddings for many rectangular
//! crops of one image, all living in the same space. [`EmbeddingBackend`]
//! captures exactly that. [`MockField`] is a deterministic geometric backend
//! used as a test oracle; [`ClipBackend`] wraps a pretrained CLIP ViT-B/32.

mod clip;
mod mock;

use std::path::PathBuf;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clip::{ClipBackend, ClipBackendConfig};
pub use mock::{MockField, MockFieldSpec, PlantedRegion, VectorSpec};

/// A finite, nonzero embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("embedding entry {i} is not finite")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("zero embedding vector"));
        }
        Ok(Self { values })
    }

    /// Standard basis vector `e_axis` in `dim` dimensions.
    pub fn axis(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(Error::invalid(format!("axis {axis} out of range for dim {dim}")));
        }
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Self::new(values)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

impl std::ops::Neg for EmbeddingVector {
    type Output = EmbeddingVector;

    fn neg(mut self) -> Self::Output {
        self.values.iter_mut().for_each(|v| *v = -*v);
        self
    }
}

/// Cosine similarity computed in double precision and clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub embedding_dim: usize,
    pub max_batch: usize,
}

/// Axis-aligned rectangle in image pixel coordinates (`x` is the column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn overlap_area(&self, other: &Rect) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width).min(other.x + other.width);
        let y1 = (self.y + self.height).min(other.y + other.height);
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            u64::from(x1 - x0) * u64::from(y1 - y0)
        }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

/// A rectangular crop of a source image, not yet materialized.
#[derive(Debug, Clone, Copy)]
pub struct Patch<'a> {
    pub image: &'a RgbImage,
    pub rect: Rect,
}

/// A model producing text and image-patch embeddings in one joint space.
///
/// Implementations must be usable from several threads at once; batching is
/// driven by [`encode_patches`], which never hands a backend more than
/// `descriptor().max_batch` patches per call.
pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn embed_text(&self, description: &str) -> Result<EmbeddingVector>;

    fn embed_patch_batch(&self, patches: &[Patch<'_>]) -> Result<Vec<EmbeddingVector>>;
}

fn check_dim(backend: &dyn EmbeddingBackend, v: &EmbeddingVector) -> Result<()> {
    let desc = backend.descriptor();
    if v.dim() != desc.embedding_dim {
        return Err(Error::Backend {
            backend: desc.name.clone(),
            cause: format!(
                "emitted a {}-D vector, descriptor declares {}",
                v.dim(),
                desc.embedding_dim
            ),
        });
    }
    Ok(())
}

pub fn encode_text(description: &str, backend: &dyn EmbeddingBackend) -> Result<EmbeddingVector> {
    if description.trim().is_empty() {
        return Err(Error::invalid("description is empty"));
    }
    let v = backend.embed_text(description)?;
    check_dim(backend, &v)?;
    Ok(v)
}

/// Encodes every patch, splitting into `max_batch`-sized calls that run in
/// parallel. Output order matches input order.
pub fn encode_patches(
    patches: &[Patch<'_>],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<EmbeddingVector>> {
    for (i, p) in patches.iter().enumerate() {
        if p.rect.area() == 0 {
            return Err(Error::invalid(format!("patch {i} has zero area")));
        }
        let (w, h) = p.image.dimensions();
        if p.rect.x + p.rect.width > w || p.rect.y + p.rect.height > h {
            return Err(Error::invalid(format!(
                "patch {i} {:?} exceeds {w}x{h} image",
                p.rect
            )));
        }
    }
    let max_batch = backend.descriptor().max_batch.max(1);
    let batches: Vec<Vec<EmbeddingVector>> = patches
        .par_chunks(max_batch)
        .map(|chunk| {
            let out = backend.embed_patch_batch(chunk)?;
            if out.len() != chunk.len() {
                return Err(Error::Backend {
                    backend: backend.descriptor().name.clone(),
                    cause: format!("returned {} vectors for {} patches", out.len(), chunk.len()),
                });
            }
            for v in &out {
                check_dim(backend, v)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Backend selection as it appears in configuration files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock {
        #[serde(default)]
        field: Option<PathBuf>,
    },
    Clip(ClipBackendConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock { field: None }
    }
}

pub fn load_backend(config: &BackendConfig) -> Result<Box<dyn EmbeddingBackend>> {
    match config {
        BackendConfig::Mock { field: None } => Ok(Box::new(MockField::from_spec(
            &MockFieldSpec::default(),
        )?)),
        BackendConfig::Mock { field: Some(path) } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec: MockFieldSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(Box::new(MockField::from_spec(&spec)?))
        }
        BackendConfig::Clip(cfg) => Ok(Box::new(ClipBackend::load(cfg)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn rejects_degenerate_vectors() {
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![0.0, 0.0]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn cosine_identity_orthogonal_antipodal() {
        let a = v(&[0.3, -1.2, 2.5, 0.7]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&a, &-a.clone()).unwrap() + 1.0).abs() < 1e-12);
        let e0 = EmbeddingVector::axis(4, 0).unwrap();
        let e1 = EmbeddingVector::axis(4, 1).unwrap();
        assert_eq!(cosine_similarity(&e0, &e1).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dim_mismatch() {
        let err = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn overlap_area() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.overlap_area(&Rect::new(5, 5, 10, 10)), 25);
        assert_eq!(a.overlap_area(&Rect::new(10, 0, 4, 4)), 0);
        assert_eq!(a.overlap_area(&a), 100);
    }

    #[test]
    fn empty_description_rejected() {
        let field = MockField::from_spec(&MockFieldSpec::default()).unwrap();
        assert!(matches!(
            encode_text("  \t", &field),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(encode_text("", &field), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_area_patch_rejected() {
        let field = MockField::from_spec(&MockFieldSpec::default()).unwrap();
        let img = RgbImage::new(8, 8);
        let patches = [Patch {
            image: &img,
            rect: Rect::new(2, 2, 0, 3),
        }];
        assert!(matches!(
            encode_patches(&patches, &field),
            Err(Error::InvalidInput(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
            prop::collection::vec(-10.0f32..10.0, dim)
                .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        }

        proptest! {
            #[test]
            fn cosine_symmetric_and_scale_invariant(
                a in vec_strategy(16),
                b in vec_strategy(16),
                s in 0.01f32..100.0,
            ) {
                let va = EmbeddingVector::new(a.clone()).unwrap();
                let vb = EmbeddingVector::new(b).unwrap();
                let ab = cosine_similarity(&va, &vb).unwrap();
                let ba = cosine_similarity(&vb, &va).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!((-1.0..=1.0).contains(&ab));
                let scaled = EmbeddingVector::new(a.iter().map(|x| x * s).collect()).unwrap();
                let sb = cosine_similarity(&scaled, &vb).unwrap();
                prop_assert!((sb - ab).abs() <= 1e-6);
            }
        }
    }
}
