use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, EmbeddingBackend, EmbeddingVector, Patch, Rect};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Axis { axis: usize },
    Values(Vec<f32>),
}

impl VectorSpec {
    fn resolve(&self, dim: usize) -> Result<EmbeddingVector> {
        let v = match self {
            VectorSpec::Axis { axis } => EmbeddingVector::axis(dim, *axis)?,
            VectorSpec::Values(values) => EmbeddingVector::new(values.clone())?,
        };
        if v.dim() != dim {
            return Err(Error::Config(format!(
                "mock vector has {} entries, field dim is {dim}",
                v.dim()
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedRegionSpec {
    pub rect: Rect,
    pub vector: VectorSpec,
}

/// Serializable description of a [`MockField`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockFieldSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_base")]
    pub base: VectorSpec,
    #[serde(default = "default_text")]
    pub text: VectorSpec,
    #[serde(default)]
    pub regions: Vec<PlantedRegionSpec>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

fn default_dim() -> usize {
    512
}
fn default_base() -> VectorSpec {
    VectorSpec::Axis { axis: 0 }
}
fn default_text() -> VectorSpec {
    VectorSpec::Axis { axis: 1 }
}
fn default_max_batch() -> usize {
    32
}

impl Default for MockFieldSpec {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            base: default_base(),
            text: default_text(),
            regions: Vec::new(),
            max_batch: default_max_batch(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedRegion {
    pub rect: Rect,
    pub vector: EmbeddingVector,
}

/// Deterministic geometric backend.
///
/// Every text maps to `text_vector`. A patch maps to the normalized mix
/// `w_base * base + sum_i f_i * region_i`, where `f_i` is the fraction of the
/// patch area overlapped by planted region `i` and `w_base = max(0, 1 - sum f_i)`.
/// The result depends only on the patch rectangle, never on pixel content.
#[derive(Debug, Clone)]
pub struct MockField {
    descriptor: BackendDescriptor,
    base_vector: EmbeddingVector,
    text_vector: EmbeddingVector,
    regions: Vec<PlantedRegion>,
}

impl MockField {
    pub fn new(
        base_vector: EmbeddingVector,
        text_vector: EmbeddingVector,
        regions: Vec<PlantedRegion>,
        max_batch: usize,
    ) -> Result<Self> {
        let dim = base_vector.dim();
        if text_vector.dim() != dim || regions.iter().any(|r| r.vector.dim() != dim) {
            return Err(Error::invalid("mock field vectors must share one dimension"));
        }
        if max_batch == 0 {
            return Err(Error::invalid("max_batch must be positive"));
        }
        Ok(Self {
            descriptor: BackendDescriptor {
                name: "mock".into(),
                embedding_dim: dim,
                max_batch,
            },
            base_vector,
            text_vector,
            regions,
        })
    }

    pub fn from_spec(spec: &MockFieldSpec) -> Result<Self> {
        let regions = spec
            .regions
            .iter()
            .map(|r| {
                Ok(PlantedRegion {
                    rect: r.rect,
                    vector: r.vector.resolve(spec.dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            spec.base.resolve(spec.dim)?,
            spec.text.resolve(spec.dim)?,
            regions,
            spec.max_batch,
        )
    }

    pub fn base_vector(&self) -> &EmbeddingVector {
        &self.base_vector
    }

    pub fn text_vector(&self) -> &EmbeddingVector {
        &self.text_vector
    }

    pub fn regions(&self) -> &[PlantedRegion] {
        &self.regions
    }

    /// Embedding for a patch occupying `rect`.
    pub fn blend(&self, rect: &Rect) -> Result<EmbeddingVector> {
        let area = rect.area() as f64;
        if area == 0.0 {
            return Err(Error::invalid("zero-area patch"));
        }
        let dim = self.base_vector.dim();
        let mut acc = vec![0.0f64; dim];
        let mut covered = 0.0;
        for region in &self.regions {
            let f = rect.overlap_area(&region.rect) as f64 / area;
            if f > 0.0 {
                covered += f;
                for (a, &r) in acc.iter_mut().zip(region.vector.values()) {
                    *a += f * f64::from(r);
                }
            }
        }
        let w_base = (1.0 - covered).max(0.0);
        for (a, &b) in acc.iter_mut().zip(self.base_vector.values()) {
            *a += w_base * f64::from(b);
        }
        let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Backend {
                backend: self.descriptor.name.clone(),
                cause: format!("blend for {rect:?} cancels to the zero vector"),
            });
        }
        EmbeddingVector::new(acc.iter().map(|a| (a / norm) as f32).collect())
    }
}

impl EmbeddingBackend for MockField {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, _description: &str) -> Result<EmbeddingVector> {
        Ok(self.text_vector.clone())
    }

    fn embed_patch_batch(&self, patches: &[Patch<'_>]) -> Result<Vec<EmbeddingVector>> {
        patches.iter().map(|p| self.blend(&p.rect)).collect()
    }
}
