//! Lossless binary export of realness grids.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "RLNSGRID"
//! version      u32      1
//! height       u32
//! width        u32
//! flags        u32      bit 0: whole-image fallback
//! n_scales     u32
//! scales       u32 * n_scales
//! desc_sha256  32 bytes SHA-256 of the UTF-8 description
//! fused        f64 * height * width   (row-major, before normalization)
//! final        f64 * height * width   (row-major, in [0, 1])
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::grid::{Grid, ImageSize};
use super::RealnessMap;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const GRID_MAGIC: &[u8; 8] = b"RLNSGRID";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredMap {
    pub size: ImageSize,
    pub scales_used: Vec<u32>,
    pub whole_image_fallback: bool,
    pub description_sha256: [u8; 32],
    pub fused_grid: Grid,
    pub final_grid: Grid,
}

impl From<&RealnessMap> for StoredMap {
    fn from(map: &RealnessMap) -> Self {
        Self {
            size: map.size(),
            scales_used: map.scales_used.clone(),
            whole_image_fallback: map.whole_image_fallback,
            description_sha256: Sha256::digest(map.description.as_bytes()).into(),
            fused_grid: map.fused_grid.clone(),
            final_grid: map.final_grid.clone(),
        }
    }
}

impl StoredMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.size.pixels();
        let mut out = Vec::with_capacity(60 + 4 * self.scales_used.len() + 16 * n);
        out.extend_from_slice(GRID_MAGIC);
        for v in [
            VERSION,
            self.size.height,
            self.size.width,
            u32::from(self.whole_image_fallback),
            self.scales_used.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.scales_used {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&self.description_sha256);
        for grid in [&self.fused_grid, &self.final_grid] {
            for v in grid.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != GRID_MAGIC {
            return Err(Error::invalid("not a realness grid file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::invalid(format!("unsupported grid version {version}")));
        }
        let size = ImageSize::new(r.u32()?, r.u32()?);
        let flags = r.u32()?;
        let n_scales = r.u32()? as usize;
        let scales_used = (0..n_scales).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let description_sha256: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let mut read_grid = || -> Result<Grid> {
            let data = (0..size.pixels())
                .map(|_| r.f64())
                .collect::<Result<Vec<_>>>()?;
            Grid::from_vec(size, data)
        };
        let fused_grid = read_grid()?;
        let final_grid = read_grid()?;
        if r.pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after grid payload"));
        }
        Ok(Self {
            size,
            scales_used,
            whole_image_fallback: flags & 1 == 1,
            description_sha256,
            fused_grid,
            final_grid,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::invalid("truncated grid file"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes the grid file atomically (temp file + rename).
pub fn save_grid(path: &Path, map: &RealnessMap) -> Result<()> {
    let bytes = StoredMap::from(map).to_bytes();
    write_atomic(path, &bytes)
}

pub fn load_grid(path: &Path) -> Result<StoredMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    StoredMap::from_bytes(&bytes)
}
