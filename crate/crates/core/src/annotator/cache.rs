use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AnnotationResult;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    template_digest: String,
    result: AnnotationResult,
}

/// One JSON file per image content hash:
/// `<root>/<provider>/<template version>/<sha256>.json`.
#[derive(Debug, Clone)]
pub struct AnnotationCache {
    root: PathBuf,
}

fn safe_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

impl AnnotationCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, provider: &str, template_version: &str, sha256: &str) -> PathBuf {
        self.root
            .join(safe_component(provider))
            .join(safe_component(template_version))
            .join(format!("{}.json", safe_component(sha256)))
    }

    /// A stored result, if one exists for the same template text. Unreadable
    /// entries count as misses and are overwritten by the next store.
    pub fn get(
        &self,
        provider: &str,
        template_version: &str,
        template_digest: &str,
        sha256: &str,
    ) -> Option<AnnotationResult> {
        let path = self.entry_path(provider, template_version, sha256);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.template_digest == template_digest => Some(e.result),
            Ok(_) => None,
            Err(err) => {
                tracing::warn!(path = %path.display(), %err, "ignoring corrupt cache entry");
                None
            }
        }
    }

    pub fn put(
        &self,
        template_digest: &str,
        sha256: &str,
        result: &AnnotationResult,
    ) -> Result<()> {
        let path = self.entry_path(&result.provider, &result.template_version, sha256);
        let dir = path.parent().expect("entry has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entry = CacheEntry {
            template_digest: template_digest.to_owned(),
            result: result.clone(),
        };
        crate::fsutil::write_atomic(&path, &serde_json::to_vec_pretty(&entry)?)
    }
}
