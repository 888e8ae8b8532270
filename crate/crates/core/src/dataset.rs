//! Realness-annotated dataset manifests and train/test splitting.
//!
//! A manifest is a JSON-lines file. The first line may be a header carrying
//! `schema_version` and free-form provenance notes; every other line is one
//! [`RealnessRecord`].

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Somewhat,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Raise,
    Agin,
    Synthetic,
    #[default]
    Other,
}

/// Which annotator produced a description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationProvenance {
    pub provider: String,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealnessRecord {
    pub id: String,
    pub image_ref: String,
    pub mos: f64,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub verdict: Verdict,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<AnnotationProvenance>,
}

impl RealnessRecord {
    pub fn new(id: impl Into<String>, image_ref: impl Into<String>, mos: f64) -> Self {
        Self {
            id: id.into(),
            image_ref: image_ref.into(),
            mos,
            description: String::new(),
            verdict: Verdict::Unknown,
            source: Source::Other,
            annotation: None,
        }
    }

    /// Image path, resolved against `base` when relative.
    pub fn image_path(&self, base: Option<&Path>) -> PathBuf {
        let p = PathBuf::from(&self.image_ref);
        match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

/// Lists every invariant the record breaks. With `strict`, an image path
/// that does not exist on disk counts as a violation.
pub fn validate_record(record: &RealnessRecord, base: Option<&Path>, strict: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.id.trim().is_empty() {
        out.push(Violation {
            field: "id",
            message: "id is empty".into(),
        });
    }
    if !record.mos.is_finite() {
        out.push(Violation {
            field: "mos",
            message: format!("mos {} is not finite", record.mos),
        });
    }
    if record.image_ref.trim().is_empty() {
        out.push(Violation {
            field: "image_ref",
            message: "image_ref is empty".into(),
        });
    } else if strict && !is_remote(&record.image_ref) && !record.image_path(base).is_file() {
        out.push(Violation {
            field: "image_ref",
            message: format!("image {} not found", record.image_path(base).display()),
        });
    }
    if matches!(record.verdict, Verdict::Yes | Verdict::Somewhat) && record.description.trim().is_empty() {
        out.push(Violation {
            field: "description",
            message: "verdict is yes/somewhat but description is empty".into(),
        });
    }
    out
}

fn is_remote(image_ref: &str) -> bool {
    image_ref.contains("://")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<RealnessRecord>,
    /// Directory relative image paths resolve against.
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(records: Vec<RealnessRecord>) -> Result<Self> {
        let m = Self {
            header: ManifestHeader {
                schema_version: SCHEMA_VERSION,
                provenance: Vec::new(),
            },
            records,
            base_dir: None,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::invalid("manifest has no records"));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Schema(format!("duplicate id `{}`", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        let mut errors = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(e) => {
                    errors.push(format!("line {lineno}: {e}"));
                    continue;
                }
            };
            if value.get("schema_version").is_some() && value.get("id").is_none() {
                if header.is_some() || !records.is_empty() {
                    errors.push(format!("line {lineno}: header must be the first line"));
                    continue;
                }
                match serde_json::from_value::<ManifestHeader>(value) {
                    Ok(h) if h.schema_version == SCHEMA_VERSION => header = Some(h),
                    Ok(h) => errors.push(format!(
                        "line {lineno}: unsupported schema_version {}",
                        h.schema_version
                    )),
                    Err(e) => errors.push(format!("line {lineno}: {e}")),
                }
                continue;
            }
            match serde_json::from_value::<RealnessRecord>(value) {
                Ok(r) => records.push(r),
                Err(e) => errors.push(format!("line {lineno}: {e}")),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Schema(errors.join("; ")));
        }
        if records.is_empty() {
            return Err(Error::invalid("manifest has no records"));
        }
        let m = Self {
            header: header.unwrap_or(ManifestHeader {
                schema_version: SCHEMA_VERSION,
                provenance: Vec::new(),
            }),
            records,
            base_dir: None,
        };
        m.check()?;
        Ok(m)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("serializable");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Records with ids in `ids`, in manifest order.
    pub fn subset<'a>(&'a self, ids: &HashSet<&str>) -> Vec<&'a RealnessRecord> {
        self.records.iter().filter(|r| ids.contains(r.id.as_str())).collect()
    }
}

/// Reads and validates a manifest; relative image paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut m = DatasetManifest::parse(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    m.base_dir = path.parent().map(Path::to_path_buf);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitSpec {
    Holdout {
        test_count: usize,
        seed: u64,
    },
    /// `k` disjoint test folds. Without `test_count` the folds partition the
    /// whole manifest; with it, each fold tests exactly `test_count` records
    /// and trains on everything else.
    Kfold {
        k: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn resolve<'a>(&self, manifest: &'a DatasetManifest) -> (Vec<&'a RealnessRecord>, Vec<&'a RealnessRecord>) {
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        let test: HashSet<&str> = self.test.iter().map(String::as_str).collect();
        (manifest.subset(&train), manifest.subset(&test))
    }
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Builds a split from a chosen set of test indices; both sides keep
/// manifest order.
fn split_from_test(manifest: &DatasetManifest, test_idx: &[usize]) -> Split {
    let mut is_test = vec![false; manifest.len()];
    for &i in test_idx {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in manifest.records.iter().zip(is_test) {
        if t {
            test.push(r.id.clone());
        } else {
            train.push(r.id.clone());
        }
    }
    Split { train, test }
}

pub fn split_holdout(manifest: &DatasetManifest, test_count: usize, seed: u64) -> Result<Split> {
    let n = manifest.len();
    if test_count == 0 || test_count >= n {
        return Err(Error::invalid(format!(
            "holdout test_count must be in 1..{n}, got {test_count}"
        )));
    }
    let idx = shuffled_indices(n, seed);
    Ok(split_from_test(manifest, &idx[..test_count]))
}

/// Standard k-fold: test folds partition the manifest, sizes differ by at
/// most one (the first `n % k` folds get the extra record).
pub fn split_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Split>> {
    let n = manifest.len();
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds {n} records")));
    }
    let idx = shuffled_indices(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(split_from_test(manifest, &idx[start..start + len]));
        start += len;
    }
    Ok(folds)
}

/// k disjoint test sets of exactly `test_count` records each; every fold
/// trains on the remaining `n - test_count`.
pub fn split_kfold_sized(
    manifest: &DatasetManifest,
    k: usize,
    test_count: usize,
    seed: u64,
) -> Result<Vec<Split>> {
    let n = manifest.len();
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if test_count == 0 || k * test_count > n {
        return Err(Error::invalid(format!(
            "{k} disjoint folds of {test_count} do not fit in {n} records"
        )));
    }
    let idx = shuffled_indices(n, seed);
    Ok(idx
        .chunks(test_count)
        .take(k)
        .map(|chunk| split_from_test(manifest, chunk))
        .collect())
}

pub fn apply_split_spec(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Vec<Split>> {
    match *spec {
        SplitSpec::Holdout { test_count, seed } => Ok(vec![split_holdout(manifest, test_count, seed)?]),
        SplitSpec::Kfold {
            k,
            seed,
            test_count: None,
        } => split_kfold(manifest, k, seed),
        SplitSpec::Kfold {
            k,
            seed,
            test_count: Some(t),
        } => split_kfold_sized(manifest, k, t, seed),
    }
}

/// Split from an explicit list of test ids (one per line), for matching a
/// published partition.
pub fn split_by_ids(manifest: &DatasetManifest, test_ids: &[String]) -> Result<Split> {
    let index: std::collections::HashMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut test_idx = Vec::with_capacity(test_ids.len());
    let mut seen = HashSet::new();
    for id in test_ids {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("test id `{id}` not in manifest")))?;
        if seen.insert(i) {
            test_idx.push(i);
        }
    }
    if test_idx.is_empty() || test_idx.len() >= manifest.len() {
        return Err(Error::invalid("id-list split must leave both sides nonempty"));
    }
    Ok(split_from_test(manifest, &test_idx))
}
