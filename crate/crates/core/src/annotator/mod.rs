//! Vision-language annotation: asks a provider whether an image looks
//! unrealistic and, if so, what. Responses are cached by image content hash.

mod cache;
mod provider;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::Digest;

pub use cache::AnnotationCache;
pub use provider::{
    HttpProvider, HttpProviderConfig, ImagePayload, ProviderConfig, ProviderKind, RetryPolicy,
    StubProvider, StubResponses, VisionProvider,
};

use crate::dataset::{AnnotationProvenance, DatasetManifest, Verdict};
use crate::error::{Error, Result};

/// Instruction sent with every image.
pub const DEFAULT_PROMPT: &str = "Is there anything unrealistic in this image \u{2014} yes, no, or somewhat? If yes or somewhat, explain in at most 30 words what looks unrealistic, such as a distorted face, uneven object transitions, or any other feature.";
pub const DEFAULT_TEMPLATE_VERSION: &str = "v1";
/// Descriptions longer than this are kept but logged.
pub const SOFT_WORD_LIMIT: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub text: String,
    pub version: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_PROMPT.into(),
            version: DEFAULT_TEMPLATE_VERSION.into(),
        }
    }
}

impl PromptTemplate {
    pub fn build_prompt(&self) -> &str {
        &self.text
    }

    /// Hex SHA-256 of the template text.
    pub fn digest(&self) -> String {
        hex::encode(sha2::Sha256::digest(self.text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub verdict: Verdict,
    pub description: String,
    pub raw_response: String,
    pub provider: String,
    pub template_version: String,
    pub latency_ms: f64,
}

/// Splits a response into its leading verdict word and the explanation
/// that follows it.
pub fn parse_response(raw: &str) -> Result<(Verdict, String)> {
    let unparseable = || Error::UnparseableResponse { raw: raw.to_owned() };
    let text = raw.trim_start_matches(|c: char| c.is_whitespace() || "*\"'`".contains(c));
    let end = text
        .find(|c: char| !c.is_alphabetic())
        .unwrap_or(text.len());
    let verdict = match text[..end].to_lowercase().as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        "somewhat" => Verdict::Somewhat,
        _ => return Err(unparseable()),
    };
    let description = text[end..]
        .trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || "\u{2013}\u{2014}".contains(c))
        .trim_end()
        .to_owned();
    if description.is_empty() && verdict != Verdict::No {
        return Err(unparseable());
    }
    Ok((verdict, description))
}

/// Outcome of annotating a manifest.
#[derive(Debug, Clone)]
pub struct ManifestAnnotation {
    pub manifest: DatasetManifest,
    /// `(record id, error message)` for every record left unannotated.
    pub failures: Vec<(String, String)>,
    pub fetched: usize,
    pub from_cache: usize,
    pub skipped: usize,
}

pub struct Annotator {
    provider: Box<dyn VisionProvider>,
    template: PromptTemplate,
    cache: Option<AnnotationCache>,
    max_image_side: Option<u32>,
    network_calls: AtomicUsize,
}

impl Annotator {
    pub fn new(provider: Box<dyn VisionProvider>, template: PromptTemplate) -> Self {
        Self {
            provider,
            template,
            cache: None,
            max_image_side: None,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: AnnotationCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_image_side(mut self, side: Option<u32>) -> Self {
        self.max_image_side = side;
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Provider requests made by this annotator.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Annotates one image file. Returns the result and whether it came
    /// from the cache. `force` skips the cache lookup but still stores.
    pub fn annotate_image(&self, path: &Path, force: bool) -> Result<(AnnotationResult, bool)> {
        let payload = ImagePayload::from_file(path, self.max_image_side)?;
        let digest = self.template.digest();
        if !force {
            if let Some(hit) = self.cache.as_ref().and_then(|c| {
                c.get(self.provider.name(), &self.template.version, &digest, &payload.sha256)
            }) {
                return Ok((hit, true));
            }
        }
        let start = Instant::now();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self.provider.complete(&payload, self.template.build_prompt())?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let (verdict, description) = parse_response(&raw)?;
        let words = description.split_whitespace().count();
        if words > SOFT_WORD_LIMIT {
            tracing::warn!(image = %path.display(), words, "description exceeds the requested word limit");
        }
        let result = AnnotationResult {
            verdict,
            description,
            raw_response: raw,
            provider: self.provider.name().to_owned(),
            template_version: self.template.version.clone(),
            latency_ms,
        };
        if let Some(c) = &self.cache {
            c.put(&digest, &payload.sha256, &result)?;
        }
        Ok((result, false))
    }

    /// Annotates every record that has no annotation yet (all of them with
    /// `force`), using up to `concurrency` requests in flight. Records that
    /// fail are left untouched and listed in the result.
    pub fn annotate_manifest(
        &self,
        manifest: &DatasetManifest,
        concurrency: usize,
        force: bool,
    ) -> ManifestAnnotation {
        let base = manifest.base_dir.as_deref();
        let pending: Vec<usize> = manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| force || r.annotation.is_none() || r.verdict == Verdict::Unknown)
            .map(|(i, _)| i)
            .collect();
        let skipped = manifest.records.len() - pending.len();
        let next = AtomicUsize::new(0);
        let outcomes: Mutex<Vec<(usize, Result<(AnnotationResult, bool)>)>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..concurrency.clamp(1, pending.len().max(1)) {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    let record = &manifest.records[i];
                    let r = self.annotate_image(&record.image_path(base), force);
                    outcomes.lock().expect("outcome lock").push((i, r));
                });
            }
        });
        let mut outcomes = outcomes.into_inner().expect("outcome lock");
        outcomes.sort_by_key(|(i, _)| *i);

        let mut out = manifest.clone();
        let (mut fetched, mut from_cache) = (0, 0);
        let mut failures = Vec::new();
        for (i, outcome) in outcomes {
            let record = &mut out.records[i];
            match outcome {
                Ok((res, cached)) => {
                    if cached {
                        from_cache += 1;
                    } else {
                        fetched += 1;
                    }
                    record.verdict = res.verdict;
                    record.description = res.description;
                    record.annotation = Some(AnnotationProvenance {
                        provider: res.provider,
                        template_version: res.template_version,
                    });
                }
                Err(e) => failures.push((record.id.clone(), e.to_string())),
            }
        }
        ManifestAnnotation {
            manifest: out,
            failures,
            fetched,
            from_cache,
            skipped,
        }
    }
}
