//! `realness annotate`: fill verdicts and descriptions from a vision-language provider.

use std::path::PathBuf;

use clap::Args;
use realness_core::annotator::{AnnotationCache, Annotator};
use realness_core::dataset::load_manifest;
use realness_core::ErrorKind;

use crate::config::record_run;
use crate::{resolve_config, Failure, GlobalArgs};

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Provider name from the configuration; `stub` is built in.
    #[arg(long, default_value = "stub")]
    provider: String,
    /// Requests in flight. Defaults to the configured value.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Re-annotate records that already have an annotation, bypassing the cache.
    #[arg(long)]
    force: bool,
}

pub fn run(global: &GlobalArgs, args: AnnotateArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(c) = args.concurrency {
        cfg.annotator.concurrency = c;
    }
    let provider = cfg.annotator.provider(&args.provider)?;
    let manifest = load_manifest(&args.manifest)?;
    let built = provider.build()?;
    record_run(&global.out, &cfg)?;

    let cache_dir = cfg
        .annotator
        .cache_dir
        .clone()
        .unwrap_or_else(|| global.out.join("annotation-cache"));
    let annotator = Annotator::new(built, cfg.annotator.template.clone())
        .with_cache(AnnotationCache::new(&cache_dir))
        .with_max_image_side(cfg.annotator.max_image_side);
    let outcome = annotator.annotate_manifest(&manifest, cfg.annotator.concurrency, args.force);

    let mut out_manifest = outcome.manifest;
    out_manifest
        .header
        .provenance
        .push(format!("annotated by `{}`, template {}", provider.name, cfg.annotator.template.version));
    // image refs stay valid when the output sits elsewhere
    if let Some(base) = &manifest.base_dir {
        let base = std::fs::canonicalize(base).unwrap_or_else(|_| base.clone());
        for r in &mut out_manifest.records {
            if !r.image_ref.contains("://") && std::path::Path::new(&r.image_ref).is_relative() {
                r.image_ref = base.join(&r.image_ref).to_string_lossy().into_owned();
            }
        }
    }
    let path = global.out.join("manifest.jsonl");
    out_manifest.save(&path)?;
    println!(
        "{} fetched, {} from cache, {} already annotated, {} failed -> {}",
        outcome.fetched,
        outcome.from_cache,
        outcome.skipped,
        outcome.failures.len(),
        path.display()
    );
    if outcome.failures.is_empty() {
        return Ok(());
    }
    eprintln!("{:<24} error", "id");
    for (id, msg) in &outcome.failures {
        eprintln!("{id:<24} {msg}");
    }
    Err(Failure {
        kind: ErrorKind::Compute,
        message: format!("{} record(s) could not be annotated", outcome.failures.len()),
    }
    .into())
}
