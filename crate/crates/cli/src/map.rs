//! `realness map`: dense realness grids and heatmap overlays.

use std::path::{Path, PathBuf};

use clap::Args;
use realness_core::dataset::load_manifest;
use realness_core::dream::{compute_realness_map, render_heatmap, save_grid, Fusion};
use realness_core::embedding::{load_backend, EmbeddingBackend};
use realness_core::{load_rgb, save_png, Error, ErrorKind};

use crate::config::{record_run, RunConfig};
use crate::{resolve_config, Failure, GlobalArgs};

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Image to map.
    #[arg(long, requires = "text", conflicts_with = "from_manifest")]
    image: Option<PathBuf>,
    /// Description of what looks unrealistic in `--image`.
    #[arg(long)]
    text: Option<String>,
    /// Map every record of a manifest against its own description. Records
    /// without a description are skipped.
    #[arg(long, required_unless_present = "image")]
    from_manifest: Option<PathBuf>,
    /// Comma-separated window sizes in pixels.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<u32>>,
    #[arg(long)]
    stride: Option<u32>,
    /// `max` or `min`.
    #[arg(long)]
    fusion: Option<Fusion>,
}

struct Job {
    stem: String,
    image: PathBuf,
    text: String,
}

/// Keeps ids usable as file names.
fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn run_job(job: &Job, out: &Path, backend: &dyn EmbeddingBackend, cfg: &RunConfig) -> realness_core::Result<()> {
    let img = load_rgb(&job.image)?;
    let map = compute_realness_map(&img, &job.text, backend, &cfg.dream)?;
    save_grid(&out.join(format!("{}.rgrid", job.stem)), &map)?;
    let heat = render_heatmap(&map.final_grid, &img, &cfg.heatmap)?;
    save_png(&out.join(format!("{}_heatmap.png", job.stem)), &heat)
}

pub fn run(global: &GlobalArgs, args: MapArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(w) = args.windows {
        cfg.dream.windows = w;
    }
    if let Some(s) = args.stride {
        cfg.dream.stride = s;
    }
    if let Some(f) = args.fusion {
        cfg.dream.fusion = f;
    }
    cfg.dream
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;

    let jobs = match (&args.image, &args.from_manifest) {
        (Some(image), _) => {
            let stem = image
                .file_stem()
                .map(|s| file_stem_for(&s.to_string_lossy()))
                .unwrap_or_else(|| "image".into());
            vec![Job {
                stem,
                image: image.clone(),
                text: args.text.clone().unwrap_or_default(),
            }]
        }
        (None, Some(path)) => {
            let m = load_manifest(path)?;
            let (with_text, without): (Vec<_>, Vec<_>) =
                m.records.iter().partition(|r| !r.description.trim().is_empty());
            for r in &without {
                eprintln!("skipping `{}`: no description of what looks unrealistic", r.id);
            }
            with_text
                .into_iter()
                .map(|r| Job {
                    stem: file_stem_for(&r.id),
                    image: r.image_path(m.base_dir.as_deref()),
                    text: r.description.clone(),
                })
                .collect()
        }
        (None, None) => unreachable!("clap requires one input"),
    };

    let backend = load_backend(&cfg.embedding)?;
    record_run(&global.out, &cfg)?;
    let mut failures: Vec<(&Job, Error)> = Vec::new();
    for job in &jobs {
        tracing::info!(image = %job.image.display(), "mapping");
        if let Err(e) = run_job(job, &global.out, backend.as_ref(), &cfg) {
            failures.push((job, e));
        }
    }
    let done = jobs.len() - failures.len();
    println!("mapped {done} of {} image(s) into {}", jobs.len(), global.out.display());
    if failures.is_empty() {
        return Ok(());
    }
    eprintln!("{:<24} {:<40} error", "id", "image");
    for (job, e) in &failures {
        eprintln!("{:<24} {:<40} {e}", job.stem, job.image.display());
    }
    let kind = if failures.iter().any(|(_, e)| e.kind() == ErrorKind::Data) {
        ErrorKind::Data
    } else {
        failures[0].1.kind()
    };
    Err(Failure {
        kind,
        message: format!("{} of {} image(s) failed", failures.len(), jobs.len()),
    }
    .into())
}
