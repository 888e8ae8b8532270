//! `realness dataset`: validate, split and synthesize manifests.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use realness_core::dataset::{apply_split_spec, load_manifest, validate_record, SplitSpec};
use realness_core::synthetic::{generate, write_dataset, SyntheticSpec};
use realness_core::{write_atomic, Error};

use crate::config::record_run;
use crate::{resolve_config, GlobalArgs};

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Check every record; missing images are warnings unless `--strict`.
    Validate(ValidateArgs),
    /// Write seeded train/test id lists.
    Split(SplitArgs),
    /// Write a seeded toy dataset with planted image and text signal.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Number of folds; 1 gives a single holdout split.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Test records per split. Required for a holdout; optional for k-fold,
    /// where it fixes every test fold to this size.
    #[arg(long)]
    test_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    image_size: u32,
}

pub fn run(global: &GlobalArgs, cmd: DatasetCommand) -> anyhow::Result<()> {
    match cmd {
        DatasetCommand::Validate(a) => validate(a),
        DatasetCommand::Split(a) => split(global, a),
        DatasetCommand::Synth(a) => synth(global, a),
    }
}

fn validate(args: ValidateArgs) -> anyhow::Result<()> {
    let m = load_manifest(&args.manifest)?;
    let base = m.base_dir.as_deref();
    let (mut errors, mut warnings) = (0, 0);
    for r in &m.records {
        for v in validate_record(r, base, args.strict) {
            errors += 1;
            println!("error   {:<20} {:<12} {}", r.id, v.field, v.message);
        }
        if !args.strict && !r.image_ref.contains("://") && !r.image_path(base).is_file() {
            warnings += 1;
            println!("warning {:<20} {:<12} image {} not found", r.id, "image_ref", r.image_path(base).display());
        }
    }
    println!("{} records, {errors} error(s), {warnings} warning(s)", m.len());
    if errors > 0 {
        return Err(Error::Schema(format!("{errors} invalid record field(s) in {}", args.manifest.display())).into());
    }
    Ok(())
}

fn split(global: &GlobalArgs, args: SplitArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(global)?;
    let m = load_manifest(&args.manifest)?;
    let spec = match (args.k, args.test_count) {
        (1, Some(test_count)) => SplitSpec::Holdout {
            test_count,
            seed: cfg.seed,
        },
        (1, None) => return Err(Error::Config("a holdout split needs --test-count".into()).into()),
        (k, test_count) => SplitSpec::Kfold {
            k,
            seed: cfg.seed,
            test_count,
        },
    };
    let splits = apply_split_spec(&m, &spec)?;
    record_run(&global.out, &cfg)?;
    for (i, s) in splits.iter().enumerate() {
        let stem = if splits.len() == 1 { String::from("split") } else { format!("fold-{i}") };
        for (side, ids) in [("train", &s.train), ("test", &s.test)] {
            let mut text = ids.join("\n");
            text.push('\n');
            write_atomic(&global.out.join(format!("{stem}.{side}.txt")), text.as_bytes())?;
        }
        println!("{stem}: {} train / {} test", s.train.len(), s.test.len());
    }
    write_atomic(&global.out.join("split.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;
    Ok(())
}

fn synth(global: &GlobalArgs, args: SynthArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(global)?;
    let spec = SyntheticSpec {
        count: args.count,
        image_size: args.image_size,
        seed: cfg.seed,
    };
    let items = generate(&spec)?;
    record_run(&global.out, &cfg)?;
    let m = write_dataset(&global.out, &items)?;
    println!("wrote {} records to {}", m.len(), global.out.join("manifest.jsonl").display());
    Ok(())
}
