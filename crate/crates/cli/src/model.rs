//! `realness train`, `ablate` and `eval`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::Args;
use realness_core::dataset::{
    apply_split_spec, load_manifest, split_by_ids, split_holdout, DatasetManifest, RealnessRecord, Split,
};
use realness_core::metrics::EvalReport;
use realness_core::regressor::{
    build_model, evaluate, train_with_observer, AblationMode, FusionRegressor, Sample,
};
use realness_core::{write_atomic, Error};
use serde::{Deserialize, Serialize};

use crate::config::{record_run, RunConfig};
use crate::{resolve_config, GlobalArgs};

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// File of test ids, one per line. Replaces the configured split.
    #[arg(long)]
    test_ids: Option<PathBuf>,
    /// Run only this fold (0-based) of a k-fold split.
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `joint`, `image_only` or `text_only`.
    #[arg(long, default_value = "joint")]
    mode: AblationMode,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Evaluate only these ids (one per line) instead of the whole manifest.
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Defaults to the mode the checkpoint was trained in.
    #[arg(long)]
    mode: Option<AblationMode>,
    /// Label stored in the report.
    #[arg(long, default_value = "test")]
    split: String,
}

/// Sidecar stored next to the checkpoint so `eval` knows the input mode.
#[derive(Debug, Serialize, Deserialize)]
struct TrainingInfo {
    mode: AblationMode,
    fold: usize,
    train_ids: usize,
    val_ids: usize,
    test_ids: usize,
}

const TRAINING_INFO: &str = "training.json";

fn read_ids(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn load_samples(records: &[&RealnessRecord], base: Option<&Path>) -> anyhow::Result<Vec<Sample>> {
    Ok(records
        .iter()
        .map(|r| Sample::from_record(r, base))
        .collect::<realness_core::Result<_>>()?)
}

/// Resolves the folds to run as `(fold index, split)`.
fn folds(cfg: &RunConfig, m: &DatasetManifest, data: &DataArgs) -> anyhow::Result<Vec<(usize, Split)>> {
    let splits = match &data.test_ids {
        Some(path) => vec![split_by_ids(m, &read_ids(path)?)?],
        None => apply_split_spec(m, &cfg.split_for(m.len())).map_err(|e| Error::Config(e.to_string()))?,
    };
    match data.fold {
        None => Ok(splits.into_iter().enumerate().collect()),
        Some(i) if i < splits.len() => Ok(vec![(i, splits[i].clone())]),
        Some(i) => Err(Error::Config(format!("fold {i} requested but the split has {} fold(s)", splits.len())).into()),
    }
}

struct Prepared {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn prepare(cfg: &RunConfig, m: &DatasetManifest, split: &Split) -> anyhow::Result<Prepared> {
    let (train_recs, test_recs) = split.resolve(m);
    let base = m.base_dir.as_deref();
    let (train_recs, val_recs) = if cfg.val_count > 0 {
        let sub = DatasetManifest::new(train_recs.iter().map(|r| (*r).clone()).collect())?;
        let inner = split_holdout(&sub, cfg.val_count, cfg.seed).map_err(|e| Error::Config(format!("val_count: {e}")))?;
        let val: HashSet<&str> = inner.test.iter().map(String::as_str).collect();
        train_recs.into_iter().partition(|r| !val.contains(r.id.as_str()))
    } else {
        (train_recs, Vec::new())
    };
    Ok(Prepared {
        train: load_samples(&train_recs, base)?,
        val: load_samples(&val_recs, base)?,
        test: load_samples(&test_recs, base)?,
    })
}

/// Trains one model into `dir` and evaluates it on the test portion.
/// `history.jsonl` is appended after every epoch, so an aborted run keeps
/// the epochs it finished.
fn train_one(
    cfg: &RunConfig,
    data: &Prepared,
    mode: AblationMode,
    fold: usize,
    dir: &Path,
) -> anyhow::Result<EvalReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    let mut model = build_model(&cfg.model(), cfg.seed)?;
    let history_path = dir.join("history.jsonl");
    let mut history = BufWriter::new(File::create(&history_path).map_err(|e| Error::Io {
        path: history_path.clone(),
        source: e,
    })?);
    let mut write_err = None;
    let result = train_with_observer(&mut model, &data.train, &data.val, &cfg.train, mode, |rec, secs| {
        tracing::info!(epoch = rec.epoch, train_loss = rec.train_loss, seconds = secs, %mode, "epoch done");
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(history, "{line}").and_then(|_| history.flush()) {
            write_err.get_or_insert(e);
        }
    });
    drop(history);
    if let Some(e) = write_err {
        return Err(Error::Io {
            path: history_path,
            source: e,
        }
        .into());
    }
    let hist = result?;
    write_atomic(
        &dir.join("history_summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "initial_train_loss": hist.initial_train_loss,
            "final_train_loss": hist.final_train_loss,
            "best_epoch": hist.best_epoch,
        }))?
        .as_bytes(),
    )?;
    write_atomic(
        &dir.join("timing.json"),
        serde_json::to_string(&hist.epoch_seconds)?.as_bytes(),
    )?;
    let ckpt = dir.join("checkpoint");
    model.save(&ckpt)?;
    let info = TrainingInfo {
        mode,
        fold,
        train_ids: data.train.len(),
        val_ids: data.val.len(),
        test_ids: data.test.len(),
    };
    write_atomic(&ckpt.join(TRAINING_INFO), serde_json::to_string_pretty(&info)?.as_bytes())?;
    let report = evaluate(&model, &data.test, mode, "test")?;
    report.save(&dir.join("report_test.jsonl"))?;
    Ok(report)
}

fn fold_dir(out: &Path, fold: usize, n_folds: usize) -> PathBuf {
    if n_folds == 1 {
        out.to_owned()
    } else {
        out.join(format!("fold-{fold}"))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn setup(global: &GlobalArgs, data: &DataArgs) -> anyhow::Result<(RunConfig, DatasetManifest, Vec<(usize, Split)>)> {
    let mut cfg = resolve_config(global)?;
    cfg.train.validate()?;
    cfg.model().validate()?;
    cfg.model = Some(cfg.model());
    let m = load_manifest(&data.manifest)?;
    if data.test_ids.is_none() {
        cfg.split = Some(cfg.split_for(m.len()));
    }
    let folds = folds(&cfg, &m, data)?;
    record_run(&global.out, &cfg)?;
    Ok((cfg, m, folds))
}

pub fn train(global: &GlobalArgs, args: TrainArgs) -> anyhow::Result<()> {
    let (cfg, m, folds) = setup(global, &args.data)?;
    let n = folds.len();
    let mut rows = Vec::new();
    for (i, split) in &folds {
        let data = prepare(&cfg, &m, split)?;
        let report = train_one(&cfg, &data, args.mode, *i, &fold_dir(&global.out, *i, n))?;
        println!("fold {i}: SROCC {:.4}  PLCC {:.4}  (n = {})", report.srocc, report.plcc, report.n);
        rows.push((*i, report.srocc, report.plcc));
    }
    let summary = serde_json::json!({
        "mode": args.mode,
        "folds": rows.iter().map(|(i, s, p)| serde_json::json!({"fold": i, "srocc": s, "plcc": p})).collect::<Vec<_>>(),
        "mean_srocc": mean(rows.iter().map(|r| r.1)),
        "mean_plcc": mean(rows.iter().map(|r| r.2)),
    });
    write_atomic(&global.out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    if n > 1 {
        println!(
            "mean over {n} folds: SROCC {:.4}  PLCC {:.4}",
            summary["mean_srocc"].as_f64().unwrap_or(f64::NAN),
            summary["mean_plcc"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn mode_label(mode: AblationMode) -> &'static str {
    match mode {
        AblationMode::ImageOnly => "Image only",
        AblationMode::TextOnly => "Text only",
        AblationMode::Joint => "Image + Text",
    }
}

#[derive(Debug, Serialize)]
struct AblationRow {
    mode: AblationMode,
    srocc: f64,
    plcc: f64,
    folds: usize,
}

pub fn ablate(global: &GlobalArgs, args: AblateArgs) -> anyhow::Result<()> {
    let (cfg, m, folds) = setup(global, &args.data)?;
    let n = folds.len();
    let mut per_mode: Vec<(AblationMode, Vec<EvalReport>)> =
        AblationMode::ALL.iter().map(|&mode| (mode, Vec::new())).collect();
    for (i, split) in &folds {
        let data = prepare(&cfg, &m, split)?;
        for (mode, reports) in per_mode.iter_mut() {
            let dir = fold_dir(&global.out, *i, n).join(mode.as_str());
            let r = train_one(&cfg, &data, *mode, *i, &dir)?;
            tracing::info!(fold = i, %mode, srocc = r.srocc, plcc = r.plcc, "ablation run done");
            reports.push(r);
        }
    }
    let rows: Vec<AblationRow> = per_mode
        .iter()
        .map(|(mode, reports)| AblationRow {
            mode: *mode,
            srocc: mean(reports.iter().map(|r| r.srocc)),
            plcc: mean(reports.iter().map(|r| r.plcc)),
            folds: reports.len(),
        })
        .collect();
    let mut table = String::from("| Inputs       | SROCC  | PLCC   |\n|--------------|--------|--------|\n");
    for r in &rows {
        table.push_str(&format!("| {:<12} | {:.4} | {:.4} |\n", mode_label(r.mode), r.srocc, r.plcc));
    }
    if n > 1 {
        table.push_str(&format!("\nMeans over {n} folds.\n"));
    }
    write_atomic(&global.out.join("ablation.md"), table.as_bytes())?;
    write_atomic(&global.out.join("ablation.json"), serde_json::to_string_pretty(&rows)?.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn eval(global: &GlobalArgs, args: EvalArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(global)?;
    let model = FusionRegressor::load(&args.checkpoint)?;
    let mode = match args.mode {
        Some(mode) => mode,
        None => {
            let path = args.checkpoint.join(TRAINING_INFO);
            match std::fs::read_to_string(&path) {
                Ok(text) => serde_json::from_str::<TrainingInfo>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                    .mode,
                Err(_) => AblationMode::Joint,
            }
        }
    };
    let m = load_manifest(&args.manifest)?;
    let records: Vec<&RealnessRecord> = match &args.ids {
        Some(path) => {
            let ids = read_ids(path)?;
            let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
            let picked = m.subset(&wanted);
            if picked.len() != wanted.len() {
                return Err(Error::InvalidInput(format!(
                    "{} id(s) in {} are not in the manifest",
                    wanted.len() - picked.len(),
                    path.display()
                ))
                .into());
            }
            picked
        }
        None => m.records.iter().collect(),
    };
    record_run(&global.out, &cfg)?;
    let samples = load_samples(&records, m.base_dir.as_deref())?;
    let report = evaluate(&model, &samples, mode, &args.split)?;
    let path = global.out.join("report.jsonl");
    report.save(&path)?;
    println!(
        "{} ({mode}): SROCC {:.4}  PLCC {:.4}  n = {}  -> {}",
        args.split,
        report.srocc,
        report.plcc,
        report.n,
        path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_dirs() {
        let out = Path::new("o");
        assert_eq!(fold_dir(out, 0, 1), PathBuf::from("o"));
        assert_eq!(fold_dir(out, 3, 5), PathBuf::from("o/fold-3"));
        assert_eq!(mean([1.0, 2.0, 6.0].into_iter()), 3.0);
    }
}
