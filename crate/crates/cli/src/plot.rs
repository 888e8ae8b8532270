//! `realness plot`: prediction-vs-MOS scatter from evaluation reports.

use std::path::PathBuf;

use clap::Args;
use realness_core::metrics::EvalReport;
use realness_core::plot::{scatter_svg, ScatterSeries};
use realness_core::{write_atomic, Error};

use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// One or more report files written by `eval` or `train`.
    #[arg(long = "report", required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Legend label per report, in order. Defaults to the file names.
    #[arg(long = "label")]
    labels: Vec<String>,
    #[arg(long, default_value = "Predictions vs MOS")]
    title: String,
    /// Output file name inside `--out`.
    #[arg(long, default_value = "scatter.svg")]
    file: String,
}

pub fn run(global: &GlobalArgs, args: PlotArgs) -> anyhow::Result<()> {
    if !args.labels.is_empty() && args.labels.len() != args.reports.len() {
        return Err(Error::Config(format!(
            "{} label(s) given for {} report(s)",
            args.labels.len(),
            args.reports.len()
        ))
        .into());
    }
    let mut series = Vec::new();
    for (i, path) in args.reports.iter().enumerate() {
        let report = EvalReport::load(path)?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string())
        });
        series.push(ScatterSeries {
            label: format!("{label} (SROCC {:.3})", report.srocc),
            points: report.samples.iter().map(|s| (s.mos, s.prediction)).collect(),
        });
    }
    let svg = scatter_svg(&series, &args.title)?;
    std::fs::create_dir_all(&global.out).map_err(|e| Error::Io {
        path: global.out.clone(),
        source: e,
    })?;
    let path = global.out.join(&args.file);
    write_atomic(&path, svg.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
