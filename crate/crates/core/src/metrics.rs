//! Rank and linear correlation between predicted and subjective scores.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.len() < 2 {
        return Err(Error::invalid("correlation needs at least two samples"));
    }
    if predictions.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("correlation inputs must be finite"));
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid(
            "correlation undefined for a constant input vector",
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson linear correlation of the raw values.
pub fn plcc(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(predictions, targets)?;
    pearson_unchecked(predictions, targets)
}

/// Spearman rank-order correlation: Pearson of average-tie ranks.
pub fn srocc(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(predictions, targets)?;
    pearson_unchecked(&fractional_ranks(predictions), &fractional_ranks(targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub id: String,
    pub mos: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub srocc: f64,
    pub plcc: f64,
    pub samples: Vec<SamplePrediction>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ReportLine {
    Summary {
        split: String,
        n: usize,
        srocc: f64,
        plcc: f64,
    },
    Sample(SamplePrediction),
}

impl EvalReport {
    pub fn from_predictions(split: impl Into<String>, samples: Vec<SamplePrediction>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty record set"));
        }
        let preds: Vec<f64> = samples.iter().map(|s| s.prediction).collect();
        let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
        Ok(Self {
            split: split.into(),
            n: samples.len(),
            srocc: srocc(&preds, &mos)?,
            plcc: plcc(&preds, &mos)?,
            samples,
        })
    }

    /// Line-delimited JSON: one `summary` line followed by one `sample` line
    /// per record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let summary = ReportLine::Summary {
            split: self.split.clone(),
            n: self.n,
            srocc: self.srocc,
            plcc: self.plcc,
        };
        out.push_str(&serde_json::to_string(&summary).expect("serializable"));
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(&ReportLine::Sample(s.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut samples = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<report>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine = serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("report line {}: {e}", lineno + 1)))?;
            match parsed {
                ReportLine::Summary {
                    split,
                    n,
                    srocc,
                    plcc,
                } => header = Some((split, n, srocc, plcc)),
                ReportLine::Sample(s) => samples.push(s),
            }
        }
        let (split, n, srocc, plcc) =
            header.ok_or_else(|| Error::Schema("report has no summary line".into()))?;
        if n != samples.len() {
            return Err(Error::Schema(format!(
                "report summary says {n} samples, found {}",
                samples.len()
            )));
        }
        Ok(Self {
            split,
            n,
            srocc,
            plcc,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(std::io::BufReader::new(f))
    }
}

/// Plain-text table with one row per `(label, report)`.
pub fn summary_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "| {:width$} | {:>6} | {:>6} | {:>4} |", "Inputs", "SROCC", "PLCC", "n");
    let _ = writeln!(out, "|{}|--------|--------|------|", "-".repeat(width + 2));
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "| {label:width$} | {:>6.4} | {:>6.4} | {:>4} |",
            r.srocc, r.plcc, r.n
        );
    }
    out
}
