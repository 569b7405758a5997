//! CSV and JSON report emission.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timing::TimingBreakdown;

/// Formats `x` with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-5..=9).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

/// Round-trips `x` through its 6-significant-digit text form.
pub fn round6(x: f64) -> f64 {
    sig6(x).parse().unwrap_or(x)
}

/// One row of `metrics.csv`: state after one experience of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub strategy: String,
    pub experience: usize,
    pub class: usize,
    pub acc_initial: Option<f64>,
    pub acc_new: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub buffer_bytes: usize,
    pub loss: f64,
    pub timing: TimingBreakdown,
}

pub const TIMING_COLUMNS: [&str; 5] = [
    "t_feature_extraction",
    "t_forward",
    "t_backward",
    "t_weights_update",
    "t_overall",
];

pub fn metrics_header(classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "strategy", "experience", "class", "acc_initial", "acc_new"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..classes).map(|c| format!("acc_class_{c}")));
    h.push("buffer_bytes".into());
    h.push("loss".into());
    h.extend(TIMING_COLUMNS.iter().map(|s| s.to_string()));
    h
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord], classes: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(metrics_header(classes)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.seed.to_string(),
            r.strategy.clone(),
            r.experience.to_string(),
            r.class.to_string(),
            opt(r.acc_initial),
            opt(r.acc_new),
        ];
        row.extend((0..classes).map(|c| opt(r.per_class.get(c).copied().flatten())));
        row.push(r.buffer_bytes.to_string());
        row.push(sig6(r.loss));
        let t = &r.timing;
        row.extend([t.feature_extraction, t.forward, t.backward, t.weights_update, t.overall].map(sig6));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a metrics file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<(Vec<MetricsRecord>, usize)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let classes = header.iter().filter(|h| h.starts_with("acc_class_")).count();
    if header.iter().collect::<Vec<_>>() != metrics_header(classes) {
        return Err(Error::Format(format!("{} has an unexpected header", path.display())));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
    let opt_num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let int = |s: &str| -> Result<u64> { s.parse().map_err(|_| Error::Format(format!("bad integer {s:?}"))) };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let base = 6 + classes;
        out.push(MetricsRecord {
            seed: int(f(0))?,
            strategy: f(1).to_string(),
            experience: int(f(2))? as usize,
            class: int(f(3))? as usize,
            acc_initial: opt_num(f(4))?,
            acc_new: opt_num(f(5))?,
            per_class: (0..classes).map(|c| opt_num(f(6 + c))).collect::<Result<_>>()?,
            buffer_bytes: int(f(base))? as usize,
            loss: num(f(base + 1))?,
            timing: TimingBreakdown {
                feature_extraction: num(f(base + 2))?,
                forward: num(f(base + 3))?,
                backward: num(f(base + 4))?,
                weights_update: num(f(base + 5))?,
                overall: num(f(base + 6))?,
            },
        });
    }
    Ok((out, classes))
}

pub(super) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Population standard deviation; `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(MeanStd {
            mean: round6(mean),
            std: round6(var.sqrt()),
            n: xs.len(),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Creates `dir` and proves it is writable before any work starts.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".edgecl-write-check");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}
