//! Per-cut timing profile: final accuracy and mean per-experience phase
//! times for one strategy at each cut.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{ensure_writable_dir, round6, sig6, write_json, MetricsRecord};
use super::{prepare_seed, run_strategy};
use crate::error::{Error, Result};
use crate::network::CutName;
use crate::timing::timer_granularity;

/// Mean values for one cut variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileColumn {
    pub strategy: String,
    pub cut: CutName,
    pub acc_initial: f64,
    pub acc_new: f64,
    pub feature_extraction: f64,
    pub forward: f64,
    pub backward: f64,
    pub weights_update: f64,
    pub overall: f64,
    /// Largest |overall - (forward + backward + weights_update)| over all
    /// experiences, unrounded.
    pub max_accounting_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub seeds: Vec<u64>,
    pub experiences: usize,
    /// Smallest observable step of the monotonic clock, in seconds.
    pub timer_granularity: f64,
    pub columns: Vec<ProfileColumn>,
}

impl ProfileTable {
    pub fn column(&self, cut: CutName) -> Option<&ProfileColumn> {
        self.columns.iter().find(|c| c.cut == cut)
    }
}

const CUT_ORDER: [CutName; 3] = [CutName::Pool, CutName::Conv2, CutName::Input];

/// Runs the one strategy per cut found in `cfg` over all seeds and writes
/// `timing.csv` and `profile.json` into `out_dir`. Times are averaged over
/// experiences and seeds; accuracies are final values averaged over seeds.
pub fn profile(cfg: &RunConfig, out_dir: &Path) -> Result<ProfileTable> {
    cfg.validate()?;
    let mut picked = Vec::new();
    for cut in CUT_ORDER {
        let matching: Vec<_> = cfg.strategies.iter().filter(|s| s.cut == cut).collect();
        match matching.as_slice() {
            [one] => picked.push(*one),
            _ => {
                return Err(Error::Config(format!(
                    "profile needs exactly one strategy at the {cut} cut, found {}",
                    matching.len()
                )))
            }
        }
    }
    if cfg.strategies.len() != picked.len() {
        return Err(Error::Config(
            "profile takes one strategy per cut (pool, conv2, input)".into(),
        ));
    }
    ensure_writable_dir(out_dir)?;
    let mut per: Vec<Vec<MetricsRecord>> = vec![Vec::new(); picked.len()];
    for &seed in &cfg.seeds {
        let ctx = prepare_seed(cfg, seed)?;
        for (i, s) in picked.iter().enumerate() {
            per[i].extend(run_strategy(&ctx, s, usize::MAX)?);
        }
    }
    let experiences = cfg.stream.stream_len();
    let columns = picked
        .iter()
        .zip(&per)
        .map(|(s, recs)| column(&s.label(), s.cut, recs, &cfg.seeds))
        .collect();
    let table = ProfileTable {
        seeds: cfg.seeds.clone(),
        experiences,
        timer_granularity: timer_granularity(),
        columns,
    };
    write_timing_csv(&out_dir.join("timing.csv"), &table)?;
    write_json(&out_dir.join("profile.json"), &table)?;
    Ok(table)
}

fn column(label: &str, cut: CutName, recs: &[MetricsRecord], seeds: &[u64]) -> ProfileColumn {
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let t = |f: fn(&MetricsRecord) -> f64| round6(mean(&recs.iter().map(f).collect::<Vec<_>>()));
    let last = |new: bool| {
        let v: Vec<f64> = seeds
            .iter()
            .filter_map(|s| recs.iter().rfind(|r| r.seed == *s))
            .filter_map(|r| if new { r.acc_new } else { r.acc_initial })
            .collect();
        round6(mean(&v))
    };
    ProfileColumn {
        strategy: label.to_string(),
        cut,
        acc_initial: last(false),
        acc_new: last(true),
        feature_extraction: t(|r| r.timing.feature_extraction),
        forward: t(|r| r.timing.forward),
        backward: t(|r| r.timing.backward),
        weights_update: t(|r| r.timing.weights_update),
        overall: t(|r| r.timing.overall),
        max_accounting_gap: recs
            .iter()
            .map(|r| (r.timing.overall - r.timing.phase_sum()).abs())
            .fold(0.0, f64::max),
    }
}

/// Rows are the reported quantities, columns the cut variants.
fn write_timing_csv(path: &Path, table: &ProfileTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(super::report::csv_err)?;
    let mut header = vec!["row".to_string()];
    header.extend(table.columns.iter().map(|c| c.cut.to_string()));
    w.write_record(&header).map_err(super::report::csv_err)?;
    type Row = (&'static str, fn(&ProfileColumn) -> f64);
    let rows: [Row; 7] = [
        ("acc_initial", |c| c.acc_initial),
        ("acc_new", |c| c.acc_new),
        ("feature_extraction", |c| c.feature_extraction),
        ("forward", |c| c.forward),
        ("backward", |c| c.backward),
        ("weights_update", |c| c.weights_update),
        ("overall", |c| c.overall),
    ];
    for (name, f) in rows {
        let mut row = vec![name.to_string()];
        row.extend(table.columns.iter().map(|c| sig6(f(c))));
        w.write_record(&row).map_err(super::report::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
