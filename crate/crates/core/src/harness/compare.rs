//! Cross-strategy comparison: aligned accuracy curves, final-accuracy table
//! and the expected forgetting/plasticity orderings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{read_metrics_csv, sig6, write_json, MeanStd, MetricsRecord};
use crate::error::{Error, Result};
use crate::stream::StreamSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFinal {
    pub strategy: String,
    pub acc_initial: Option<MeanStd>,
    pub acc_new: Option<MeanStd>,
}

/// One expected relation between two final accuracies, or against a floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub stream: StreamSpec,
    pub seeds: Vec<u64>,
    pub finals: Vec<StrategyFinal>,
    pub checks: Vec<OrderingCheck>,
    /// Names of checks that do not hold.
    pub violations: Vec<String>,
}

/// Mean final accuracy per strategy over seeds.
pub fn finals(records: &[MetricsRecord], strategies: &[String], seeds: &[u64]) -> Vec<StrategyFinal> {
    strategies
        .iter()
        .map(|s| {
            let (mut ai, mut an) = (Vec::new(), Vec::new());
            for seed in seeds {
                if let Some(last) = records.iter().rfind(|r| &r.strategy == s && r.seed == *seed) {
                    ai.extend(last.acc_initial);
                    an.extend(last.acc_new);
                }
            }
            StrategyFinal {
                strategy: s.clone(),
                acc_initial: MeanStd::of(&ai),
                acc_new: MeanStd::of(&an),
            }
        })
        .collect()
}

/// Margin by which the naive baseline must trail AR1 at the pool cut on
/// initial-class accuracy.
pub const NAIVE_GAP: f64 = 0.15;
/// Margin above chance required of unbalanced replay on initial classes.
pub const CHANCE_MARGIN: f64 = 0.20;

/// Checks the expected orderings among whichever of the standard strategy
/// labels are present. Chance is one over the total number of classes.
pub fn ordering_checks(finals: &[StrategyFinal], total_classes: usize) -> Vec<OrderingCheck> {
    let get = |label: &str, new: bool| {
        finals
            .iter()
            .find(|f| f.strategy == label)
            .and_then(|f| if new { f.acc_new } else { f.acc_initial })
            .map(|m| m.mean)
    };
    let mut out = Vec::new();
    let mut rel = |name: &str, a: &str, b: &str, new: bool, strict: bool| {
        if let (Some(x), Some(y)) = (get(a, new), get(b, new)) {
            let holds = if strict { x > y } else { x >= y };
            let op = if strict { ">" } else { ">=" };
            out.push(OrderingCheck {
                name: name.into(),
                holds,
                detail: format!("{a} {} {op} {b} {}", sig6(x), sig6(y)),
            });
        }
    };
    rel(
        "initial: ar1-pool >= balanced",
        "ar1-pool",
        "replay-balanced-pool",
        false,
        false,
    );
    rel(
        "initial: balanced > unbalanced",
        "replay-balanced-pool",
        "replay-unbalanced-pool",
        false,
        true,
    );
    rel(
        "initial: unbalanced > naive",
        "replay-unbalanced-pool",
        "naive-pool",
        false,
        true,
    );
    rel("new: input >= conv2", "ar1-input", "ar1-conv2", true, false);
    rel("new: conv2 >= pool", "ar1-conv2", "ar1-pool", true, false);
    rel(
        "new: ar1-pool >= balanced",
        "ar1-pool",
        "replay-balanced-pool",
        true,
        false,
    );
    if let (Some(a), Some(n)) = (get("ar1-pool", false), get("naive-pool", false)) {
        out.push(OrderingCheck {
            name: "initial: naive trails ar1-pool by the gap".into(),
            holds: n <= a - NAIVE_GAP,
            detail: format!("naive-pool {} <= ar1-pool {} - {NAIVE_GAP}", sig6(n), sig6(a)),
        });
    }
    if let Some(u) = get("replay-unbalanced-pool", false) {
        let floor = 1.0 / total_classes as f64 + CHANCE_MARGIN;
        out.push(OrderingCheck {
            name: "initial: unbalanced above chance".into(),
            holds: u >= floor,
            detail: format!("replay-unbalanced-pool {} >= {}", sig6(u), sig6(floor)),
        });
    }
    out
}

struct LoadedRun {
    cfg: RunConfig,
    records: Vec<MetricsRecord>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let cfg = RunConfig::from_json(&std::fs::read_to_string(dir.join("run.json"))?)?;
    let (records, _) = read_metrics_csv(&dir.join("metrics.csv"))?;
    Ok(LoadedRun { cfg, records })
}

/// Merges finished run directories and writes `curves.csv` (mean accuracy
/// per strategy and experience) and `comparison.json` into `out_dir`.
pub fn compare_runs(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Comparison> {
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("compare needs at least one run directory".into()))?;
    let (stream, seeds) = (first.cfg.stream, first.cfg.seeds.clone());
    let mut strategies: Vec<String> = Vec::new();
    let mut records = Vec::new();
    for (run, dir) in runs.iter().zip(run_dirs) {
        if run.cfg.stream != stream {
            return Err(Error::Config(format!("{} uses a different stream spec", dir.display())));
        }
        if run.cfg.seeds != seeds {
            return Err(Error::Config(format!("{} uses a different seed list", dir.display())));
        }
        for s in &run.cfg.strategies {
            let label = s.label();
            if strategies.contains(&label) {
                return Err(Error::Config(format!("strategy {label} appears in more than one run")));
            }
            strategies.push(label);
        }
        records.extend(run.records.iter().cloned());
    }
    if strategies.len() < 2 {
        return Err(Error::Config("compare needs at least two strategies".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    write_curves(&out_dir.join("curves.csv"), &records, &strategies)?;
    let finals = finals(&records, &strategies, &seeds);
    let checks = ordering_checks(&finals, stream.total_classes());
    let violations = checks.iter().filter(|c| !c.holds).map(|c| c.name.clone()).collect();
    let cmp = Comparison {
        stream,
        seeds,
        finals,
        checks,
        violations,
    };
    write_json(&out_dir.join("comparison.json"), &cmp)?;
    Ok(cmp)
}

/// Long-format curves: one row per strategy and experience, averaged over
/// seeds. Missing evaluations are left empty.
fn write_curves(path: &Path, records: &[MetricsRecord], strategies: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(super::report::csv_err)?;
    w.write_record(["strategy", "experience", "acc_initial", "acc_new", "seeds"])
        .map_err(super::report::csv_err)?;
    for s in strategies {
        let mut by_exp: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in records.iter().filter(|r| &r.strategy == s) {
            let e = by_exp.entry(r.experience).or_default();
            e.0.extend(r.acc_initial);
            e.1.extend(r.acc_new);
        }
        for (exp, (ai, an)) in by_exp {
            let mean = |v: &[f64]| MeanStd::of(v).map(|m| sig6(m.mean)).unwrap_or_default();
            w.write_record([s.clone(), exp.to_string(), mean(&ai), mean(&an), ai.len().to_string()])
                .map_err(super::report::csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
