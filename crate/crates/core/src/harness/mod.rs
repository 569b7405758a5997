//! Benchmark orchestration: pretraining with a snapshot cache, multi-seed
//! strategy runs, per-phase timing profiles and run comparison.

mod compare;
mod config;
mod profile;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pretrain::{pretrain_model, PretrainConfig, PretrainedModel};
use crate::strategy::{score, Learner, StrategyConfig, TwoPhaseScheduler};
use crate::stream::{generate_stream, Stream, StreamSpec, SyntheticDataset};

pub use compare::{compare_runs, finals, ordering_checks, Comparison, OrderingCheck, StrategyFinal};
pub use config::{default_strategies, RunConfig};
pub use profile::{profile, ProfileColumn, ProfileTable};
pub use report::{
    ensure_writable_dir, metrics_header, read_metrics_csv, round6, sig6, write_json, write_metrics_csv, MeanStd,
    MetricsRecord, TIMING_COLUMNS,
};

/// Data and pretrained model for one run seed.
pub struct SeedContext {
    pub seed: u64,
    pub dataset_seed: u64,
    pub stream: Stream,
    pub pretrained: PretrainedModel,
}

#[derive(Serialize)]
struct SnapshotKey<'a> {
    arch: crate::network::ArchSpec,
    stream: &'a StreamSpec,
    pretrain: &'a PretrainConfig,
    dataset_seed: u64,
}

/// Generates the dataset and stream for `seed` and pretrains (or loads the
/// cached snapshot of) the initial model.
pub fn prepare_seed(cfg: &RunConfig, seed: u64) -> Result<SeedContext> {
    let dataset_seed = cfg.dataset_seed(seed);
    let dataset = SyntheticDataset::generate(&cfg.stream, dataset_seed)?;
    let stream = generate_stream(&dataset, seed)?;
    let key = SnapshotKey {
        arch: cfg.arch(),
        stream: &cfg.stream,
        pretrain: &cfg.pretrain,
        dataset_seed,
    };
    let cached: Option<PathBuf> = cfg
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("pretrained-{dataset_seed}.json")));
    if let Some(path) = &cached {
        if let Some(pm) = PretrainedModel::load_if_matching(path, &key)? {
            return Ok(SeedContext {
                seed,
                dataset_seed,
                stream,
                pretrained: pm,
            });
        }
    }
    let mut pm = PretrainedModel::fresh(cfg.arch(), dataset_seed)?;
    pretrain_model(&mut pm, &stream.pretrain, &cfg.pretrain)?;
    if let Some(path) = &cached {
        std::fs::create_dir_all(path.parent().expect("joined path"))?;
        pm.save(path, &key)?;
    }
    Ok(SeedContext {
        seed,
        dataset_seed,
        stream,
        pretrained: pm,
    })
}

enum Runner {
    Single(Box<Learner>),
    TwoPhase(Box<TwoPhaseScheduler>),
}

/// Runs one strategy over the seed's stream and returns one record per
/// experience. Two-phase strategies wait for each background pass to merge
/// before the next experience, which keeps runs reproducible.
pub fn run_strategy(ctx: &SeedContext, strategy: &StrategyConfig, eval_every: usize) -> Result<Vec<MetricsRecord>> {
    let spec = &ctx.stream.spec;
    let mut cfg = strategy.clone();
    cfg.seed = cfg.seed.wrapping_add(ctx.seed);
    let learner = Learner::new(&ctx.pretrained, cfg.clone(), &ctx.stream.pretrain)?;
    let mut runner = if cfg.slow.is_some() {
        Runner::TwoPhase(Box::new(TwoPhaseScheduler::new(learner)?))
    } else {
        Runner::Single(Box::new(learner))
    };
    let total = ctx.stream.experiences.len();
    let mut out = Vec::with_capacity(total);
    for (i, exp) in ctx.stream.experiences.iter().enumerate() {
        let m = match &mut runner {
            Runner::Single(l) => l.train_experience(exp)?,
            Runner::TwoPhase(t) => {
                let m = t.train_experience(exp)?;
                t.wait_and_merge()?;
                m
            }
        };
        let learner = match &mut runner {
            Runner::Single(l) => l.as_mut(),
            Runner::TwoPhase(t) => t.learner_mut(),
        };
        let evaluate = (i + 1) % eval_every == 0 || i + 1 == total;
        let ev = if evaluate {
            Some(learner.evaluate(&ctx.stream.test, spec.initial_classes)?)
        } else {
            None
        };
        out.push(MetricsRecord {
            seed: ctx.seed,
            strategy: cfg.label(),
            experience: exp.index,
            class: m.class,
            acc_initial: ev.as_ref().map(|e| e.acc_initial),
            acc_new: ev.as_ref().map(|e| e.acc_new),
            per_class: ev
                .map(|e| e.per_class)
                .unwrap_or_else(|| vec![None; spec.total_classes()]),
            buffer_bytes: learner.buffer.as_ref().map_or(0, |b| b.byte_size()),
            loss: m.mean_loss as f64,
            timing: m.timing,
        });
    }
    Ok(out)
}

/// Test accuracy of the pretrained model before any experience.
pub fn pretrained_accuracy(ctx: &SeedContext) -> Result<(f64, Vec<Option<f64>>)> {
    let spec = &ctx.stream.spec;
    let pred = ctx.pretrained.predict(&ctx.stream.test.frames)?;
    let e = score(
        &pred,
        &ctx.stream.test.labels,
        spec.initial_classes,
        spec.total_classes(),
    );
    Ok((e.acc_initial, e.per_class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub experiences: usize,
    pub final_acc_initial: Option<MeanStd>,
    pub final_acc_new: Option<MeanStd>,
    /// Per-phase seconds summed over the stream.
    pub total_timing: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub version: u32,
    pub stream: StreamSpec,
    pub seeds: Vec<u64>,
    pub pretrained_acc_initial: MeanStd,
    pub pretrained_per_seed: Vec<f64>,
    pub strategies: BTreeMap<String, StrategySummary>,
}

/// Full benchmark: writes `run.json`, `metrics.csv` and `summary.json` into
/// `out_dir`. The summary is computed from the values as written to the CSV.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    ensure_writable_dir(out_dir)?;
    write_json(&out_dir.join("run.json"), cfg)?;
    let mut records = Vec::new();
    let mut pretrained = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = prepare_seed(cfg, seed)?;
        pretrained.push(round6(pretrained_accuracy(&ctx)?.0));
        for s in &cfg.strategies {
            records.extend(run_strategy(&ctx, s, cfg.eval_every)?);
        }
    }
    let classes = cfg.stream.total_classes();
    let metrics = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics, &records, classes)?;
    let (written, _) = read_metrics_csv(&metrics)?;
    let summary = summarize(cfg, &written, pretrained);
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn summarize(cfg: &RunConfig, records: &[MetricsRecord], pretrained: Vec<f64>) -> RunSummary {
    let mut strategies = BTreeMap::new();
    for s in &cfg.strategies {
        let label = s.label();
        let mut finals_i = Vec::new();
        let mut finals_n = Vec::new();
        let mut totals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut experiences = 0;
        for &seed in &cfg.seeds {
            let rows: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.seed == seed && r.strategy == label)
                .collect();
            experiences = rows.len();
            if let Some(last) = rows.last() {
                finals_i.extend(last.acc_initial);
                finals_n.extend(last.acc_new);
            }
            let sum = |f: fn(&MetricsRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>();
            let phases: [(&str, f64); 5] = [
                ("feature_extraction", sum(|r| r.timing.feature_extraction)),
                ("forward", sum(|r| r.timing.forward)),
                ("backward", sum(|r| r.timing.backward)),
                ("weights_update", sum(|r| r.timing.weights_update)),
                ("overall", sum(|r| r.timing.overall)),
            ];
            for (k, v) in phases {
                totals.entry(k.to_string()).or_default().push(v);
            }
        }
        strategies.insert(
            label,
            StrategySummary {
                experiences,
                final_acc_initial: MeanStd::of(&finals_i),
                final_acc_new: MeanStd::of(&finals_n),
                total_timing: totals
                    .into_iter()
                    .filter_map(|(k, v)| MeanStd::of(&v).map(|m| (k, m)))
                    .collect(),
            },
        );
    }
    RunSummary {
        format: "edgecl-summary".into(),
        version: 1,
        stream: cfg.stream,
        seeds: cfg.seeds.clone(),
        pretrained_acc_initial: MeanStd::of(&pretrained).expect("at least one seed"),
        pretrained_per_seed: pretrained,
        strategies,
    }
}
