//! Acceptance criteria as functions returning a one-line verdict, shared by
//! the acceptance runner and the regular integration tests.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use edgecl::harness::{self, finals, ordering_checks, prepare_seed, run_strategy, MetricsRecord, RunConfig};
use edgecl::layer::{sgd_step, softmax_cross_entropy};
use edgecl::replay::PRETRAIN_SOURCE;
use edgecl::strategy::{argmax, SlowPhaseConfig};
use edgecl::stream::plan_stream;
use edgecl::timing::timer_granularity;
use edgecl::{
    ArchSpec, CutName, CwrHead, LatentPattern, Layer, LayeredNetwork, Learner, ReplacementPolicy, ReplayBuffer,
    StrategyConfig, StrategyKind, StreamSpec, Tensor,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck;

/// `Ok(detail)` on pass, `Err(detail)` on failure.
pub type Verdict = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn params(net: &LayeredNetwork) -> Vec<f32> {
    net.layers()
        .iter()
        .flat_map(|l| l.weights.data().iter().chain(l.bias.data()).copied())
        .collect()
}

fn grads(layers: &[Layer]) -> Vec<f32> {
    let mut out = Vec::new();
    for l in layers {
        for t in [&l.weights, &l.bias] {
            match t.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn sgd_all(net: &mut LayeredNetwork, lr: f32) {
    for l in net.layers_mut() {
        if !l.has_params() {
            continue;
        }
        for t in [&mut l.weights, &mut l.bias] {
            let g = t.grad().unwrap().to_vec();
            sgd_step(t.data_mut(), &g, lr).unwrap();
        }
    }
}

pub fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let tallies = gradcheck::all();
    let worst = tallies.iter().map(|t| t.worst).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail = tallies
        .iter()
        .map(|t| format!("{} {:.1e}", t.name, t.worst))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        tallies.iter().all(gradcheck::Tally::passes) && secs < 60.0,
        format!("max rel err {worst:.2e} in {secs:.1}s ({detail})"),
    )
}

/// Latent replay at the input cut against a replay loop that joins raw
/// frames into one batch and trains the whole network on it.
pub fn input_cut_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let classes = 9;
    let mut latent = LayeredNetwork::new(ArchSpec::desk(classes), 5).unwrap();
    latent.set_cut(CutName::Input).unwrap();
    let mut native = latent.clone();
    let frame = latent.input_shape().to_vec();
    let mut buffer =
        ReplayBuffer::new(60, latent.latent_shape(), ReplacementPolicy::Balanced).with_raw_frames(frame.clone());
    let mut shape = vec![60];
    shape.extend(&frame);
    let pool_frames = random_tensor(&mut rng, &shape);
    let pool_latents = latent.extract_latent(&pool_frames).unwrap();
    let patterns = (0..60)
        .map(|i| LatentPattern {
            latent: pool_latents.item(i).to_vec(),
            label: i % 6,
            source: PRETRAIN_SOURCE,
            raw: Some(pool_frames.item(i).to_vec()),
        })
        .collect::<Vec<_>>();
    buffer.seed_from_pretrain(&patterns, &mut rng).unwrap();
    let (b1, b2, lr) = (10, 10, 0.05);
    let mut worst = 0.0f32;
    for step in 0..50 {
        let mut s = vec![b1];
        s.extend(&frame);
        let current = random_tensor(&mut rng, &s);
        let class = 6 + step % 3;
        let picked = buffer.sample(b2, &mut rng);
        let (replay_latents, replay_labels) = buffer.batch_of(&picked);
        let raws: Vec<&[f32]> = picked.iter().map(|p| p.raw.as_deref().unwrap()).collect();
        let replay_raw = Tensor::stack(&frame, &raws).unwrap();
        let mut labels = vec![class; b1];
        labels.extend(&replay_labels);

        let logits = latent.mixed_forward(&current, &replay_latents).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &labels, b1 + b2).unwrap();
        latent.mixed_backward(&d, b1).unwrap();
        latent.sgd_layers(0..latent.layers().len(), lr).unwrap();

        let joined = Tensor::concat_rows(&current, &replay_raw).unwrap();
        let logits = native.forward_train(&joined).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &labels, b1 + b2).unwrap();
        native.backward(&d).unwrap();
        sgd_all(&mut native, lr);

        worst = worst.max(max_abs_diff(&params(&latent), &params(&native)));
    }
    ensure(
        worst <= 1e-6,
        format!("max parameter difference {worst:.2e} after 50 steps"),
    )
}

/// Below-cut gradients of a mixed batch against the current rows alone,
/// and exact zeros when the batch holds no current rows.
pub fn backward_stop() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f32;
    let mut zero_ok = true;
    for cut in [CutName::Conv2, CutName::Pool] {
        for trial in 0..5 {
            let mut net = LayeredNetwork::new(ArchSpec::desk(9), 20 + trial).unwrap();
            net.set_cut(cut).unwrap();
            net.freeze_below_cut(false);
            let (b1, b2) = (4 + trial as usize, 10);
            let mut s = vec![b1];
            s.extend(net.input_shape());
            let current = random_tensor(&mut rng, &s);
            let mut s = vec![b2];
            s.extend(net.latent_shape());
            let replay = random_tensor(&mut rng, &s)
                .data()
                .iter()
                .map(|v| v.abs())
                .collect::<Vec<_>>();
            let replay = Tensor::new(s, replay).unwrap();
            let labels: Vec<usize> = (0..b1 + b2).map(|_| rng.gen_range(0..9)).collect();
            let below = net.below_cut();

            let mut mixed = net.clone();
            let lat = mixed.forward_below(&current).unwrap();
            let logits = mixed.mixed_forward(&lat, &replay).unwrap();
            let (_, d) = softmax_cross_entropy(&logits, &labels, b1 + b2).unwrap();
            mixed.mixed_backward(&d, b1).unwrap();
            let got = grads(&mixed.layers()[below.clone()]);

            let mut alone = net.clone();
            let logits = alone.forward_train(&current).unwrap();
            let (_, d) = softmax_cross_entropy(&logits, &labels[..b1], b1).unwrap();
            alone.backward(&d).unwrap();
            let scale = b1 as f32 / (b1 + b2) as f32;
            let want: Vec<f32> = grads(&alone.layers()[below.clone()])
                .iter()
                .map(|g| g * scale)
                .collect();
            worst = worst.max(max_abs_diff(&got, &want));

            let mut empty = net.clone();
            let mut s = vec![0];
            s.extend(net.latent_shape());
            let logits = empty.mixed_forward(&Tensor::zeros(&s), &replay).unwrap();
            let (_, d) = softmax_cross_entropy(&logits, &labels[b1..], b2).unwrap();
            empty.mixed_backward(&d, 0).unwrap();
            zero_ok &= grads(&empty.layers()[below]).iter().all(|&g| g == 0.0);
        }
    }
    ensure(
        worst <= 1e-6 && zero_ok,
        format!("max below-cut gradient difference {worst:.2e}; b1=0 gives exact zeros: {zero_ok}"),
    )
}

/// One benchmark pass over the default configuration, shared by the
/// ordering and timing criteria.
pub struct BenchmarkRun {
    pub cfg: RunConfig,
    pub records: Vec<MetricsRecord>,
    pub elapsed: Duration,
}

pub fn benchmark_run() -> edgecl::Result<BenchmarkRun> {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = prepare_seed(&cfg, seed)?;
        for s in &cfg.strategies {
            records.extend(run_strategy(&ctx, s, usize::MAX)?);
        }
    }
    Ok(BenchmarkRun {
        cfg,
        records,
        elapsed: start.elapsed(),
    })
}

pub fn orderings(run: &BenchmarkRun) -> Verdict {
    let labels: Vec<String> = run.cfg.strategies.iter().map(StrategyConfig::label).collect();
    let f = finals(&run.records, &labels, &run.cfg.seeds);
    let checks = ordering_checks(&f, run.cfg.stream.total_classes());
    let secs = run.elapsed.as_secs_f64();
    let table = f
        .iter()
        .map(|s| {
            format!(
                "{} {:.3}/{:.3}",
                s.strategy,
                s.acc_initial.map_or(f64::NAN, |m| m.mean),
                s.acc_new.map_or(f64::NAN, |m| m.mean)
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    let failed: Vec<String> = checks.iter().filter(|c| !c.holds).map(|c| c.detail.clone()).collect();
    ensure(
        checks.len() == 8 && failed.is_empty() && secs < 600.0 && run.cfg.seeds.len() >= 5,
        format!(
            "{} seeds in {secs:.0}s; initial/new: {table}; violated: [{}]",
            run.cfg.seeds.len(),
            failed.join("; ")
        ),
    )
}

pub fn timing_structure(run: &BenchmarkRun) -> Verdict {
    let gran = timer_granularity();
    let by = |label: &str| -> Vec<&MetricsRecord> { run.records.iter().filter(|r| r.strategy == label).collect() };
    let mean_overall = |label: &str| {
        let rs = by(label);
        rs.iter().map(|r| r.timing.overall).sum::<f64>() / rs.len() as f64
    };
    let (pool, conv2, input) = (
        mean_overall("ar1-pool"),
        mean_overall("ar1-conv2"),
        mean_overall("ar1-input"),
    );
    let pool_zero = by("ar1-pool").iter().all(|r| r.timing.weights_update == 0.0);
    let gap = run
        .records
        .iter()
        .map(|r| (r.timing.overall - r.timing.phase_sum()).abs())
        .fold(0.0, f64::max);
    ensure(
        pool_zero && pool < conv2 && conv2 < input && conv2 >= 5.0 * pool && gap <= 2.0 * gran,
        format!(
            "overall per experience pool {pool:.2e}s < conv2 {conv2:.2e}s < input {input:.2e}s (conv2/pool {:.1}x); \
             pool weights_update all zero: {pool_zero}; accounting gap {gap:.1e}s vs granularity {gran:.1e}s",
            conv2 / pool
        ),
    )
}

pub fn memory_accounting() -> Verdict {
    let fill = |dim: usize| {
        let mut b = ReplayBuffer::new(500, vec![dim], ReplacementPolicy::Balanced);
        let pool: Vec<LatentPattern> = (0..1000)
            .map(|i| LatentPattern {
                latent: vec![0.5; dim],
                label: i % 10,
                source: PRETRAIN_SOURCE,
                raw: None,
            })
            .collect();
        b.seed_from_pretrain(&pool, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.len(), 500);
        b.byte_size()
    };
    let desk_dim = {
        let mut net = LayeredNetwork::new(ArchSpec::desk(StreamSpec::desk().total_classes()), 0).unwrap();
        net.set_cut(CutName::Pool).unwrap();
        net.latent_shape().iter().product::<usize>()
    };
    let (big, desk) = (fill(1024), fill(desk_dim));
    ensure(
        big == 2_048_000 && desk == 32_000 && desk_dim == 16,
        format!("500x1024 -> {big} bytes, 500x{desk_dim} (desk pool) -> {desk} bytes"),
    )
}

fn pattern(label: usize, source: u32) -> LatentPattern {
    LatentPattern {
        latent: vec![label as f32],
        label,
        source,
        raw: None,
    }
}

pub fn buffer_policies() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = Vec::new();
    for seq in 0..1000 {
        let capacity = rng.gen_range(1..80);
        let k = 10;
        let mut bal = ReplayBuffer::new(capacity, vec![1], ReplacementPolicy::Balanced);
        let mut unb = ReplayBuffer::new(capacity, vec![1], ReplacementPolicy::Unbalanced { k });
        let classes = rng.gen_range(1..12);
        for step in 0..rng.gen_range(1..25u32) {
            let class = rng.gen_range(0..classes);
            let offered = rng.gen_range(1..40);
            let batch: Vec<LatentPattern> = (0..offered).map(|_| pattern(class, step)).collect();

            let before: BTreeMap<usize, usize> = bal.class_counts();
            let supply = |c: usize| before.get(&c).copied().unwrap_or(0) + if c == class { offered } else { 0 };
            bal.insert(batch.clone(), &mut rng).unwrap();
            let after = bal.class_counts();
            let max = after.values().copied().max().unwrap_or(0);
            let total_supply: usize = before.values().sum::<usize>() + offered;
            let banded = after.iter().all(|(&c, &n)| n + 1 >= max || n == supply(c));
            let filled = bal.len() == capacity.min(total_supply);
            if !banded || !filled || bal.len() > capacity {
                failures.push(format!("balanced seq {seq} step {step}: {after:?} cap {capacity}"));
            }

            let len_before = unb.len();
            let replaced = unb.insert(batch, &mut rng).unwrap();
            let landed = unb.entries().iter().filter(|p| p.source == step).count();
            let expect = k.min(offered).min(capacity);
            if replaced != expect || landed != expect || unb.len() != capacity.min(len_before + expect) {
                failures.push(format!(
                    "unbalanced seq {seq} step {step}: replaced {replaced}, landed {landed}"
                ));
            }
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "1000 sequences; {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    )
}

pub fn cwr_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (classes, dim) = (7, 5);
    let mut untouched = true;
    let mut fresh_err = 0.0f32;
    let mut tw_ignored = true;
    for _ in 0..50 {
        let mut head = CwrHead::new(classes, dim);
        let mut layer = Layer::dense(dim, classes, &mut rng);
        let past: BTreeMap<usize, usize> = (0..4).map(|c| (c, rng.gen_range(1..50))).collect();
        head.set_consolidated(&layer, &past).unwrap();
        let mut exp: Vec<usize> = (0..classes).filter(|_| rng.gen_bool(0.5)).collect();
        if exp.is_empty() {
            exp.push(5);
        }
        head.init(&exp).unwrap();
        for v in head.tw_mut().data_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
        let tw_before = head.tw().clone();
        let cw_before = head.cw().clone();
        let counts: BTreeMap<usize, usize> = exp.iter().map(|&c| (c, rng.gen_range(1..30))).collect();
        head.consolidate(&exp, &counts).unwrap();
        let w = dim + 1;
        let rows: Vec<f32> = exp
            .iter()
            .flat_map(|&c| tw_before.data()[c * w..(c + 1) * w].to_vec())
            .collect();
        let mean = rows.iter().sum::<f32>() / rows.len() as f32;
        for c in 0..classes {
            let (a, b) = (
                &head.cw().data()[c * w..(c + 1) * w],
                &cw_before.data()[c * w..(c + 1) * w],
            );
            if !exp.contains(&c) {
                untouched &= a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
            } else if !past.contains_key(&c) {
                for (x, t) in a.iter().zip(&tw_before.data()[c * w..(c + 1) * w]) {
                    fresh_err = fresh_err.max((x - (t - mean)).abs());
                }
            }
        }
        let feats = random_tensor(&mut rng, &[12, dim]);
        let before = (head.logits(&feats).unwrap(), head.predict(&feats).unwrap());
        for v in head.tw_mut().data_mut() {
            *v = rng.gen_range(-100.0..100.0);
        }
        let mid = (head.logits(&feats).unwrap(), head.predict(&feats).unwrap());
        tw_ignored &= before == mid;
        for v in layer.weights.data_mut() {
            *v *= -3.0;
        }
        head.store_tw_from(&layer).unwrap();
        let after = (head.logits(&feats).unwrap(), head.predict(&feats).unwrap());
        tw_ignored &= before == after;
    }
    ensure(
        untouched && fresh_err <= 1e-6 && tw_ignored,
        format!(
            "outside rows bitwise unchanged: {untouched}; past=0 rows match tw - mean within {fresh_err:.1e}; \
             inference ignores tw: {tw_ignored}"
        ),
    )
}

pub fn stream_counting() -> Verdict {
    let spec = StreamSpec::full_scale();
    let len = spec.stream_len();
    let seg = len / spec.new_classes;
    let mut misplaced = 0;
    let mut single = true;
    for seed in 0..100 {
        let plan = plan_stream(&spec, seed).unwrap();
        single &= plan.len() == len;
        for k in 0..spec.new_classes {
            let class = spec.initial_classes + k;
            let first = plan.iter().position(|s| s.class == class).unwrap();
            if first / seg != k {
                misplaced += 1;
            }
        }
    }
    ensure(
        len == 225 && single && misplaced == 0,
        format!("{len} single-class experiences; misplaced first appearances over 100 seeds: {misplaced}"),
    )
}

/// Hand-written fine-tuning: whole-network SGD on each experience, head
/// rows restricted to the classes seen so far plus the current one.
fn naive_reference(
    net: &mut LayeredNetwork,
    cw: &Tensor,
    initial: &BTreeSet<usize>,
    stream: &[edgecl::Experience],
    cfg: &StrategyConfig,
) {
    let k = net.num_classes();
    let d = net.feature_dim();
    {
        let out = net.output_index();
        let layer = &mut net.layers_mut()[out];
        for j in 0..k {
            for i in 0..d {
                layer.weights.data_mut()[i * k + j] = cw.data()[j * (d + 1) + i];
            }
            layer.bias.data_mut()[j] = cw.data()[j * (d + 1) + d];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = initial.clone();
    for exp in stream {
        let class = exp.class();
        seen.insert(class);
        let mut order: Vec<usize> = (0..exp.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.current_batch) {
                let logits = net.forward_train(&exp.frames.select(chunk)).unwrap();
                let (_, dl) = softmax_cross_entropy(&logits, &vec![class; chunk.len()], chunk.len()).unwrap();
                net.backward(&dl).unwrap();
                let out = net.output_index();
                let layer = &mut net.layers_mut()[out];
                for j in (0..k).filter(|j| !seen.contains(j)) {
                    for i in 0..d {
                        layer.weights.grad_mut()[i * k + j] = 0.0;
                    }
                    layer.bias.grad_mut()[j] = 0.0;
                }
                sgd_all(net, cfg.lr);
            }
        }
    }
}

fn degenerate_naive(cfg: &RunConfig) -> Result<String, String> {
    let ctx = prepare_seed(cfg, 0).map_err(|e| e.to_string())?;
    let spec = &ctx.stream.spec;
    let stream = &ctx.stream.experiences[..spec.stream_len().min(6)];
    let mut scfg = StrategyConfig::new(StrategyKind::Naive, CutName::Input);
    scfg.lambda = 0.0;
    scfg.buffer_capacity = 0;
    let mut learner = Learner::new(&ctx.pretrained, scfg.clone(), &ctx.stream.pretrain).map_err(|e| e.to_string())?;
    for e in stream {
        learner.train_experience(e).map_err(|e| e.to_string())?;
    }
    let mut reference = ctx.pretrained.net.clone();
    let initial: BTreeSet<usize> = (0..spec.initial_classes).collect();
    naive_reference(&mut reference, ctx.pretrained.head.cw(), &initial, stream, &scfg);
    let same_params = params(&learner.net)
        .iter()
        .zip(params(&reference))
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let ref_logits = reference.forward(&ctx.stream.test.frames).unwrap();
    let ref_pred: Vec<usize> = (0..ref_logits.batch()).map(|i| argmax(ref_logits.item(i))).collect();
    let same_pred = learner.predict(&ctx.stream.test.frames).unwrap() == ref_pred;
    if same_params && same_pred {
        Ok(format!(
            "naive/input/no-buffer/lambda=0 matches hand-written fine-tuning bitwise over {} experiences",
            stream.len()
        ))
    } else {
        Err(format!(
            "fine-tuning mismatch: params {same_params}, predictions {same_pred}"
        ))
    }
}

fn degenerate_two_phase(cfg: &RunConfig) -> Result<String, String> {
    let ctx = prepare_seed(cfg, 1).map_err(|e| e.to_string())?;
    let single = StrategyConfig::new(StrategyKind::Ar1, CutName::Pool);
    let mut two = single.clone();
    two.slow = Some(SlowPhaseConfig {
        epochs: 0,
        ..SlowPhaseConfig::default()
    });
    let strip = |rs: Vec<MetricsRecord>| -> Vec<MetricsRecord> {
        rs.into_iter()
            .map(|mut r| {
                r.timing = Default::default();
                r
            })
            .collect()
    };
    let a = strip(run_strategy(&ctx, &single, 1).map_err(|e| e.to_string())?);
    let b = strip(run_strategy(&ctx, &two, 1).map_err(|e| e.to_string())?);
    if a == b {
        Ok(format!(
            "two-phase with 0 slow epochs equals single-phase pool over {} experiences",
            a.len()
        ))
    } else {
        Err("two-phase with 0 slow epochs diverges from single-phase pool".into())
    }
}

fn csv_without_timing(path: &std::path::Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !header[i].starts_with("t_")).collect();
    let mut rows = vec![keep.iter().map(|&i| header[i].to_string()).collect::<Vec<_>>()];
    for rec in r.records() {
        let rec = rec.unwrap();
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    rows
}

fn degenerate_determinism(cfg: &RunConfig) -> Result<String, String> {
    let mut cfg = cfg.clone();
    cfg.seeds = vec![2];
    cfg.strategies
        .retain(|s| ["ar1-conv2", "replay-unbalanced-pool"].contains(&s.label().as_str()));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        harness::run(&cfg, d.path()).map_err(|e| e.to_string())?;
    }
    let a = csv_without_timing(&dirs[0].path().join("metrics.csv"));
    let b = csv_without_timing(&dirs[1].path().join("metrics.csv"));
    if a == b && a.len() > 1 {
        Ok(format!(
            "two runs give identical metrics.csv ({} rows, timing excluded)",
            a.len() - 1
        ))
    } else {
        Err("metrics.csv differs between identical runs".into())
    }
}

pub fn degeneration() -> Verdict {
    let cfg = RunConfig::default();
    let parts = [
        degenerate_naive(&cfg),
        degenerate_two_phase(&cfg),
        degenerate_determinism(&cfg),
    ];
    let ok = parts.iter().all(Result::is_ok);
    let detail = parts
        .iter()
        .map(|p| match p {
            Ok(s) | Err(s) => s.clone(),
        })
        .collect::<Vec<_>>()
        .join("; ");
    ensure(ok, detail)
}
