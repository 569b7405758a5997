use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgecl::harness::{self, RunConfig};
use edgecl::stream::generate_stream;
use edgecl::{Error, Result, SyntheticDataset};

#[derive(Parser)]
#[command(name = "edgecl", version, about = "Continual-learning benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic dataset split and stream for one seed to a directory.
    Gen(GenArgs),
    /// Run every strategy over every seed; writes run.json, metrics.csv and summary.json.
    Run(CommonArgs),
    /// Time one strategy per cut; writes timing.csv and profile.json.
    Profile(CommonArgs),
    /// Compare strategies; writes curves.csv and comparison.json.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Comma-separated seed list overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated strategy labels to keep.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Compare finished run directories instead of running the config.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(keep) = &args.strategies {
        if let Some(missing) = keep.iter().find(|k| !cfg.strategies.iter().any(|s| &s.label() == *k)) {
            return Err(Error::Config(format!("unknown strategy {missing}")));
        }
        cfg.strategies.retain(|s| keep.contains(&s.label()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let ds_seed = cfg.dataset_seed(a.seed);
            let dataset = SyntheticDataset::generate(&cfg.stream, ds_seed)?;
            let stream = generate_stream(&dataset, a.seed)?;
            stream.export(&a.out, ds_seed)?;
            println!(
                "{} experiences written to {}",
                stream.experiences.len(),
                a.out.display()
            );
        }
        Cmd::Run(a) => {
            let cfg = resolve(&a)?;
            let s = harness::run(&cfg, &a.out)?;
            println!("pretrained initial accuracy {:.4}", s.pretrained_acc_initial.mean);
            for (label, st) in &s.strategies {
                let show =
                    |m: Option<harness::MeanStd>| m.map_or("-".to_string(), |m| format!("{:.4}±{:.4}", m.mean, m.std));
                println!(
                    "{label:<24} initial {} new {}",
                    show(st.final_acc_initial),
                    show(st.final_acc_new)
                );
            }
        }
        Cmd::Profile(a) => {
            let cfg = resolve(&a)?;
            let t = harness::profile(&cfg, &a.out)?;
            for c in &t.columns {
                println!(
                    "{:<6} overall {:.6}s forward {:.6}s backward {:.6}s weights_update {:.6}s",
                    c.cut.to_string(),
                    c.overall,
                    c.forward,
                    c.backward,
                    c.weights_update
                );
            }
        }
        Cmd::Compare(a) => {
            let dirs = if a.runs.is_empty() {
                let cfg = resolve(&a.common)?;
                let dir = a.common.out.join("run");
                harness::run(&cfg, &dir)?;
                vec![dir]
            } else {
                a.runs.clone()
            };
            let c = harness::compare_runs(&dirs, &a.common.out)?;
            for check in &c.checks {
                println!(
                    "{} {}: {}",
                    if check.holds { "ok  " } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
        }
    }
    Ok(())
}
