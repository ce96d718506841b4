use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emix_core::env::SpuriousCapture;
use emix_core::learner::{rollout, Algo, ModelDims, Networks};
use emix_core::nn::{checkpoint, component_rng};
use rand::RngCore;
use serde::Serialize;

use emix_harness::aggregate::{aggregate, read_metrics, AggregateReport};
use emix_harness::checks;
use emix_harness::config::{parse_seeds, Overrides, RunConfig, OUT_ROOT_VAR};
use emix_harness::plot::comparison_plots;
use emix_harness::run;

#[derive(Parser)]
#[command(name = "emix", version, about = "Train and evaluate cooperative value-factorization agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    beta: Option<f64>,
    /// Number of target estimators.
    #[arg(long = "m-targets")]
    m_targets: Option<usize>,
    /// `1,2,3` or `1..5`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long = "total-steps")]
    total_steps: Option<u64>,
    /// Output directory; relative paths are placed under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enable storms (default probability when the config has them off).
    #[arg(long, conflicts_with = "no_storm")]
    storm: bool,
    #[arg(long = "no-storm")]
    no_storm: bool,
    /// Root for relative output directories.
    #[arg(long = "out-root", env = OUT_ROOT_VAR)]
    out_root: Option<PathBuf>,
}

impl RunFlags {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            algo: self.algo,
            beta: self.beta,
            m_targets: self.m_targets,
            seeds: self.seeds.as_deref().map(parse_seeds).transpose()?,
            total_steps: self.total_steps,
            output_dir: self.out.clone(),
            storm: match (self.storm, self.no_storm) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
        })?;
        let root = cfg.resolved_output_dir(self.out_root.as_deref());
        Ok((cfg, root))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration across its seeds.
    Train(RunFlags),
    /// Train an algorithm × β matrix and write a comparative report.
    Ablate {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long, value_delimiter = ',', default_value = "emix")]
        algos: Vec<Algo>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
        betas: Vec<f64>,
    },
    /// Roll out a checkpoint greedily and report the success rate.
    Evaluate {
        /// A seed directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint file; defaults to `final.ckpt` in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every step as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the property and oracle suite.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render comparison charts from config directories written by `train`.
    Plot {
        /// Directories holding `seed-*/metrics.jsonl`.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct TraceStep<'a> {
    episode: usize,
    t: usize,
    state: &'a [f64],
    actions: &'a [usize],
    reward: f64,
    terminated: bool,
}

fn evaluate(run_dir: &Path, ckpt: Option<PathBuf>, episodes: usize, seed: u64, trace: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(&run_dir.join("config.toml"))?;
    let ckpt = ckpt.unwrap_or_else(|| run_dir.join("final.ckpt"));
    if !ckpt.is_file() {
        bail!("checkpoint {} not found", ckpt.display());
    }
    let (nets, mut params) = Networks::build(ModelDims::from_env(&cfg.env), &cfg.learner, cfg.run.seeds[0])?;
    checkpoint::load_into(&ckpt, &mut params).with_context(|| format!("loading {}", ckpt.display()))?;
    let mut env = SpuriousCapture::new(cfg.env.clone())?;
    let mut seeds = component_rng(seed, 0);
    let mut rng = component_rng(seed, 1);
    let mut out = match &trace {
        Some(p) => Some(BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let (mut wins, mut ret) = (0usize, 0.0);
    for e in 0..episodes {
        let ep = rollout(&mut env, &nets, &params, seeds.next_u64(), |_| 0.0, &mut rng)?;
        wins += ep.success as usize;
        ret += ep.total_return();
        if let Some(w) = out.as_mut() {
            for t in 0..ep.len() {
                let step = TraceStep {
                    episode: e,
                    t,
                    state: &ep.states[t],
                    actions: &ep.actions[t],
                    reward: ep.rewards[t],
                    terminated: ep.terminated[t],
                };
                writeln!(w, "{}", serde_json::to_string(&step)?)?;
            }
        }
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    println!(
        "{} episodes: success rate {:.3}, mean return {:.3}",
        episodes,
        wins as f64 / episodes.max(1) as f64,
        ret / episodes.max(1) as f64
    );
    Ok(())
}

fn load_report(dir: &Path) -> Result<AggregateReport> {
    let mut logs = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.jsonl").is_file())
        .collect();
    entries.sort();
    for p in entries {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        logs.push((name, read_metrics(&p.join("metrics.jsonl"))?));
    }
    if logs.is_empty() {
        bail!("no seed directories with metrics.jsonl under {}", dir.display());
    }
    let label = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    aggregate(&label, &logs)
}

fn report(out: &run::TrainOutcome) {
    let s = out.report.final_success;
    match s.std {
        Some(sd) => println!("{}: final success {:.3} ± {:.3} over {} seeds", out.label, s.mean, sd, s.n),
        None => println!("{}: final success {:.3} (1 seed)", out.label, s.mean),
    }
    println!("  artifacts in {}", out.dir.display());
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let progress = |m: &str| eprintln!("{m}");
    match cli.cmd {
        Cmd::Train(flags) => {
            let (cfg, root) = flags.resolve()?;
            let out = run::train(&cfg, &root, progress)?;
            report(&out);
        }
        Cmd::Ablate { flags, algos, betas } => {
            let (cfg, root) = flags.resolve()?;
            let outs = run::ablate(&cfg, &algos, &betas, &root, progress)?;
            for o in &outs {
                report(o);
            }
            for row in outs.iter().map(run::ablation_row) {
                if let Some(m) = row.energy_movement_mean {
                    println!("{}: mean |E| movement {m:.4e}", row.label);
                }
            }
            println!("comparison in {}", root.join("ablation").display());
        }
        Cmd::Evaluate {
            run,
            checkpoint,
            episodes,
            seed,
            trace,
        } => evaluate(&run, checkpoint, episodes, seed, trace)?,
        Cmd::Check { seed } => {
            let results = checks::run_all(seed);
            for r in &results {
                println!("{}", r.line());
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Plot { dirs, out } => {
            let reports = dirs.iter().map(|d| load_report(d)).collect::<Result<Vec<_>>>()?;
            for p in comparison_plots(&out, &reports)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
