//! Seed sweeps and ablation matrices with their on-disk artifacts.
//!
//! A training config writes into `<output_dir>/<label>/`:
//!
//! ```text
//! config.toml          fully resolved configuration
//! aggregate.json       cross-seed report
//! success.svg, abs_td_error.svg, energy.svg
//! seed-<s>/config.toml
//! seed-<s>/metrics.jsonl
//! seed-<s>/updates.jsonl
//! seed-<s>/summary.json
//! seed-<s>/final.ckpt
//! seed-<s>/step-<t>.ckpt   every checkpoint_interval steps when set
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use emix_core::learner::{train_run, Algo, MetricsRecord, RunObserver, RunSummary};
use emix_core::nn::{checkpoint, ParamSet};
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, AggregateReport};
use crate::config::RunConfig;
use crate::experiments::{energy_deciles, EnergyDeciles};
use crate::plot::comparison_plots;

struct FileObserver {
    metrics: BufWriter<File>,
    dir: PathBuf,
}

impl RunObserver for FileObserver {
    fn on_metrics(&mut self, record: &MetricsRecord) -> emix_core::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(self.metrics, "{line}")?;
        self.metrics.flush()?;
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, params: &ParamSet) -> emix_core::Result<()> {
        checkpoint::save(self.dir.join(format!("step-{step}.ckpt")), params)
    }
}

/// Run-level facts that are not part of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub aborted: Option<String>,
    pub episodes: u64,
    pub env_steps: u64,
    pub updates: usize,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub label: String,
    pub dir: PathBuf,
    pub config: RunConfig,
    pub seeds: Vec<SeedOutcome>,
    pub report: AggregateReport,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one seed of `cfg` into `dir`.
pub fn run_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SeedOutcome> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut single = cfg.clone();
    single.run.seeds = vec![seed];
    std::fs::write(dir.join("config.toml"), single.to_toml()?)?;
    let mut obs = FileObserver {
        metrics: BufWriter::new(File::create(dir.join("metrics.jsonl"))?),
        dir: dir.to_path_buf(),
    };
    let summary = train_run(&cfg.env, &cfg.learner, &cfg.settings(), seed, &mut obs)
        .with_context(|| format!("training seed {seed}"))?;
    write_jsonl(&dir.join("updates.jsonl"), &summary.updates)?;
    checkpoint::save(dir.join("final.ckpt"), &summary.params)?;
    let facts = SeedSummary {
        seed,
        aborted: summary.aborted.clone(),
        episodes: summary.episodes,
        env_steps: summary.env_steps,
        updates: summary.updates.len(),
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&facts)?)?;
    Ok(SeedOutcome {
        seed,
        dir: dir.to_path_buf(),
        summary,
    })
}

/// Runs every seed of `cfg` under `root/<label>` and aggregates them.
pub fn train(cfg: &RunConfig, root: &Path, mut progress: impl FnMut(&str)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let label = cfg.label()?;
    let dir = root.join(&label);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut seeds = Vec::new();
    for &seed in &cfg.run.seeds {
        progress(&format!("{label}: seed {seed}"));
        let out = run_seed(cfg, seed, &dir.join(format!("seed-{seed}")))?;
        if let Some(why) = &out.summary.aborted {
            progress(&format!("{label}: seed {seed} aborted at {why}"));
        }
        seeds.push(out);
    }
    let logs: Vec<(String, Vec<MetricsRecord>)> = seeds
        .iter()
        .map(|s| (format!("seed-{}", s.seed), s.summary.metrics.clone()))
        .collect();
    let report = aggregate(&label, &logs)?;
    std::fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(&report)?)?;
    comparison_plots(&dir, std::slice::from_ref(&report))?;
    Ok(TrainOutcome {
        label,
        dir,
        config: cfg.clone(),
        seeds,
        report,
    })
}

/// One row of an ablation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub algo: Algo,
    pub beta: f64,
    pub final_success_mean: f64,
    pub final_success_std: Option<f64>,
    /// Per-seed mean |E| over the first and last tenth of updates.
    pub energy: Vec<Option<EnergyDeciles>>,
    pub energy_movement_mean: Option<f64>,
}

pub fn ablation_row(out: &TrainOutcome) -> AblationRow {
    let energy: Vec<Option<EnergyDeciles>> = out
        .seeds
        .iter()
        .map(|s| {
            out.config
                .learner
                .objective()
                .ok()
                .filter(|o| o.surprise)
                .and_then(|_| energy_deciles(&s.summary.updates))
        })
        .collect();
    let moves: Option<Vec<f64>> = energy.iter().map(|e| e.map(|e| e.movement())).collect();
    AblationRow {
        label: out.label.clone(),
        algo: out.config.learner.algo,
        beta: out.config.learner.beta,
        final_success_mean: out.report.final_success.mean,
        final_success_std: out.report.final_success.std,
        energy_movement_mean: moves.filter(|m| !m.is_empty()).map(|m| m.iter().sum::<f64>() / m.len() as f64),
        energy,
    }
}

/// Trains the `algos × betas` matrix from `base`, writing a comparative report
/// and plots to `root/ablation`.
pub fn ablate(
    base: &RunConfig,
    algos: &[Algo],
    betas: &[f64],
    root: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<TrainOutcome>> {
    let mut outs = Vec::new();
    for &algo in algos {
        for &beta in betas {
            let mut cfg = base.clone();
            cfg.learner.algo = algo;
            cfg.learner.beta = beta;
            let label = cfg.label()?;
            if outs.iter().any(|o: &TrainOutcome| o.label == label) {
                continue;
            }
            outs.push(train(&cfg, root, &mut progress)?);
        }
    }
    write_comparison(&root.join("ablation"), &outs)?;
    Ok(outs)
}

/// Writes `report.json` and comparison charts for several trained configs.
pub fn write_comparison(dir: &Path, outs: &[TrainOutcome]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<AblationRow> = outs.iter().map(ablation_row).collect();
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&rows)?)?;
    let reports: Vec<AggregateReport> = outs.iter().map(|o| o.report.clone()).collect();
    comparison_plots(dir, &reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::read_metrics;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.learner.batch_size = 2;
        cfg.learner.buffer_capacity = 20;
        cfg.learner.train_every = 25;
        cfg.learner.agent_hidden = 8;
        cfg.learner.surprise_hidden = 8;
        cfg.run.total_steps = 400;
        cfg.run.eval_interval = 200;
        cfg.run.eval_episodes = 2;
        cfg.run.checkpoint_interval = Some(200);
        cfg.run.seeds = vec![1, 2];
        cfg
    }

    #[test]
    fn train_writes_artifacts_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(), dir.path(), |_| {}).unwrap();
        let seed_dir = out.dir.join("seed-1");
        for f in ["config.toml", "metrics.jsonl", "updates.jsonl", "summary.json", "final.ckpt", "step-200.ckpt"] {
            assert!(seed_dir.join(f).exists(), "{f}");
        }
        for f in ["config.toml", "aggregate.json", "success.svg", "energy.svg"] {
            assert!(out.dir.join(f).exists(), "{f}");
        }
        let resolved = RunConfig::load(&out.dir.join("config.toml")).unwrap();
        assert_eq!(resolved, tiny());
        let logged = read_metrics(&seed_dir.join("metrics.jsonl")).unwrap();
        assert_eq!(logged, out.seeds[0].summary.metrics);
        assert_eq!(out.report.runs.len(), 2);

        let again = tempfile::tempdir().unwrap();
        let out2 = train(&tiny(), again.path(), |_| {}).unwrap();
        let a = std::fs::read(seed_dir.join("metrics.jsonl")).unwrap();
        let b = std::fs::read(out2.dir.join("seed-1/metrics.jsonl")).unwrap();
        assert_eq!(a, b);
        let ck = checkpoint::load(seed_dir.join("final.ckpt")).unwrap();
        assert_eq!(ck.len(), out.seeds[0].summary.params.len());
    }

    #[test]
    fn ablation_expands_the_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.run.seeds = vec![3];
        let outs = ablate(&cfg, &[Algo::Emix, Algo::Qmix], &[0.001, 0.1], dir.path(), |_| {}).unwrap();
        let labels: Vec<&str> = outs.iter().map(|o| o.label.as_str()).collect();
        assert_eq!(labels, ["emix-beta0.001-m2", "emix-beta0.1-m2", "qmix"]);
        let rows: Vec<AblationRow> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("ablation/report.json")).unwrap()).unwrap();
        assert!(rows[0].energy_movement_mean.is_some());
        assert!(rows[2].energy_movement_mean.is_none());
        assert!(dir.path().join("ablation/success.svg").exists());
    }
}
