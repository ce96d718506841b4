//! TOML run configuration with `[env]`, `[learner]` and `[run]` tables.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emix_core::env::EnvConfig;
use emix_core::learner::{Algo, LearnerConfig, TrainSettings};
use serde::{Deserialize, Serialize};

/// Storm probability applied by `--storm` when the config has storms off.
pub const DEFAULT_STORM_PROBABILITY: f64 = 0.05;

/// Environment variable naming the root directory for relative output paths.
pub const OUT_ROOT_VAR: &str = "EMIX_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: Option<u64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            total_steps: t.total_steps,
            eval_interval: t.eval_interval,
            eval_episodes: t.eval_episodes,
            checkpoint_interval: t.checkpoint_interval,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub run: RunSection,
}

/// Command-line values that replace config entries when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub algo: Option<Algo>,
    pub beta: Option<f64>,
    pub m_targets: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub total_steps: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub storm: Option<bool>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.settings().validate()?;
        if self.run.seeds.is_empty() {
            bail!("run.seeds must not be empty");
        }
        let mut seen = HashSet::new();
        for s in &self.run.seeds {
            if !seen.insert(s) {
                bail!("run.seeds contains {s} more than once");
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            total_steps: self.run.total_steps,
            eval_interval: self.run.eval_interval,
            eval_episodes: self.run.eval_episodes,
            checkpoint_interval: self.run.checkpoint_interval,
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(a) = o.algo {
            self.learner.algo = a;
        }
        if let Some(b) = o.beta {
            self.learner.beta = b;
        }
        if let Some(m) = o.m_targets {
            self.learner.m = Some(m);
        }
        if let Some(s) = &o.seeds {
            self.run.seeds = s.clone();
        }
        if let Some(t) = o.total_steps {
            self.run.total_steps = t;
        }
        if let Some(d) = &o.output_dir {
            self.run.output_dir = d.clone();
        }
        match o.storm {
            Some(false) => self.env.p_storm = 0.0,
            Some(true) if self.env.p_storm == 0.0 => self.env.p_storm = DEFAULT_STORM_PROBABILITY,
            _ => {}
        }
        self.validate()
    }

    /// `output_dir`, placed under `root` when it is relative.
    pub fn resolved_output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.run.output_dir.is_relative() => r.join(&self.run.output_dir),
            _ => self.run.output_dir.clone(),
        }
    }

    /// Short directory label naming the algorithm and its objective settings.
    pub fn label(&self) -> Result<String> {
        let obj = self.learner.objective()?;
        let mut s = self.learner.algo.name().to_string();
        if obj.surprise {
            s.push_str(&format!("-beta{}-m{}", obj.beta, obj.m));
        }
        if self.env.p_storm == 0.0 {
            s.push_str("-nostorm");
        }
        Ok(s)
    }
}

/// Parses `1,2,5` or `1..5` (inclusive) into a seed list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().with_context(|| format!("bad seed `{p}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.learner.beta = 0.1;
        cfg.run.checkpoint_interval = Some(1000);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[learner]\nbeta_typo = 1.0\n").unwrap_err();
        assert!(format!("{err:#}").contains("beta_typo"));
        assert!(RunConfig::from_toml("[extra]\n").is_err());
    }

    #[test]
    fn seeds_must_be_distinct_and_present() {
        assert!(RunConfig::from_toml("[run]\nseeds = []\n").is_err());
        assert!(RunConfig::from_toml("[run]\nseeds = [1, 2, 1]\n").is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::from_toml("[env]\np_storm = 0.0\n[learner]\nalgo = \"qmix\"\n").unwrap();
        cfg.apply(&Overrides {
            algo: Some(Algo::Emix),
            beta: Some(0.1),
            m_targets: Some(3),
            seeds: Some(vec![7]),
            storm: Some(true),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.learner.algo, Algo::Emix);
        assert_eq!(cfg.learner.m, Some(3));
        assert_eq!(cfg.env.p_storm, DEFAULT_STORM_PROBABILITY);
        assert_eq!(cfg.label().unwrap(), "emix-beta0.1-m3");
        cfg.apply(&Overrides {
            storm: Some(false),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.env.p_storm, 0.0);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("3..1").is_err());
    }
}
