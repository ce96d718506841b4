use serde::{Deserialize, Serialize};

use crate::agent::EpsilonSchedule;
use crate::mixer::{MixerConfig, MixerKind};
use crate::nn::OptimizerConfig;
use crate::surprise::{RatioOrder, SigmaPooling};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Emix,
    Qmix,
    Twinqmix,
    Vdn,
    Iql,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Emix => "emix",
            Algo::Qmix => "qmix",
            Algo::Twinqmix => "twinqmix",
            Algo::Vdn => "vdn",
            Algo::Iql => "iql",
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "emix" => Algo::Emix,
            "qmix" => Algo::Qmix,
            "twinqmix" => Algo::Twinqmix,
            "vdn" => Algo::Vdn,
            "iql" => Algo::Iql,
            other => return Err(Error::Config(format!("unknown algo `{other}`"))),
        })
    }
}

/// How target copies are refreshed from the online parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    /// Target `i` syncs at offset `i·update_interval/m`.
    #[default]
    Staggered,
    /// All targets sync together every `update_interval` steps.
    Simultaneous,
}

/// Order of the max over next joint actions and the min over targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetReduction {
    /// `min_i max_u' Q_i(s', u')`: each target's own greedy value, then the minimum.
    #[default]
    MinOfMax,
    /// `max_u' min_i Q_i(s', u')` by joint-action enumeration.
    MaxOfMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub algo: Algo,
    /// Number of target estimators; `None` takes the algorithm default.
    pub m: Option<usize>,
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps between syncs of one target.
    pub update_interval: u64,
    /// Environment steps per gradient step.
    pub train_every: u64,
    pub agent_hidden: usize,
    pub surprise_hidden: usize,
    pub mixer: MixerConfig,
    pub optimizer: OptimizerConfig,
    pub epsilon: EpsilonSchedule,
    pub sync_mode: SyncMode,
    pub target_reduction: TargetReduction,
    pub sigma_pooling: SigmaPooling,
    pub ratio_order: RatioOrder,
    /// Keep the surprise mixer at its initialization.
    pub freeze_surprise: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Emix,
            m: None,
            beta: 0.01,
            gamma: 0.99,
            batch_size: 32,
            buffer_capacity: 5000,
            update_interval: 10_000,
            train_every: 50,
            agent_hidden: 64,
            surprise_hidden: 64,
            mixer: MixerConfig::default(),
            optimizer: OptimizerConfig::default(),
            epsilon: EpsilonSchedule::default(),
            sync_mode: SyncMode::Staggered,
            target_reduction: TargetReduction::MinOfMax,
            sigma_pooling: SigmaPooling::Batch,
            ratio_order: RatioOrder::TargetOverOnline,
            freeze_surprise: false,
        }
    }
}

/// The objective an algorithm actually optimizes after forced settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub mixer: MixerKind,
    pub m: usize,
    pub beta: f64,
    /// Whether a surprise mixer is built.
    pub surprise: bool,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == Some(0) {
            return Err(Error::Config("m (number of targets) must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and ≥ 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.buffer_capacity <= self.batch_size {
            return Err(Error::Config(format!(
                "buffer_capacity ({}) must exceed batch_size ({})",
                self.buffer_capacity, self.batch_size
            )));
        }
        if self.update_interval == 0 || self.train_every == 0 {
            return Err(Error::Config("update_interval and train_every must be positive".into()));
        }
        if self.agent_hidden == 0 || self.surprise_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon.start) || !(0.0..=1.0).contains(&self.epsilon.end) {
            return Err(Error::Config("epsilon schedule endpoints must lie in [0, 1]".into()));
        }
        self.mixer.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    /// Applies the settings each baseline forces: `qmix`/`vdn`/`iql` use β = 0
    /// and m = 1, `twinqmix` uses β = 0 and m = 2. `emix` keeps the configured
    /// mixer kind so its reductions can be exercised.
    pub fn objective(&self) -> Result<Objective> {
        self.validate()?;
        Ok(match self.algo {
            Algo::Emix => Objective {
                mixer: self.mixer.kind,
                m: self.m.unwrap_or(2),
                beta: self.beta,
                surprise: true,
            },
            Algo::Twinqmix => Objective {
                mixer: MixerKind::Qmix,
                m: 2,
                beta: 0.0,
                surprise: false,
            },
            Algo::Qmix => Objective {
                mixer: MixerKind::Qmix,
                m: 1,
                beta: 0.0,
                surprise: false,
            },
            Algo::Vdn => Objective {
                mixer: MixerKind::Vdn,
                m: 1,
                beta: 0.0,
                surprise: false,
            },
            Algo::Iql => Objective {
                mixer: MixerKind::Iql,
                m: 1,
                beta: 0.0,
                surprise: false,
            },
        })
    }

    /// The mixer configuration with the kind resolved for this algorithm.
    pub fn resolved_mixer(&self) -> Result<MixerConfig> {
        Ok(MixerConfig {
            kind: self.objective()?.mixer,
            ..self.mixer
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baselines_force_settings() {
        let mut c = LearnerConfig {
            beta: 0.5,
            m: Some(4),
            ..Default::default()
        };
        c.algo = Algo::Qmix;
        let o = c.objective().unwrap();
        assert_eq!((o.m, o.beta, o.mixer), (1, 0.0, MixerKind::Qmix));
        c.algo = Algo::Twinqmix;
        let o = c.objective().unwrap();
        assert_eq!((o.m, o.beta), (2, 0.0));
        c.algo = Algo::Vdn;
        assert_eq!(c.objective().unwrap().mixer, MixerKind::Vdn);
        c.algo = Algo::Emix;
        let o = c.objective().unwrap();
        assert_eq!((o.m, o.beta, o.surprise), (4, 0.5, true));
    }

    #[test]
    fn emix_default_m_is_two() {
        assert_eq!(LearnerConfig::default().objective().unwrap().m, 2);
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            LearnerConfig { m: Some(0), ..Default::default() },
            LearnerConfig { beta: -0.1, ..Default::default() },
            LearnerConfig { gamma: 1.0, ..Default::default() },
            LearnerConfig { buffer_capacity: 32, ..Default::default() },
            LearnerConfig { train_every: 0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn parses_algo_names() {
        for a in [Algo::Emix, Algo::Qmix, Algo::Twinqmix, Algo::Vdn, Algo::Iql] {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        assert!("coma".parse::<Algo>().is_err());
    }
}
