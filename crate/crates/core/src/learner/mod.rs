//! Replay, target management, the TD objective with the energy bonus and the
//! training loop.

mod batch;
mod config;
mod loss;
mod model;
mod replay;
mod targets;
mod train;

pub use batch::{Episode, EpisodeBatch};
pub use config::{Algo, LearnerConfig, Objective, SyncMode, TargetReduction};
pub use loss::{
    emix_loss, min_over_targets, target_estimates, td_target, LossOutput, LossStats, MAX_JOINT_ENUMERATION,
};
pub use model::{ModelDims, Networks};
pub use replay::EpisodeBuffer;
pub use targets::TargetBank;
pub use train::{
    evaluate_policy, random_policy_baseline, rollout, train_run, EvalReport, MetricsRecord, RunObserver, RunSummary,
    TrainSettings, UpdateRecord,
};

use crate::nn::{OptimizerConfig, ParamSet, RmsProp};
use crate::Result;

/// Online parameters, target copies and optimizer state for one run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub cfg: LearnerConfig,
    pub objective: Objective,
    pub nets: Networks,
    pub params: ParamSet,
    pub targets: TargetBank,
    pub optimizer: RmsProp,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        let objective = cfg.objective()?;
        let (nets, params) = Networks::build(dims, &cfg, seed)?;
        let targets = TargetBank::new(objective.m, &params, cfg.update_interval, cfg.sync_mode)?;
        let optimizer = RmsProp::new(cfg.optimizer, &params)?;
        Ok(Self {
            cfg,
            objective,
            nets,
            params,
            targets,
            optimizer,
        })
    }

    pub fn optimizer_config(&self) -> &OptimizerConfig {
        &self.cfg.optimizer
    }

    pub fn sync_targets(&mut self, t: u64) -> Result<Vec<usize>> {
        self.targets.sync(t, &self.params)
    }

    /// Loss without touching gradients or parameters.
    pub fn evaluate(&self, batch: &EpisodeBatch) -> Result<LossOutput> {
        let mut scratch = self.params.detached_clone();
        emix_loss(batch, &self.nets, &mut scratch, &self.targets, &self.cfg, false)
    }

    /// One gradient step on `batch`.
    pub fn update(&mut self, batch: &EpisodeBatch) -> Result<LossStats> {
        self.params.zero_grads();
        let out = emix_loss(batch, &self.nets, &mut self.params, &self.targets, &self.cfg, true)?;
        let freeze = self.cfg.freeze_surprise;
        self.optimizer
            .step_filtered(&mut self.params, |name| !(freeze && name.starts_with("surprise.")))?;
        Ok(out.stats)
    }
}
