use super::config::{LearnerConfig, Objective};
use crate::agent::AgentNet;
use crate::env::EnvConfig;
use crate::mixer::Mixer;
use crate::nn::{component_rng, ParamSet};
use crate::surprise::SurpriseNet;
use crate::Result;

/// Stream ids for parameter initialization.
pub(crate) const STREAM_AGENT: u64 = 1;
pub(crate) const STREAM_MIXER: u64 = 2;
pub(crate) const STREAM_SURPRISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
}

impl ModelDims {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        Self {
            n_agents: cfg.n_agents,
            n_actions: crate::env::N_ACTIONS,
            obs_dim: cfg.obs_dim(),
            state_dim: cfg.state_dim(),
        }
    }
}

/// Network structure; parameter values live in a separate [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Networks {
    pub dims: ModelDims,
    pub agent: AgentNet,
    pub mixer: Mixer,
    pub surprise: Option<SurpriseNet>,
}

impl Networks {
    /// Builds all networks into one parameter set ordered agent, mixer,
    /// surprise. Each network draws from its own stream of `seed`.
    pub fn build(dims: ModelDims, cfg: &LearnerConfig, seed: u64) -> Result<(Self, ParamSet)> {
        let obj: Objective = cfg.objective()?;
        let mut params = ParamSet::new();
        let agent = AgentNet::new(
            &mut params,
            dims.obs_dim,
            dims.n_actions,
            dims.n_agents,
            cfg.agent_hidden,
            &mut component_rng(seed, STREAM_AGENT),
        )?;
        let mixer = Mixer::new(
            &mut params,
            dims.n_agents,
            dims.state_dim,
            &cfg.resolved_mixer()?,
            &mut component_rng(seed, STREAM_MIXER),
        )?;
        let surprise = if obj.surprise {
            Some(SurpriseNet::new(
                &mut params,
                dims.state_dim,
                dims.n_agents,
                dims.n_actions,
                dims.obs_dim,
                cfg.surprise_hidden,
                &mut component_rng(seed, STREAM_SURPRISE),
            )?)
        } else {
            None
        };
        Ok((
            Self {
                dims,
                agent,
                mixer,
                surprise,
            },
            params,
        ))
    }
}
