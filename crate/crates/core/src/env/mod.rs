//! Environment interface and the `SpuriousCapture` gridworld.

mod spurious;

pub use spurious::{state_to_agent_views, Action, EnvConfig, SpuriousCapture, N_ACTIONS};

use serde::{Deserialize, Serialize};

use crate::Result;

/// Global state vector seen only by centralized components (mixers, surprise mixer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState(pub Vec<f64>);

/// One agent's local observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub captures: usize,
    pub storm_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub observations: Vec<Observation>,
    pub state: GlobalState,
    pub info: StepInfo,
}

/// A cooperative, partially observable multi-agent environment with a shared
/// reward and a fixed discrete action set.
pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn episode_limit(&self) -> usize;

    fn reset(&mut self, seed: u64) -> Result<(GlobalState, Vec<Observation>)>;
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;

    /// Availability mask for one agent. Defaults to every action available.
    fn avail_actions(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.n_actions()]
    }

    /// Whether the episode that just ended counts as a success.
    fn succeeded(&self) -> bool;
}

/// One line of a per-episode replay trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub storm_active: bool,
    pub captures: usize,
}
