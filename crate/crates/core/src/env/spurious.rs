//! `SpuriousCapture`: cooperative prey capture on a square grid with storms.
//!
//! Rules, applied in this order on every step:
//!
//! 1. An active storm counts down by one; an inactive storm starts with
//!    probability `p_storm` and then stays active for `storm_duration` steps.
//! 2. Agents move one cell (blocked by walls and by live prey; agents may share a
//!    cell). `Capture` keeps the agent in place.
//! 3. A live prey is captured when at least two agents that chose `Capture` sit
//!    in cells 4-adjacent to it. Each capture pays +10; every step costs -0.1.
//! 4. Surviving prey take a uniformly random legal move (stay or one of four
//!    directions into a free cell). During a storm they teleport to random free
//!    cells instead.
//!
//! The episode terminates when every prey is captured and is truncated at the
//! episode limit. During a storm, Gaussian noise corrupts the visible offsets
//! and a 4-wide distractor block of every observation. The noise is a
//! deterministic function of the global state and `EnvConfig::seed`, so
//! observations can always be rebuilt from a stored state.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GlobalState, MultiAgentEnv, Observation, StepInfo, StepResult};
use crate::{Error, Result};

pub const N_ACTIONS: usize = 6;
const DISTRACTOR_DIM: usize = 4;
const STEP_REWARD: f64 = -0.1;
const CAPTURE_REWARD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
    Capture = 5,
}

impl Action {
    pub fn from_index(i: usize) -> Option<Self> {
        Some(match i {
            0 => Action::Stay,
            1 => Action::Up,
            2 => Action::Down,
            3 => Action::Left,
            4 => Action::Right,
            5 => Action::Capture,
            _ => return None,
        })
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay | Action::Capture => (0, 0),
        }
    }
}

const MOVES: [(i32, i32); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    pub n_prey: usize,
    pub sight_radius: usize,
    pub episode_limit: usize,
    pub p_storm: f64,
    pub storm_duration: usize,
    pub storm_noise_scale: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            n_agents: 3,
            n_prey: 2,
            sight_radius: 2,
            episode_limit: 50,
            p_storm: 0.05,
            storm_duration: 5,
            storm_noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.grid_size == 0 || self.n_agents == 0 || self.n_prey == 0 {
            return err("grid_size, n_agents and n_prey must be positive");
        }
        if self.sight_radius == 0 || self.sight_radius >= self.grid_size {
            return err("sight_radius must satisfy 0 < sight_radius < grid_size");
        }
        if self.n_agents + self.n_prey > self.grid_size * self.grid_size {
            return err("n_agents + n_prey exceeds the number of cells");
        }
        if self.episode_limit == 0 || self.storm_duration == 0 {
            return err("episode_limit and storm_duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_storm) {
            return err("p_storm must be a probability");
        }
        if !(self.storm_noise_scale >= 0.0) || !self.storm_noise_scale.is_finite() {
            return err("storm_noise_scale must be finite and >= 0");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        2 + 3 * self.n_prey + 3 * (self.n_agents - 1) + DISTRACTOR_DIM
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_agents + 3 * self.n_prey + 3
    }

    /// Largest single-step reward: every prey captured at once.
    pub fn reward_max(&self) -> f64 {
        CAPTURE_REWARD * self.n_prey as f64 + STEP_REWARD
    }

    pub fn reward_min(&self) -> f64 {
        STEP_REWARD
    }
}

type Cell = (i32, i32);

/// Decoded global state, shared by the live environment and by
/// [`state_to_agent_views`].
#[derive(Debug, Clone, PartialEq)]
struct World {
    agents: Vec<Cell>,
    prey: Vec<Cell>,
    alive: Vec<bool>,
    storm_remaining: usize,
    t: usize,
}

impl World {
    fn encode(&self, cfg: &EnvConfig) -> GlobalState {
        let norm = (cfg.grid_size.max(2) - 1) as f64;
        let mut s = Vec::with_capacity(cfg.state_dim());
        for &(r, c) in self.agents.iter().chain(&self.prey) {
            s.push(r as f64 / norm);
            s.push(c as f64 / norm);
        }
        s.extend(self.alive.iter().map(|&a| if a { 1.0 } else { 0.0 }));
        s.push(if self.storm_remaining > 0 { 1.0 } else { 0.0 });
        s.push(self.storm_remaining as f64 / cfg.storm_duration as f64);
        s.push(self.t as f64 / cfg.episode_limit as f64);
        GlobalState(s)
    }

    fn decode(s: &GlobalState, cfg: &EnvConfig) -> Result<Self> {
        if s.0.len() != cfg.state_dim() {
            return Err(Error::dim("global state", cfg.state_dim(), s.0.len()));
        }
        let norm = (cfg.grid_size.max(2) - 1) as f64;
        let cell = |i: usize| -> Cell {
            (
                (s.0[2 * i] * norm).round() as i32,
                (s.0[2 * i + 1] * norm).round() as i32,
            )
        };
        let n = cfg.n_agents;
        let k = cfg.n_prey;
        let agents = (0..n).map(cell).collect();
        let prey = (n..n + k).map(cell).collect();
        let base = 2 * (n + k);
        let alive = (0..k).map(|j| s.0[base + j] > 0.5).collect();
        let storm_on = s.0[base + k] > 0.5;
        let storm_remaining = if storm_on {
            (s.0[base + k + 1] * cfg.storm_duration as f64).round() as usize
        } else {
            0
        };
        let t = (s.0[base + k + 2] * cfg.episode_limit as f64).round() as usize;
        Ok(World {
            agents,
            prey,
            alive,
            storm_remaining,
            t,
        })
    }

    fn views(&self, cfg: &EnvConfig, state: &GlobalState) -> Vec<Observation> {
        let norm = (cfg.grid_size.max(2) - 1) as f64;
        let sight = cfg.sight_radius as i32;
        let storm = self.storm_remaining > 0;
        let mut noise = storm.then(|| storm_noise_rng(cfg, state));
        let scale = cfg.storm_noise_scale;
        let mut draw = move || -> f64 {
            match noise.as_mut() {
                Some(rng) => scale * rng.sample::<f64, _>(StandardNormal),
                None => 0.0,
            }
        };

        let mut out = Vec::with_capacity(self.agents.len());
        for (i, &(r, c)) in self.agents.iter().enumerate() {
            let mut o = Vec::with_capacity(cfg.obs_dim());
            o.push(r as f64 / norm);
            o.push(c as f64 / norm);
            let mut push_entity = |o: &mut Vec<f64>, visible: bool, (er, ec): Cell| {
                let (dr, dc) = (er - r, ec - c);
                if visible && dr.abs() <= sight && dc.abs() <= sight {
                    o.push(1.0);
                    o.push(dr as f64 / sight as f64 + draw());
                    o.push(dc as f64 / sight as f64 + draw());
                } else {
                    o.extend_from_slice(&[0.0, 0.0, 0.0]);
                }
            };
            for (j, &p) in self.prey.iter().enumerate() {
                push_entity(&mut o, self.alive[j], p);
            }
            for (k, &a) in self.agents.iter().enumerate() {
                if k != i {
                    push_entity(&mut o, true, a);
                }
            }
            for _ in 0..DISTRACTOR_DIM {
                o.push(draw());
            }
            out.push(Observation(o));
        }
        out
    }
}

fn storm_noise_rng(cfg: &EnvConfig, state: &GlobalState) -> ChaCha8Rng {
    // FNV-1a over the state's bit patterns, salted with the config seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ cfg.seed;
    for v in &state.0 {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Rebuilds every agent's observation from a stored global state.
pub fn state_to_agent_views(s: &GlobalState, cfg: &EnvConfig) -> Result<Array2<f64>> {
    let world = World::decode(s, cfg)?;
    let views = world.views(cfg, s);
    let mut out = Array2::zeros((cfg.n_agents, cfg.obs_dim()));
    for (mut row, v) in out.rows_mut().into_iter().zip(views) {
        row.assign(&ndarray::ArrayView1::from(&v.0));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SpuriousCapture {
    cfg: EnvConfig,
    world: World,
    rng: ChaCha8Rng,
    done: bool,
    started: bool,
}

impl SpuriousCapture {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let world = World {
            agents: vec![(0, 0); cfg.n_agents],
            prey: vec![(0, 0); cfg.n_prey],
            alive: vec![true; cfg.n_prey],
            storm_remaining: 0,
            t: 0,
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            world,
            done: false,
            started: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> GlobalState {
        self.world.encode(&self.cfg)
    }

    pub fn observations(&self) -> Vec<Observation> {
        let s = self.state();
        self.world.views(&self.cfg, &s)
    }

    pub fn storm_active(&self) -> bool {
        self.world.storm_remaining > 0
    }

    pub fn agent_cells(&self) -> &[(i32, i32)] {
        &self.world.agents
    }

    pub fn prey_cells(&self) -> &[(i32, i32)] {
        &self.world.prey
    }

    /// Places entities at explicit cells. Used to build hand-crafted scenarios.
    pub fn set_positions(&mut self, agents: &[(i32, i32)], prey: &[(i32, i32)]) -> Result<()> {
        if agents.len() != self.cfg.n_agents || prey.len() != self.cfg.n_prey {
            return Err(Error::dim(
                "set_positions",
                format!("{} agents, {} prey", self.cfg.n_agents, self.cfg.n_prey),
                format!("{} agents, {} prey", agents.len(), prey.len()),
            ));
        }
        let g = self.cfg.grid_size as i32;
        if agents.iter().chain(prey).any(|&(r, c)| r < 0 || c < 0 || r >= g || c >= g) {
            return Err(Error::Config("position outside the grid".into()));
        }
        self.world.agents = agents.to_vec();
        self.world.prey = prey.to_vec();
        Ok(())
    }

    fn in_grid(&self, (r, c): Cell) -> bool {
        let g = self.cfg.grid_size as i32;
        r >= 0 && c >= 0 && r < g && c < g
    }

    fn prey_at(&self, cell: Cell) -> bool {
        self.world
            .prey
            .iter()
            .zip(&self.world.alive)
            .any(|(&p, &a)| a && p == cell)
    }

    fn random_free_cell(&mut self, skip_prey: usize) -> Cell {
        let g = self.cfg.grid_size as i32;
        let free: Vec<Cell> = (0..g)
            .flat_map(|r| (0..g).map(move |c| (r, c)))
            .filter(|&cell| {
                !self.world.agents.contains(&cell)
                    && !self
                        .world
                        .prey
                        .iter()
                        .enumerate()
                        .any(|(j, &p)| j != skip_prey && self.world.alive[j] && p == cell)
            })
            .collect();
        free[self.rng.random_range(0..free.len())]
    }

    fn move_prey(&mut self) {
        let storm = self.world.storm_remaining > 0;
        for j in 0..self.cfg.n_prey {
            if !self.world.alive[j] {
                continue;
            }
            if storm {
                self.world.prey[j] = self.random_free_cell(j);
                continue;
            }
            let (r, c) = self.world.prey[j];
            let legal: Vec<Cell> = MOVES
                .iter()
                .map(|&(dr, dc)| (r + dr, c + dc))
                .filter(|&cell| {
                    cell == (r, c)
                        || (self.in_grid(cell)
                            && !self.world.agents.contains(&cell)
                            && !self.prey_at(cell))
                })
                .collect();
            self.world.prey[j] = legal[self.rng.random_range(0..legal.len())];
        }
    }
}

impl MultiAgentEnv for SpuriousCapture {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }

    fn reset(&mut self, seed: u64) -> Result<(GlobalState, Vec<Observation>)> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.cfg.grid_size as i32;
        let total = self.cfg.n_agents + self.cfg.n_prey;
        let cells = rand::seq::index::sample(&mut self.rng, (g * g) as usize, total);
        let placed: Vec<Cell> = cells
            .iter()
            .map(|i| ((i as i32) / g, (i as i32) % g))
            .collect();
        self.world = World {
            agents: placed[..self.cfg.n_agents].to_vec(),
            prey: placed[self.cfg.n_agents..].to_vec(),
            alive: vec![true; self.cfg.n_prey],
            storm_remaining: 0,
            t: 0,
        };
        self.done = false;
        self.started = true;
        let s = self.state();
        let obs = self.world.views(&self.cfg, &s);
        Ok((s, obs))
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if !self.started || self.done {
            return Err(Error::Usage(
                "step called on an episode that has not been reset or has ended".into(),
            ));
        }
        if joint_action.len() != self.cfg.n_agents {
            return Err(Error::dim("joint action", self.cfg.n_agents, joint_action.len()));
        }
        let actions = joint_action
            .iter()
            .enumerate()
            .map(|(agent, &a)| {
                Action::from_index(a).ok_or(Error::InvalidAction {
                    agent,
                    action: a,
                    n_actions: N_ACTIONS,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        if self.world.storm_remaining > 0 {
            self.world.storm_remaining -= 1;
        }
        if self.world.storm_remaining == 0
            && self.cfg.p_storm > 0.0
            && self.rng.random::<f64>() < self.cfg.p_storm
        {
            self.world.storm_remaining = self.cfg.storm_duration;
        }

        for (i, a) in actions.iter().enumerate() {
            let (r, c) = self.world.agents[i];
            let (dr, dc) = a.delta();
            let next = (r + dr, c + dc);
            if self.in_grid(next) && !self.prey_at(next) {
                self.world.agents[i] = next;
            }
        }

        let mut captures = 0;
        for j in 0..self.cfg.n_prey {
            if !self.world.alive[j] {
                continue;
            }
            let (pr, pc) = self.world.prey[j];
            let capturing = self
                .world
                .agents
                .iter()
                .zip(&actions)
                .filter(|(&(r, c), &a)| {
                    a == Action::Capture && (r - pr).abs() + (c - pc).abs() == 1
                })
                .count();
            if capturing >= 2 {
                self.world.alive[j] = false;
                captures += 1;
            }
        }

        self.move_prey();
        self.world.t += 1;

        let terminated = self.world.alive.iter().all(|a| !a);
        let truncated = !terminated && self.world.t >= self.cfg.episode_limit;
        self.done = terminated || truncated;

        let state = self.state();
        let observations = self.world.views(&self.cfg, &state);
        Ok(StepResult {
            reward: STEP_REWARD + CAPTURE_REWARD * captures as f64,
            terminated,
            truncated,
            observations,
            state,
            info: StepInfo {
                captures,
                storm_active: self.world.storm_remaining > 0,
            },
        })
    }

    fn succeeded(&self) -> bool {
        self.world.alive.iter().all(|a| !a)
    }
}
