use ndarray::{s, Array2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::batch::{Episode, EpisodeBatch};
use super::config::LearnerConfig;
use super::model::{ModelDims, Networks};
use super::replay::EpisodeBuffer;
use super::Learner;
use crate::agent::select_actions;
use crate::env::{EnvConfig, MultiAgentEnv, Observation, SpuriousCapture};
use crate::nn::{component_rng, ParamSet};
use crate::{Error, Result};

const STREAM_ENV: u64 = 10;
const STREAM_ACT: u64 = 11;
const STREAM_REPLAY: u64 = 12;
const STREAM_EVAL: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: Option<u64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            eval_interval: 10_000,
            eval_episodes: 32,
            checkpoint_interval: None,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Config(
                "total_steps, eval_interval and eval_episodes must be positive".into(),
            ));
        }
        if self.checkpoint_interval == Some(0) {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log, written at every evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    /// Mean over the updates since the previous record; `None` without updates.
    pub abs_td_error: Option<f64>,
    pub energy_ratio_mean: Option<f64>,
    #[serde(default)]
    pub energy_ratio_abs_mean: Option<f64>,
    pub epsilon: f64,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub step: u64,
    pub loss: f64,
    pub abs_td_error: f64,
    pub e_mean: f64,
    pub e_abs_mean: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: Vec<MetricsRecord>,
    pub updates: Vec<UpdateRecord>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
    pub params: ParamSet,
    pub episodes: u64,
    pub env_steps: u64,
}

/// Receives artifacts as a run produces them.
pub trait RunObserver {
    fn on_metrics(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: u64, _params: &ParamSet) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

fn live_inputs(obs: &[Observation], last: Option<&[usize]>, dims: &ModelDims) -> Result<Array2<f64>> {
    let (n, od, na) = (dims.n_agents, dims.obs_dim, dims.n_actions);
    if obs.len() != n {
        return Err(Error::dim("live observations", n, obs.len()));
    }
    let mut x = Array2::zeros((n, od + na + n));
    for (a, o) in obs.iter().enumerate() {
        if o.0.len() != od {
            return Err(Error::dim(format!("observation of agent {a}"), od, o.0.len()));
        }
        x.slice_mut(s![a, ..od]).assign(&ndarray::ArrayView1::from(o.0.as_slice()));
        if let Some(u) = last {
            x[[a, od + u[a]]] = 1.0;
        }
        x[[a, od + na + a]] = 1.0;
    }
    Ok(x)
}

/// Plays one episode with ε-greedy decentralized actions. `epsilon(k)` gives
/// the exploration rate at the `k`-th step of the episode.
pub fn rollout<E: MultiAgentEnv, R: Rng + ?Sized>(
    env: &mut E,
    nets: &Networks,
    params: &ParamSet,
    env_seed: u64,
    mut epsilon: impl FnMut(u64) -> f64,
    rng: &mut R,
) -> Result<Episode> {
    let (s0, o0) = env.reset(env_seed)?;
    let mut ep = Episode {
        states: vec![s0.0],
        observations: vec![o0.iter().map(|o| o.0.clone()).collect()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: Vec::new(),
        success: false,
    };
    let mut obs = o0;
    let avail: Vec<Vec<bool>> = (0..env.n_agents()).map(|a| env.avail_actions(a)).collect();
    for k in 0.. {
        let x = live_inputs(&obs, ep.actions.last().map(|v| v.as_slice()), &nets.dims)?;
        let q = nets.agent.predict(params, x.view())?;
        let u = select_actions(q.view(), epsilon(k), &avail, rng)?;
        let res = env.step(&u)?;
        ep.actions.push(u);
        ep.rewards.push(res.reward);
        ep.terminated.push(res.terminated);
        ep.states.push(res.state.0);
        ep.observations.push(res.observations.iter().map(|o| o.0.clone()).collect());
        obs = res.observations;
        if res.terminated || res.truncated {
            break;
        }
    }
    ep.success = env.succeeded();
    Ok(ep)
}

/// Greedy rollouts on the given episode seeds.
pub fn evaluate_policy(
    env_cfg: &EnvConfig,
    nets: &Networks,
    params: &ParamSet,
    seeds: &[u64],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut env = SpuriousCapture::new(env_cfg.clone())?;
    let mut rng = component_rng(0, STREAM_EVAL);
    let (mut wins, mut ret) = (0usize, 0.0);
    for &seed in seeds {
        let ep = rollout(&mut env, nets, params, seed, |_| 0.0, &mut rng)?;
        wins += ep.success as usize;
        ret += ep.total_return();
    }
    Ok(EvalReport {
        episodes: seeds.len(),
        success_rate: wins as f64 / seeds.len() as f64,
        mean_return: ret / seeds.len() as f64,
    })
}

/// Success rate and mean return of uniformly random joint actions.
pub fn random_policy_baseline(env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut env = SpuriousCapture::new(env_cfg.clone())?;
    let mut rng = component_rng(seed, STREAM_ACT);
    let mut seeds = component_rng(seed, STREAM_ENV);
    let (mut wins, mut ret) = (0usize, 0.0);
    for _ in 0..episodes {
        env.reset(seeds.next_u64())?;
        loop {
            let u: Vec<usize> = (0..env.n_agents()).map(|_| rng.random_range(0..env.n_actions())).collect();
            let res = env.step(&u)?;
            ret += res.reward;
            if res.terminated || res.truncated {
                break;
            }
        }
        wins += env.succeeded() as usize;
    }
    Ok(EvalReport {
        episodes,
        success_rate: wins as f64 / episodes as f64,
        mean_return: ret / episodes as f64,
    })
}

#[derive(Default)]
struct Window {
    n: usize,
    loss: f64,
    td: f64,
    e: f64,
    e_abs: f64,
}

impl Window {
    fn push(&mut self, u: &UpdateRecord) {
        self.n += 1;
        self.loss += u.loss;
        self.td += u.abs_td_error;
        self.e += u.e_mean;
        self.e_abs += u.e_abs_mean;
    }

    fn mean(&self, v: f64) -> Option<f64> {
        (self.n > 0).then(|| v / self.n as f64)
    }
}

struct EvalContext<'a> {
    env_cfg: &'a EnvConfig,
    cfg: &'a LearnerConfig,
    seeds: &'a [u64],
}

impl EvalContext<'_> {
    fn record(
        &self,
        step: u64,
        learner: &Learner,
        window: &mut Window,
        metrics: &mut Vec<MetricsRecord>,
        observer: &mut dyn RunObserver,
    ) -> Result<()> {
        let ev = evaluate_policy(self.env_cfg, &learner.nets, &learner.params, self.seeds)?;
        let has_surprise = learner.nets.surprise.is_some();
        let rec = MetricsRecord {
            step,
            success_rate: ev.success_rate,
            mean_return: ev.mean_return,
            abs_td_error: window.mean(window.td),
            energy_ratio_mean: window.mean(window.e).filter(|_| has_surprise),
            energy_ratio_abs_mean: window.mean(window.e_abs).filter(|_| has_surprise),
            epsilon: self.cfg.epsilon.value(step),
            loss: window.mean(window.loss),
        };
        *window = Window::default();
        observer.on_metrics(&rec)?;
        metrics.push(rec);
        Ok(())
    }
}

/// Runs the full training loop for one seed.
///
/// Evaluation happens at step 0 and whenever training crosses a multiple of
/// `eval_interval`; the record is stamped with that multiple so logs from
/// different seeds share a step grid. Divergence stops the run and is reported
/// in [`RunSummary::aborted`].
pub fn train_run(
    env_cfg: &EnvConfig,
    cfg: &LearnerConfig,
    settings: &TrainSettings,
    seed: u64,
    observer: &mut dyn RunObserver,
) -> Result<RunSummary> {
    env_cfg.validate()?;
    cfg.validate()?;
    settings.validate()?;
    let mut env = SpuriousCapture::new(env_cfg.clone())?;
    let dims = ModelDims::from_env(env_cfg);
    let mut learner = Learner::new(cfg.clone(), dims, seed)?;
    let mut buffer = EpisodeBuffer::new(cfg.buffer_capacity)?;
    let mut env_seeds = component_rng(seed, STREAM_ENV);
    let mut act_rng = component_rng(seed, STREAM_ACT);
    let mut replay_rng = component_rng(seed, STREAM_REPLAY);
    let eval_seeds: Vec<u64> = {
        let mut r = component_rng(seed, STREAM_EVAL);
        (0..settings.eval_episodes).map(|_| r.next_u64()).collect()
    };

    let mut metrics = Vec::new();
    let mut updates = Vec::new();
    let mut window = Window::default();
    let mut aborted = None;
    let mut t_env = 0u64;
    let mut episodes = 0u64;
    let mut credit = 0u64;
    learner.sync_targets(0)?;

    let ctx = EvalContext { env_cfg, cfg, seeds: &eval_seeds };
    ctx.record(0, &learner, &mut window, &mut metrics, observer)?;
    let mut next_eval = settings.eval_interval;
    let mut next_ckpt = settings.checkpoint_interval;

    'outer: while t_env < settings.total_steps {
        let t0 = t_env;
        let ep = rollout(
            &mut env,
            &learner.nets,
            &learner.params,
            env_seeds.next_u64(),
            |k| cfg.epsilon.value(t0 + k),
            &mut act_rng,
        )?;
        episodes += 1;
        for _ in 0..ep.len() {
            t_env += 1;
            learner.sync_targets(t_env)?;
        }
        credit += ep.len() as u64;
        buffer.insert(ep);
        while credit >= cfg.train_every {
            credit -= cfg.train_every;
            if buffer.len() <= cfg.batch_size {
                continue;
            }
            let sample = buffer.sample(cfg.batch_size, &mut replay_rng)?;
            let batch = EpisodeBatch::from_episodes(&sample, dims.n_actions)?;
            match learner.update(&batch) {
                Ok(st) => {
                    let u = UpdateRecord {
                        step: t_env,
                        loss: st.loss,
                        abs_td_error: st.abs_td_error,
                        e_mean: st.e_mean,
                        e_abs_mean: st.e_abs_mean,
                    };
                    window.push(&u);
                    updates.push(u);
                }
                Err(e @ (Error::Diverged(_) | Error::NonFinite(_))) => {
                    aborted = Some(format!("step {t_env}: {e}"));
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(step) = next_ckpt.filter(|&c| t_env >= c) {
            observer.on_checkpoint(t_env, &learner.params)?;
            let every = settings.checkpoint_interval.expect("set");
            next_ckpt = Some(step + every * ((t_env - step) / every + 1));
        }
        while t_env >= next_eval && next_eval <= settings.total_steps {
            ctx.record(next_eval, &learner, &mut window, &mut metrics, observer)?;
            next_eval += settings.eval_interval;
        }
    }

    Ok(RunSummary {
        metrics,
        updates,
        aborted,
        params: learner.params,
        episodes,
        env_steps: t_env,
    })
}
