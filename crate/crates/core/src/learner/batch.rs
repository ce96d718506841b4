use ndarray::{s, Array2, Array3, Array4};

use crate::{Error, Result};

/// One recorded episode of length `L`: `L + 1` states/observations, `L` joint
/// actions, rewards and termination flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Padded, masked episodes laid out for learning.
///
/// `T` is the longest episode in the batch; shorter episodes are zero-padded
/// and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    /// `[B × T+1 × state_dim]`
    pub states: Array3<f64>,
    /// `[B × T+1 × N × obs_dim]`
    pub observations: Array4<f64>,
    /// `[B × T × N]`
    pub actions: Array3<usize>,
    /// `[B × T]`
    pub rewards: Array2<f64>,
    /// `[B × T]`, 1 for valid steps.
    pub mask: Array2<f64>,
    /// `[B × T]`, 1 where the step ended the episode by termination (not truncation).
    pub terminated: Array2<f64>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&Episode], n_actions: usize) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::Usage("cannot build a batch from zero episodes".into()))?;
        let n_agents = first.observations[0].len();
        let obs_dim = first.observations[0][0].len();
        let state_dim = first.states[0].len();
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        if t_max == 0 {
            return Err(Error::Usage("batch contains only empty episodes".into()));
        }
        let b_n = episodes.len();
        let mut states = Array3::zeros((b_n, t_max + 1, state_dim));
        let mut observations = Array4::zeros((b_n, t_max + 1, n_agents, obs_dim));
        let mut actions = Array3::zeros((b_n, t_max, n_agents));
        let mut rewards = Array2::zeros((b_n, t_max));
        let mut mask = Array2::zeros((b_n, t_max));
        let mut terminated = Array2::zeros((b_n, t_max));

        for (b, ep) in episodes.iter().enumerate() {
            let len = ep.len();
            if ep.states.len() != len + 1 || ep.observations.len() != len + 1 {
                return Err(Error::dim(format!("episode {b} states/observations"), len + 1, ep.states.len()));
            }
            if ep.rewards.len() != len || ep.terminated.len() != len {
                return Err(Error::dim(format!("episode {b} rewards"), len, ep.rewards.len()));
            }
            for t in 0..=len {
                if ep.states[t].len() != state_dim {
                    return Err(Error::dim(format!("episode {b} state {t}"), state_dim, ep.states[t].len()));
                }
                states
                    .slice_mut(s![b, t, ..])
                    .assign(&ndarray::ArrayView1::from(ep.states[t].as_slice()));
                if ep.observations[t].len() != n_agents {
                    return Err(Error::dim(format!("episode {b} agents at {t}"), n_agents, ep.observations[t].len()));
                }
                for (a, o) in ep.observations[t].iter().enumerate() {
                    if o.len() != obs_dim {
                        return Err(Error::dim(format!("episode {b} observation {t}/{a}"), obs_dim, o.len()));
                    }
                    observations
                        .slice_mut(s![b, t, a, ..])
                        .assign(&ndarray::ArrayView1::from(o.as_slice()));
                }
            }
            for t in 0..len {
                if ep.actions[t].len() != n_agents {
                    return Err(Error::dim(format!("episode {b} joint action {t}"), n_agents, ep.actions[t].len()));
                }
                for (a, &u) in ep.actions[t].iter().enumerate() {
                    if u >= n_actions {
                        return Err(Error::InvalidAction {
                            agent: a,
                            action: u,
                            n_actions,
                        });
                    }
                    actions[[b, t, a]] = u;
                }
                if !ep.rewards[t].is_finite() {
                    return Err(Error::NonFinite(format!("reward of episode {b} at {t}")));
                }
                rewards[[b, t]] = ep.rewards[t];
                mask[[b, t]] = 1.0;
                terminated[[b, t]] = if ep.terminated[t] { 1.0 } else { 0.0 };
            }
        }
        Ok(Self {
            states,
            observations,
            actions,
            rewards,
            mask,
            terminated,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.mask.nrows()
    }

    pub fn max_t(&self) -> usize {
        self.mask.ncols()
    }

    pub fn n_agents(&self) -> usize {
        self.observations.shape()[2]
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.shape()[3]
    }

    pub fn state_dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn valid_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }

    /// States at `t + shift` for `t < T`, flattened to `[B·T × state_dim]`.
    pub fn states_flat(&self, shift: usize) -> Array2<f64> {
        let (b_n, t_n) = self.mask.dim();
        let sd = self.state_dim();
        self.states
            .slice(s![.., shift..shift + t_n, ..])
            .to_owned()
            .into_shape_with_order((b_n * t_n, sd))
            .expect("contiguous")
    }

    /// Joint actions flattened to `[B·T × N]`.
    pub fn actions_flat(&self) -> Array2<usize> {
        let (b_n, t_n) = self.mask.dim();
        self.actions
            .clone()
            .into_shape_with_order((b_n * t_n, self.n_agents()))
            .expect("contiguous")
    }

    /// Agent-network inputs for every `(b, t ≤ T, a)`, row `(b·(T+1) + t)·N + a`:
    /// `[observation ‖ last action one-hot ‖ agent id one-hot]`.
    pub fn agent_inputs(&self, n_actions: usize) -> Array2<f64> {
        let (b_n, t_n) = self.mask.dim();
        let n = self.n_agents();
        let od = self.obs_dim();
        let width = od + n_actions + n;
        let mut x = Array2::zeros((b_n * (t_n + 1) * n, width));
        for b in 0..b_n {
            for t in 0..=t_n {
                for a in 0..n {
                    let r = (b * (t_n + 1) + t) * n + a;
                    let mut row = x.row_mut(r);
                    row.slice_mut(s![..od]).assign(&self.observations.slice(s![b, t, a, ..]));
                    if t > 0 {
                        row[od + self.actions[[b, t - 1, a]]] = 1.0;
                    }
                    row[od + n_actions + a] = 1.0;
                }
            }
        }
        x
    }

    pub(crate) fn summary(&self) -> String {
        let n = self.valid_steps().max(1) as f64;
        let r_sum: f64 = (&self.rewards * &self.mask).sum();
        let obs_abs_max = self.observations.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        format!(
            "batch {}x{} valid_steps={} mean_reward={:.4} max|obs|={:.3e} terminated={}",
            self.batch_size(),
            self.max_t(),
            self.valid_steps(),
            r_sum / n,
            obs_abs_max,
            self.terminated.sum()
        )
    }
}
