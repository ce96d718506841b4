//! Shared per-agent utility network and ε-greedy action selection.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseSpec, Mlp, MlpTape, ParamSet};
use crate::{Error, Result};

/// One agent's network input: `[observation ‖ last action one-hot ‖ agent id one-hot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInput {
    pub observation: Vec<f64>,
    pub last_action_onehot: Vec<f64>,
    pub agent_id_onehot: Vec<f64>,
}

impl AgentInput {
    pub fn new(
        observation: &[f64],
        last_action: Option<usize>,
        agent: usize,
        n_actions: usize,
        n_agents: usize,
    ) -> Self {
        let mut last_action_onehot = vec![0.0; n_actions];
        if let Some(a) = last_action {
            last_action_onehot[a] = 1.0;
        }
        let mut agent_id_onehot = vec![0.0; n_agents];
        agent_id_onehot[agent] = 1.0;
        Self {
            observation: observation.to_vec(),
            last_action_onehot,
            agent_id_onehot,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentNet {
    pub mlp: Mlp,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
}

impl AgentNet {
    pub const HIDDEN: usize = 64;

    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        obs_dim: usize,
        n_actions: usize,
        n_agents: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input = obs_dim + n_actions + n_agents;
        let mlp = Mlp::new(
            params,
            "agent",
            &[
                DenseSpec::new(input, hidden, Activation::Relu),
                DenseSpec::new(hidden, hidden, Activation::Relu),
                DenseSpec::new(hidden, n_actions, Activation::Identity),
            ],
            rng,
        )?;
        Ok(Self {
            mlp,
            obs_dim,
            n_actions,
            n_agents,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Q-values for every agent in `inputs` (one row each).
    pub fn agent_forward(&self, params: &ParamSet, inputs: &[AgentInput]) -> Result<Array2<f64>> {
        let x = self.assemble(inputs)?;
        self.mlp.predict(params, x.view())
    }

    pub fn assemble(&self, inputs: &[AgentInput]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((inputs.len(), self.input_dim()));
        for (i, inp) in inputs.iter().enumerate() {
            let blocks = [
                ("observation", &inp.observation, self.obs_dim),
                ("last_action_onehot", &inp.last_action_onehot, self.n_actions),
                ("agent_id_onehot", &inp.agent_id_onehot, self.n_agents),
            ];
            let mut off = 0;
            for (name, v, want) in blocks {
                if v.len() != want {
                    return Err(Error::dim(format!("agent input row {i} block `{name}`"), want, v.len()));
                }
                x.slice_mut(s![i, off..off + want])
                    .assign(&ndarray::ArrayView1::from(v.as_slice()));
                off += want;
            }
        }
        Ok(x)
    }

    pub fn forward(&self, params: &ParamSet, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.mlp.forward(params, x)
    }

    pub fn predict(&self, params: &ParamSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.mlp.predict(params, x)
    }

    pub fn backward(&self, params: &mut ParamSet, tape: &MlpTape, grad: ArrayView2<f64>) -> Result<()> {
        self.mlp.backward(params, tape, grad).map(|_| ())
    }
}

/// Argmax over available actions; ties go to the lowest index.
pub fn greedy_action(q: &[f64], avail: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Independent per-agent ε-greedy choice. A coin is drawn for every agent on
/// every call so the random stream does not depend on ε.
pub fn select_actions<R: Rng + ?Sized>(
    q: ArrayView2<f64>,
    epsilon: f64,
    avail: &[Vec<bool>],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if avail.len() != q.nrows() {
        return Err(Error::dim("availability mask rows", q.nrows(), avail.len()));
    }
    let mut out = Vec::with_capacity(q.nrows());
    for (a, (row, mask)) in q.rows().into_iter().zip(avail).enumerate() {
        if mask.len() != row.len() {
            return Err(Error::dim(format!("availability mask of agent {a}"), row.len(), mask.len()));
        }
        let choices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if choices.is_empty() {
            return Err(Error::Usage(format!("agent {a} has no available action")));
        }
        let explore = rng.random::<f64>() < epsilon;
        let act = if explore {
            choices[rng.random_range(0..choices.len())]
        } else {
            let row = row.to_vec();
            greedy_action(&row, mask).expect("non-empty mask")
        };
        out.push(act);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    /// Linear anneal from `start` to `end`, constant afterwards.
    pub fn value(&self, t: u64) -> f64 {
        if self.anneal_steps == 0 || t >= self.anneal_steps {
            return self.end;
        }
        let frac = t as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> (ParamSet, AgentNet) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = AgentNet::new(&mut ps, 5, 4, 3, 8, &mut rng).unwrap();
        (ps, n)
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n_agents: usize) -> Vec<AgentInput> {
        (0..n_agents)
            .map(|a| {
                let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                AgentInput::new(&obs, Some(rng.random_range(0..4)), a, 4, n_agents)
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_bias() {
        let (mut ps, n) = net(0);
        for p in ps.iter_mut() {
            if p.name.ends_with("weight") {
                p.value.fill(0.0);
            }
        }
        let bias = ps.by_name("agent.2.bias").unwrap().value.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = n.agent_forward(&ps, &random_inputs(&mut rng, 3)).unwrap();
        for row in q.rows() {
            assert_eq!(row.to_vec(), bias.iter().copied().collect::<Vec<_>>());
        }
    }

    #[test]
    fn shared_parameters_permute_rows() {
        let (ps, n) = net(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = random_inputs(&mut rng, 3);
        let q = n.agent_forward(&ps, &inputs).unwrap();
        let swapped = vec![inputs[1].clone(), inputs[0].clone(), inputs[2].clone()];
        let qs = n.agent_forward(&ps, &swapped).unwrap();
        assert_eq!(q.row(0), qs.row(1));
        assert_eq!(q.row(1), qs.row(0));
    }

    #[test]
    fn batched_matches_agent_by_agent() {
        let (ps, n) = net(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = random_inputs(&mut rng, 3);
        let q = n.agent_forward(&ps, &inputs).unwrap();
        for (a, inp) in inputs.iter().enumerate() {
            let single = n.agent_forward(&ps, std::slice::from_ref(inp)).unwrap();
            for k in 0..4 {
                assert!((single[[0, k]] - q[[a, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_count_independent_of_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamSet::new();
        AgentNet::new(&mut a, 5, 4, 3, 8, &mut rng).unwrap();
        let mut b = ParamSet::new();
        AgentNet::new(&mut b, 5, 4, 3, 8, &mut rng).unwrap();
        assert_eq!(a.num_scalars(), b.num_scalars());
    }

    #[test]
    fn wrong_block_named() {
        let (ps, n) = net(0);
        let mut inp = AgentInput::new(&[0.0; 5], None, 0, 4, 3);
        inp.last_action_onehot.pop();
        let err = n.agent_forward(&ps, &[inp]).unwrap_err();
        assert!(err.to_string().contains("last_action_onehot"), "{err}");
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let avail = vec![vec![true; 3]];
        let q = ndarray::array![[1.0, 5.0, 2.0]];
        assert_eq!(select_actions(q.view(), 0.0, &avail, &mut rng).unwrap(), vec![1]);
        let tie = ndarray::array![[5.0, 5.0, 0.0]];
        assert_eq!(select_actions(tie.view(), 0.0, &avail, &mut rng).unwrap(), vec![0]);
        let masked = vec![vec![false, true, true]];
        assert_eq!(select_actions(tie.view(), 0.0, &masked, &mut rng).unwrap(), vec![1]);
    }

    #[test]
    fn empty_mask_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = ndarray::array![[1.0, 2.0]];
        assert!(select_actions(q.view(), 0.5, &[vec![false, false]], &mut rng).is_err());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = ndarray::array![[9.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let avail = vec![vec![true; 6]];
        let draws = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            counts[select_actions(q.view(), 1.0, &avail, &mut rng).unwrap()[0]] += 1;
        }
        let p = 1.0 / 6.0;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule_points() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(50_000), 0.05);
        assert!((s.value(25_000) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(1_000_000), 0.05);
    }
}
