//! Surprise estimation: deviation features σ, the surprise mixer
//! `V_surp^a(s, u, σ)`, the log-sum-exp energy operator and the energy ratio.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learner::EpisodeBatch;
use crate::nn::{Activation, DenseSpec, Mlp, MlpTape, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    /// Observations `z_t` at valid steps.
    Current,
    /// Observations `z_{t+1}` following valid steps.
    Next,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaPooling {
    /// One σ for the whole batch (batch × time pooled).
    #[default]
    Batch,
    /// One σ per episode in the batch.
    Episode,
}

/// Feature-wise population standard deviation of each agent's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationFeatures {
    /// `[groups × N × obs_dim]`; a single group under batch pooling.
    pub sigma: Array3<f64>,
}

impl DeviationFeatures {
    pub fn from_matrix(sigma: Array2<f64>) -> Self {
        Self {
            sigma: sigma.insert_axis(Axis(0)),
        }
    }

    /// The σ matrix that applies to episode `b`.
    pub fn for_episode(&self, b: usize) -> ArrayView2<'_, f64> {
        let g = if self.sigma.len_of(Axis(0)) == 1 { 0 } else { b };
        self.sigma.index_axis(Axis(0), g)
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.for_episode(0)
    }
}

/// Welford accumulator over feature vectors.
struct Moments {
    n: usize,
    mean: Array1<f64>,
    m2: Array1<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: Array1::zeros(dim),
            m2: Array1::zeros(dim),
        }
    }

    fn push(&mut self, x: ndarray::ArrayView1<f64>) {
        self.n += 1;
        let n = self.n as f64;
        for j in 0..x.len() {
            let d = x[j] - self.mean[j];
            self.mean[j] += d / n;
            self.m2[j] += d * (x[j] - self.mean[j]);
        }
    }

    fn std(&self) -> Array1<f64> {
        self.m2.mapv(|m| (m / self.n as f64).max(0.0).sqrt())
    }
}

/// Population std of each agent's observation features over every mask-valid
/// step of the batch. Padded steps are excluded.
pub fn compute_sigma(batch: &EpisodeBatch, which: Which, pooling: SigmaPooling) -> Result<DeviationFeatures> {
    let (b_n, t_n) = batch.mask.dim();
    let n_agents = batch.n_agents();
    let obs_dim = batch.obs_dim();
    let shift = match which {
        Which::Current => 0,
        Which::Next => 1,
    };
    let groups = match pooling {
        SigmaPooling::Batch => 1,
        SigmaPooling::Episode => b_n,
    };
    let mut acc: Vec<Vec<Moments>> = (0..groups)
        .map(|_| (0..n_agents).map(|_| Moments::new(obs_dim)).collect())
        .collect();
    for b in 0..b_n {
        let g = if groups == 1 { 0 } else { b };
        for t in 0..t_n {
            if batch.mask[[b, t]] == 0.0 {
                continue;
            }
            for (a, m) in acc[g].iter_mut().enumerate() {
                m.push(batch.observations.slice(s![b, t + shift, a, ..]));
            }
        }
    }
    if acc.iter().any(|g| g[0].n == 0) {
        return Err(Error::Usage("compute_sigma on a batch with no valid steps".into()));
    }
    let mut sigma = Array3::zeros((groups, n_agents, obs_dim));
    for (g, agents) in acc.iter().enumerate() {
        for (a, m) in agents.iter().enumerate() {
            sigma.slice_mut(s![g, a, ..]).assign(&m.std());
        }
    }
    Ok(DeviationFeatures { sigma })
}

/// `m + ln Σ exp(v - m)` with `m = max v`.
pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Row-wise log-sum-exp over the agent axis.
pub fn energy_lse(v: ArrayView2<f64>) -> Result<Array1<f64>> {
    if v.ncols() == 0 {
        return Err(Error::dim("energy operator", "at least one agent", 0));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("energy operator input".into()));
    }
    Ok(v.rows()
        .into_iter()
        .map(|row| lse(row.as_slice().unwrap_or(&row.to_vec())))
        .collect())
}

/// Row-wise softmax, the gradient of [`energy_lse`].
pub fn energy_lse_grad(v: ArrayView2<f64>) -> Array2<f64> {
    let mut out = v.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurpriseEstimate {
    /// Online surprise mixer on `(s, u, σ)`: `[rows × N]`.
    pub v_surp: Array2<f64>,
    /// Target surprise mixer on `(s', u', σ')`: `[rows × N]`.
    pub v_surp_target: Array2<f64>,
}

/// Which partition sum plays the role of the denominator in `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioOrder {
    /// `E = lse(V'(s', u', σ')) − lse(V(s, u, σ))`.
    #[default]
    TargetOverOnline,
    /// `E = lse(V(s, u, σ)) − lse(V'(s', u', σ'))`.
    OnlineOverTarget,
}

impl RatioOrder {
    /// Sign of `∂E/∂lse(V_online)`.
    pub fn online_sign(self) -> f64 {
        match self {
            RatioOrder::TargetOverOnline => -1.0,
            RatioOrder::OnlineOverTarget => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRatio {
    pub e: Array1<f64>,
    pub beta: f64,
    /// `lse` of the online estimate; kept for the backward pass.
    pub lse_online: Array1<f64>,
    pub lse_target: Array1<f64>,
}

pub fn energy_ratio(v: &SurpriseEstimate, beta: f64, order: RatioOrder) -> Result<EnergyRatio> {
    if v.v_surp.dim() != v.v_surp_target.dim() {
        return Err(Error::dim(
            "energy ratio",
            format!("{:?}", v.v_surp.dim()),
            format!("{:?}", v.v_surp_target.dim()),
        ));
    }
    let lse_online = energy_lse(v.v_surp.view())?;
    let lse_target = energy_lse(v.v_surp_target.view())?;
    let e = match order {
        RatioOrder::TargetOverOnline => &lse_target - &lse_online,
        RatioOrder::OnlineOverTarget => &lse_online - &lse_target,
    };
    Ok(EnergyRatio {
        e,
        beta,
        lse_online,
        lse_target,
    })
}

/// The surprise mixer: `[s ‖ one-hot u ‖ flat σ] → 64 → 64 → N`.
#[derive(Debug, Clone)]
pub struct SurpriseNet {
    pub mlp: Mlp,
    pub state_dim: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
}

impl SurpriseNet {
    pub const HIDDEN: usize = 64;

    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        state_dim: usize,
        n_agents: usize,
        n_actions: usize,
        obs_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input = state_dim + n_agents * n_actions + n_agents * obs_dim;
        let mlp = Mlp::new(
            params,
            "surprise",
            &[
                DenseSpec::new(input, hidden, Activation::Relu),
                DenseSpec::new(hidden, hidden, Activation::Relu),
                DenseSpec::new(hidden, n_agents, Activation::Identity),
            ],
            rng,
        )?;
        Ok(Self {
            mlp,
            state_dim,
            n_agents,
            n_actions,
            obs_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.n_agents * (self.n_actions + self.obs_dim)
    }

    /// Builds the input matrix. `group_of_row` maps a row to the episode whose σ applies.
    pub fn assemble(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<usize>,
        sigma: &DeviationFeatures,
        group_of_row: impl Fn(usize) -> usize,
    ) -> Result<Array2<f64>> {
        let rows = states.nrows();
        if states.ncols() != self.state_dim {
            return Err(Error::dim("surprise mixer state", self.state_dim, states.ncols()));
        }
        if actions.dim() != (rows, self.n_agents) {
            return Err(Error::dim(
                "surprise mixer joint action",
                format!("({rows}, {})", self.n_agents),
                format!("{:?}", actions.dim()),
            ));
        }
        let sig_shape = (self.n_agents, self.obs_dim);
        if sigma.for_episode(0).dim() != sig_shape {
            return Err(Error::dim(
                "surprise mixer deviation features",
                format!("{sig_shape:?}"),
                format!("{:?}", sigma.for_episode(0).dim()),
            ));
        }
        let s_dim = self.state_dim;
        let u_off = s_dim;
        let sig_off = s_dim + self.n_agents * self.n_actions;
        let mut x = Array2::zeros((rows, self.input_dim()));
        for r in 0..rows {
            let mut row = x.row_mut(r);
            row.slice_mut(s![..s_dim]).assign(&states.row(r));
            for a in 0..self.n_agents {
                let u = actions[[r, a]];
                if u >= self.n_actions {
                    return Err(Error::InvalidAction {
                        agent: a,
                        action: u,
                        n_actions: self.n_actions,
                    });
                }
                row[u_off + a * self.n_actions + u] = 1.0;
            }
            let sig = sigma.for_episode(group_of_row(r));
            for (k, v) in sig.iter().enumerate() {
                row[sig_off + k] = *v;
            }
        }
        Ok(x)
    }

    /// `V_surp^a(s, u, σ)` for every row, with σ shared by the whole batch.
    pub fn surprise_forward(
        &self,
        params: &ParamSet,
        states: ArrayView2<f64>,
        actions: ArrayView2<usize>,
        sigma: &DeviationFeatures,
    ) -> Result<Array2<f64>> {
        let x = self.assemble(states, actions, sigma, |_| 0)?;
        self.mlp.predict(params, x.view())
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
