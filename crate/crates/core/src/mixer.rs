//! Value-factorization heads.
//!
//! QMIX mixes the chosen per-agent utilities through a two-layer network whose
//! weights are emitted by state-conditioned hypernetworks:
//!
//! ```text
//! h     = elu(q · |W1(s)| + b1(s))        q: [N], W1: [N × E]
//! q_tot = h · |W2(s)| + b2(s)             W2: [E], b2: scalar
//! ```
//!
//! The absolute value on the weight heads makes `q_tot` non-decreasing in every
//! `q_a`, which is what lets decentralized greedy action selection realize the
//! joint greedy action.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseSpec, Mlp, MlpTape, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Qmix,
    Vdn,
    Iql,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixerConfig {
    pub kind: MixerKind,
    pub embed_dim: usize,
    pub hypernet_hidden: usize,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            kind: MixerKind::Qmix,
            embed_dim: 32,
            hypernet_hidden: 64,
        }
    }
}

impl MixerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hypernet_hidden == 0 {
            return Err(Error::Config(
                "embed_dim and hypernet_hidden must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MixerOutput {
    /// Joint value per sample. `None` for IQL, which has no joint head.
    pub q_tot: Option<Array1<f64>>,
    pub chosen_q: Array2<f64>,
}

/// Per-sample mixing weights emitted by the hypernetworks.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperOutputs {
    /// `[batch × N·E]`, row-major over (agent, embed).
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct QmixTape {
    w1: MlpTape,
    b1: MlpTape,
    w2: MlpTape,
    b2: MlpTape,
    hyper: HyperOutputs,
    hidden_pre: Array2<f64>,
    q: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct QmixMixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    pub hyper_w1: Mlp,
    pub hyper_b1: Mlp,
    pub hyper_w2: Mlp,
    pub hyper_b2: Mlp,
}

impl QmixMixer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        n_agents: usize,
        state_dim: usize,
        cfg: &MixerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (e, h) = (cfg.embed_dim, cfg.hypernet_hidden);
        let hyper_w1 = Mlp::new(
            params,
            "mixer.hyper_w1",
            &[
                DenseSpec::new(state_dim, h, Activation::Relu),
                DenseSpec::new(h, n_agents * e, Activation::AbsOnWeights),
            ],
            rng,
        )?;
        let hyper_b1 = Mlp::new(
            params,
            "mixer.hyper_b1",
            &[DenseSpec::new(state_dim, e, Activation::Identity)],
            rng,
        )?;
        let hyper_w2 = Mlp::new(
            params,
            "mixer.hyper_w2",
            &[
                DenseSpec::new(state_dim, h, Activation::Relu),
                DenseSpec::new(h, e, Activation::AbsOnWeights),
            ],
            rng,
        )?;
        let hyper_b2 = Mlp::new(
            params,
            "mixer.hyper_b2",
            &[
                DenseSpec::new(state_dim, e, Activation::Relu),
                DenseSpec::new(e, 1, Activation::Identity),
            ],
            rng,
        )?;
        Ok(Self {
            n_agents,
            state_dim,
            embed_dim: e,
            hyper_w1,
            hyper_b1,
            hyper_w2,
            hyper_b2,
        })
    }

    fn check(&self, q: &ArrayView2<f64>, states: &ArrayView2<f64>) -> Result<()> {
        if q.ncols() != self.n_agents {
            return Err(Error::dim("mixer agent utilities", self.n_agents, q.ncols()));
        }
        if states.ncols() != self.state_dim {
            return Err(Error::dim("mixer state", self.state_dim, states.ncols()));
        }
        if q.nrows() != states.nrows() {
            return Err(Error::dim("mixer batch", q.nrows(), states.nrows()));
        }
        Ok(())
    }

    pub fn hypernet_forward(&self, params: &ParamSet, states: ArrayView2<f64>) -> Result<HyperOutputs> {
        if states.ncols() != self.state_dim {
            return Err(Error::dim("hypernetwork state", self.state_dim, states.ncols()));
        }
        Ok(HyperOutputs {
            w1: self.hyper_w1.predict(params, states)?,
            b1: self.hyper_b1.predict(params, states)?,
            w2: self.hyper_w2.predict(params, states)?,
            b2: self.hyper_b2.predict(params, states)?.remove_axis(Axis(1)),
        })
    }

    /// Mixes utilities with explicit hypernetwork outputs. Returns `(q_tot, hidden_pre)`.
    pub fn mix_with(&self, hyper: &HyperOutputs, q: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let (n, e) = (self.n_agents, self.embed_dim);
        let rows = q.nrows();
        let mut hidden_pre = hyper.b1.clone();
        let mut q_tot = Array1::zeros(rows);
        for r in 0..rows {
            let w1 = hyper.w1.row(r);
            let mut hp = hidden_pre.row_mut(r);
            for a in 0..n {
                let qa = q[[r, a]];
                for k in 0..e {
                    hp[k] += qa * w1[a * e + k];
                }
            }
            let w2 = hyper.w2.row(r);
            let mut acc = 0.0;
            for k in 0..e {
                acc += Activation::Elu.apply(hp[k]) * w2[k];
            }
            q_tot[r] = acc + hyper.b2[r];
        }
        (q_tot, hidden_pre)
    }

    /// Mixes one utility vector with row `r` of precomputed hypernetwork outputs.
    pub fn mix_row(&self, hyper: &HyperOutputs, r: usize, q: &[f64]) -> f64 {
        let (n, e) = (self.n_agents, self.embed_dim);
        let (w1, b1, w2) = (hyper.w1.row(r), hyper.b1.row(r), hyper.w2.row(r));
        let mut acc = 0.0;
        for k in 0..e {
            let mut hp = b1[k];
            for a in 0..n {
                hp += q[a] * w1[a * e + k];
            }
            acc += Activation::Elu.apply(hp) * w2[k];
        }
        acc + hyper.b2[r]
    }

    pub fn predict(&self, params: &ParamSet, q: ArrayView2<f64>, states: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check(&q, &states)?;
        let hyper = self.hypernet_forward(params, states)?;
        Ok(self.mix_with(&hyper, q).0)
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        q: ArrayView2<f64>,
        states: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, QmixTape)> {
        self.check(&q, &states)?;
        let (w1, w1_tape) = self.hyper_w1.forward(params, states)?;
        let (b1, b1_tape) = self.hyper_b1.forward(params, states)?;
        let (w2, w2_tape) = self.hyper_w2.forward(params, states)?;
        let (b2, b2_tape) = self.hyper_b2.forward(params, states)?;
        let hyper = HyperOutputs {
            w1,
            b1,
            w2,
            b2: b2.remove_axis(Axis(1)),
        };
        let (q_tot, hidden_pre) = self.mix_with(&hyper, q);
        Ok((
            q_tot,
            QmixTape {
                w1: w1_tape,
                b1: b1_tape,
                w2: w2_tape,
                b2: b2_tape,
                hyper,
                hidden_pre,
                q: q.to_owned(),
            },
        ))
    }

    /// Accumulates hypernetwork gradients; returns `∂L/∂q` given `∂L/∂q_tot`.
    pub fn backward(&self, params: &mut ParamSet, tape: &QmixTape, grad: ArrayView1<f64>) -> Result<Array2<f64>> {
        let rows = tape.q.nrows();
        if grad.len() != rows {
            return Err(Error::dim("mixer output gradient", rows, grad.len()));
        }
        let (n, e) = (self.n_agents, self.embed_dim);
        let mut d_w1 = Array2::zeros((rows, n * e));
        let mut d_b1 = Array2::zeros((rows, e));
        let mut d_w2 = Array2::zeros((rows, e));
        let mut d_b2 = Array2::zeros((rows, 1));
        let mut d_q = Array2::zeros((rows, n));
        for r in 0..rows {
            let g = grad[r];
            if g == 0.0 {
                continue;
            }
            d_b2[[r, 0]] = g;
            let hp = tape.hidden_pre.row(r);
            let w1 = tape.hyper.w1.row(r);
            let w2 = tape.hyper.w2.row(r);
            for k in 0..e {
                let h = Activation::Elu.apply(hp[k]);
                d_w2[[r, k]] = g * h;
                let dpre = g * w2[k] * Activation::Elu.derivative(hp[k]);
                d_b1[[r, k]] = dpre;
                for a in 0..n {
                    d_w1[[r, a * e + k]] = dpre * tape.q[[r, a]];
                    d_q[[r, a]] += dpre * w1[a * e + k];
                }
            }
        }
        self.hyper_w1.backward(params, &tape.w1, d_w1.view())?;
        self.hyper_b1.backward(params, &tape.b1, d_b1.view())?;
        self.hyper_w2.backward(params, &tape.w2, d_w2.view())?;
        self.hyper_b2.backward(params, &tape.b2, d_b2.view())?;
        Ok(d_q)
    }

    /// Analytic `∂q_tot/∂q_a` for each sample.
    pub fn grad_wrt_q(&self, hyper: &HyperOutputs, q: ArrayView2<f64>) -> Array2<f64> {
        let (n, e) = (self.n_agents, self.embed_dim);
        let (_, hidden_pre) = self.mix_with(hyper, q);
        Array2::from_shape_fn((q.nrows(), n), |(r, a)| {
            (0..e)
                .map(|k| {
                    hyper.w2[[r, k]]
                        * Activation::Elu.derivative(hidden_pre[[r, k]])
                        * hyper.w1[[r, a * e + k]]
                })
                .sum()
        })
    }
}

#[derive(Debug, Clone)]
pub enum MixerTape {
    Qmix(Box<QmixTape>),
    Vdn { rows: usize, n_agents: usize },
}

/// A value-factorization head selected by [`MixerKind`].
#[derive(Debug, Clone)]
pub enum Mixer {
    Qmix(QmixMixer),
    Vdn { n_agents: usize },
    Iql { n_agents: usize },
}

impl Mixer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        n_agents: usize,
        state_dim: usize,
        cfg: &MixerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            MixerKind::Qmix => Mixer::Qmix(QmixMixer::new(params, n_agents, state_dim, cfg, rng)?),
            MixerKind::Vdn => Mixer::Vdn { n_agents },
            MixerKind::Iql => Mixer::Iql { n_agents },
        })
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Qmix(_) => MixerKind::Qmix,
            Mixer::Vdn { .. } => MixerKind::Vdn,
            Mixer::Iql { .. } => MixerKind::Iql,
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Mixer::Qmix(m) => m.n_agents,
            Mixer::Vdn { n_agents } | Mixer::Iql { n_agents } => *n_agents,
        }
    }

    fn check_width(&self, q: &ArrayView2<f64>) -> Result<()> {
        if q.ncols() != self.n_agents() {
            return Err(Error::dim("mixer agent utilities", self.n_agents(), q.ncols()));
        }
        Ok(())
    }

    pub fn mix(&self, params: &ParamSet, chosen_q: ArrayView2<f64>, states: ArrayView2<f64>) -> Result<MixerOutput> {
        self.check_width(&chosen_q)?;
        let q_tot = match self {
            Mixer::Qmix(m) => Some(m.predict(params, chosen_q, states)?),
            Mixer::Vdn { .. } => Some(chosen_q.sum_axis(Axis(1))),
            Mixer::Iql { .. } => None,
        };
        Ok(MixerOutput {
            q_tot,
            chosen_q: chosen_q.to_owned(),
        })
    }

    /// Joint value with a backward tape. IQL has no joint head.
    pub fn forward(
        &self,
        params: &ParamSet,
        chosen_q: ArrayView2<f64>,
        states: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, MixerTape)> {
        self.check_width(&chosen_q)?;
        match self {
            Mixer::Qmix(m) => {
                let (q, tape) = m.forward(params, chosen_q, states)?;
                Ok((q, MixerTape::Qmix(Box::new(tape))))
            }
            Mixer::Vdn { n_agents } => Ok((
                chosen_q.sum_axis(Axis(1)),
                MixerTape::Vdn {
                    rows: chosen_q.nrows(),
                    n_agents: *n_agents,
                },
            )),
            Mixer::Iql { .. } => Err(Error::Config("IQL has no joint mixing head".into())),
        }
    }

    pub fn predict(&self, params: &ParamSet, chosen_q: ArrayView2<f64>, states: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            Mixer::Qmix(m) => m.predict(params, chosen_q, states),
            Mixer::Vdn { .. } => {
                self.check_width(&chosen_q)?;
                Ok(chosen_q.sum_axis(Axis(1)))
            }
            Mixer::Iql { .. } => Err(Error::Config("IQL has no joint mixing head".into())),
        }
    }

    pub fn backward(&self, params: &mut ParamSet, tape: &MixerTape, grad: ArrayView1<f64>) -> Result<Array2<f64>> {
        match (self, tape) {
            (Mixer::Qmix(m), MixerTape::Qmix(t)) => m.backward(params, t, grad),
            (Mixer::Vdn { .. }, MixerTape::Vdn { rows, n_agents }) => {
                if grad.len() != *rows {
                    return Err(Error::dim("mixer output gradient", rows, grad.len()));
                }
                Ok(Array2::from_shape_fn((*rows, *n_agents), |(r, _)| grad[r]))
            }
            _ => Err(Error::Usage("mixer tape does not match mixer kind".into())),
        }
    }
}
