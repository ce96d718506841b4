use ndarray::{Array1, Array2, Axis};

use super::batch::EpisodeBatch;
use super::config::{LearnerConfig, Objective, TargetReduction};
use super::model::Networks;
use super::targets::TargetBank;
use crate::agent::greedy_action;
use crate::mixer::{Mixer, MixerKind};
use crate::nn::ParamSet;
use crate::surprise::{compute_sigma, energy_lse_grad, energy_ratio, EnergyRatio, SurpriseEstimate, Which};
use crate::{Error, Result};

/// Upper bound on joint actions enumerated by [`TargetReduction::MaxOfMin`].
pub const MAX_JOINT_ENUMERATION: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub abs_td_error: f64,
    pub e_mean: f64,
    pub e_abs_mean: f64,
    pub n_valid: usize,
}

/// Loss value plus the intermediate quantities it was built from. Rows are
/// flattened `(b, t)` pairs; columns are 1 for joint heads and N for IQL.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub stats: LossStats,
    pub q_taken: Array2<f64>,
    pub y: Array2<f64>,
    /// Next-state value from each target before reduction.
    pub target_values: Vec<Array2<f64>>,
    pub reduced_target: Array2<f64>,
    pub energy: Option<EnergyRatio>,
}

/// `y = r + γ(1 − terminated)·next + β·e`, element-wise over rows and columns.
pub fn td_target(
    rewards: &Array1<f64>,
    terminated: &Array1<f64>,
    next: &Array2<f64>,
    e: Option<&Array1<f64>>,
    gamma: f64,
    beta: f64,
) -> Array2<f64> {
    let mut y = next.clone();
    for (r, mut row) in y.rows_mut().into_iter().enumerate() {
        let bonus = e.map_or(0.0, |e| beta * e[r]);
        let cont = gamma * (1.0 - terminated[r]);
        row.mapv_inplace(|v| rewards[r] + cont * v + bonus);
    }
    y
}

/// Element-wise minimum across target estimates.
pub fn min_over_targets(values: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = values
        .first()
        .ok_or_else(|| Error::Config("min over zero targets".into()))?;
    let mut out = first.clone();
    for v in &values[1..] {
        if v.dim() != out.dim() {
            return Err(Error::dim("target estimates", format!("{:?}", out.dim()), format!("{:?}", v.dim())));
        }
        out.zip_mut_with(v, |a, &b| *a = a.min(b));
    }
    Ok(out)
}

/// Index of agent `a` at `(b, t)` in the agent-input layout of a batch with horizon `t_n`.
fn agent_row(b: usize, t: usize, a: usize, t_n: usize, n: usize) -> usize {
    (b * (t_n + 1) + t) * n + a
}

/// Per-agent greedy action and value at `t + 1` for every flattened `(b, t)`.
fn next_greedy(q_all: &Array2<f64>, b_n: usize, t_n: usize, n: usize) -> (Array2<usize>, Array2<f64>) {
    let avail = vec![true; q_all.ncols()];
    let mut acts = Array2::zeros((b_n * t_n, n));
    let mut vals = Array2::zeros((b_n * t_n, n));
    for b in 0..b_n {
        for t in 0..t_n {
            for a in 0..n {
                let row = q_all.row(agent_row(b, t + 1, a, t_n, n));
                let u = greedy_action(row.as_slice().expect("standard layout"), &avail).expect("non-empty");
                acts[[b * t_n + t, a]] = u;
                vals[[b * t_n + t, a]] = row[u];
            }
        }
    }
    (acts, vals)
}

/// `max_u' min_i Q_i(s', u')` by enumerating joint actions.
fn max_of_min(
    nets: &Networks,
    targets: &TargetBank,
    q_next: &[Array2<f64>],
    next_states: &Array2<f64>,
    b_n: usize,
    t_n: usize,
) -> Result<Array2<f64>> {
    let n = nets.dims.n_agents;
    let a_n = nets.dims.n_actions;
    let rows = b_n * t_n;
    if let Mixer::Iql { .. } = nets.mixer {
        let mut out = Array2::zeros((rows, n));
        for b in 0..b_n {
            for t in 0..t_n {
                for a in 0..n {
                    let ar = agent_row(b, t + 1, a, t_n, n);
                    let best = (0..a_n)
                        .map(|u| q_next.iter().map(|q| q[[ar, u]]).fold(f64::INFINITY, f64::min))
                        .fold(f64::NEG_INFINITY, f64::max);
                    out[[b * t_n + t, a]] = best;
                }
            }
        }
        return Ok(out);
    }
    let joint = a_n
        .checked_pow(n as u32)
        .filter(|&j| j <= MAX_JOINT_ENUMERATION)
        .ok_or_else(|| Error::Config(format!("{a_n}^{n} joint actions exceed the enumeration cap")))?;
    let hypers = match &nets.mixer {
        Mixer::Qmix(m) => Some(
            targets
                .params
                .iter()
                .map(|p| m.hypernet_forward(p, next_states.view()))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let mut out = Array2::zeros((rows, 1));
    let mut q = vec![0.0; n];
    for b in 0..b_n {
        for t in 0..t_n {
            let r = b * t_n + t;
            let mut best = f64::NEG_INFINITY;
            for j in 0..joint {
                let mut worst = f64::INFINITY;
                for (i, qi) in q_next.iter().enumerate() {
                    let mut code = j;
                    for (a, qa) in q.iter_mut().enumerate() {
                        *qa = qi[[agent_row(b, t + 1, a, t_n, n), code % a_n]];
                        code /= a_n;
                    }
                    let v = match (&nets.mixer, &hypers) {
                        (Mixer::Qmix(m), Some(h)) => m.mix_row(&h[i], r, &q),
                        _ => q.iter().sum(),
                    };
                    worst = worst.min(v);
                }
                best = best.max(worst);
            }
            out[[r, 0]] = best;
        }
    }
    Ok(out)
}

/// Next-state value estimates of every target, `[rows × cols]` each.
pub fn target_estimates(
    batch: &EpisodeBatch,
    nets: &Networks,
    targets: &TargetBank,
) -> Result<Vec<Array2<f64>>> {
    let (b_n, t_n) = batch.mask.dim();
    let n = nets.dims.n_agents;
    let x = batch.agent_inputs(nets.dims.n_actions);
    let next_states = batch.states_flat(1);
    targets
        .params
        .iter()
        .map(|p| {
            let q = nets.agent.predict(p, x.view())?;
            let (_, maxq) = next_greedy(&q, b_n, t_n, n);
            joint_value(&nets.mixer, p, maxq, &next_states)
        })
        .collect()
}

fn joint_value(mixer: &Mixer, params: &ParamSet, q: Array2<f64>, states: &Array2<f64>) -> Result<Array2<f64>> {
    match mixer {
        Mixer::Iql { .. } => Ok(q),
        _ => Ok(mixer.predict(params, q.view(), states.view())?.insert_axis(Axis(1))),
    }
}

/// The TD objective with the energy bonus, optionally accumulating gradients
/// into `params`.
///
/// Targets are evaluated without gradient. With a surprise mixer present, the
/// online surprise values enter the loss through `β·E` and receive gradient
/// unless `cfg.freeze_surprise` is set.
pub fn emix_loss(
    batch: &EpisodeBatch,
    nets: &Networks,
    params: &mut ParamSet,
    targets: &TargetBank,
    cfg: &LearnerConfig,
    with_grad: bool,
) -> Result<LossOutput> {
    let obj: Objective = cfg.objective()?;
    if targets.m() != obj.m {
        return Err(Error::Config(format!(
            "target bank holds {} targets, objective needs {}",
            targets.m(),
            obj.m
        )));
    }
    let (b_n, t_n) = batch.mask.dim();
    let rows = b_n * t_n;
    let n = nets.dims.n_agents;
    let a_n = nets.dims.n_actions;
    if batch.n_agents() != n || batch.obs_dim() != nets.dims.obs_dim || batch.state_dim() != nets.dims.state_dim {
        return Err(Error::dim(
            "batch (agents, obs, state)",
            format!("({n}, {}, {})", nets.dims.obs_dim, nets.dims.state_dim),
            format!("({}, {}, {})", batch.n_agents(), batch.obs_dim(), batch.state_dim()),
        ));
    }

    let x = batch.agent_inputs(a_n);
    let (q_all, agent_tape) = if with_grad {
        let (q, tape) = nets.agent.forward(params, x.view())?;
        (q, Some(tape))
    } else {
        (nets.agent.predict(params, x.view())?, None)
    };
    let actions = batch.actions_flat();
    let mut chosen = Array2::zeros((rows, n));
    for b in 0..b_n {
        for t in 0..t_n {
            for a in 0..n {
                let r = b * t_n + t;
                chosen[[r, a]] = q_all[[agent_row(b, t, a, t_n, n), actions[[r, a]]]];
            }
        }
    }
    let states = batch.states_flat(0);
    let next_states = batch.states_flat(1);

    let is_iql = obj.mixer == MixerKind::Iql;
    let (q_taken, mixer_tape) = if is_iql {
        (chosen.clone(), None)
    } else if with_grad {
        let (q, tape) = nets.mixer.forward(params, chosen.view(), states.view())?;
        (q.insert_axis(Axis(1)), Some(tape))
    } else {
        (nets.mixer.predict(params, chosen.view(), states.view())?.insert_axis(Axis(1)), None)
    };

    let q_next: Vec<Array2<f64>> = targets
        .params
        .iter()
        .map(|p| nets.agent.predict(p, x.view()))
        .collect::<Result<_>>()?;
    let target_values: Vec<Array2<f64>> = q_next
        .iter()
        .zip(&targets.params)
        .map(|(q, p)| joint_value(&nets.mixer, p, next_greedy(q, b_n, t_n, n).1, &next_states))
        .collect::<Result<_>>()?;
    let reduced_target = match cfg.target_reduction {
        TargetReduction::MinOfMax => min_over_targets(&target_values)?,
        TargetReduction::MaxOfMin => max_of_min(nets, targets, &q_next, &next_states, b_n, t_n)?,
    };

    let mut surprise_tape = None;
    let mut v_online = None;
    let energy = match &nets.surprise {
        Some(sn) => {
            let sigma = compute_sigma(batch, Which::Current, cfg.sigma_pooling)?;
            let sigma_next = compute_sigma(batch, Which::Next, cfg.sigma_pooling)?;
            let group = |r: usize| r / t_n;
            let xs = sn.assemble(states.view(), actions.view(), &sigma, group)?;
            let v = if with_grad && !cfg.freeze_surprise {
                let (v, tape) = sn.forward(params, xs.view())?;
                surprise_tape = Some(tape);
                v
            } else {
                sn.predict(params, xs.view())?
            };
            let (u_next, _) = next_greedy(&q_all, b_n, t_n, n);
            let xt = sn.assemble(next_states.view(), u_next.view(), &sigma_next, group)?;
            let vt = sn.predict(&targets.params[0], xt.view())?;
            let est = SurpriseEstimate {
                v_surp: v,
                v_surp_target: vt,
            };
            let ratio = energy_ratio(&est, obj.beta, cfg.ratio_order)?;
            v_online = Some(est.v_surp);
            Some(ratio)
        }
        None => None,
    };

    let rewards = batch.rewards.clone().into_shape_with_order(rows).expect("contiguous");
    let terminated = batch.terminated.clone().into_shape_with_order(rows).expect("contiguous");
    let mask = batch.mask.clone().into_shape_with_order(rows).expect("contiguous");
    let y = td_target(
        &rewards,
        &terminated,
        &reduced_target,
        energy.as_ref().map(|e| &e.e),
        cfg.gamma,
        obj.beta,
    );
    let delta = &y - &q_taken;
    let cols = delta.ncols();
    let n_valid = mask.iter().filter(|&&m| m != 0.0).count();
    if n_valid == 0 {
        return Err(Error::Usage("loss on a batch with no valid steps".into()));
    }
    let nv = n_valid as f64;
    let (mut sq, mut abs, mut e_sum, mut e_abs) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..rows {
        if mask[r] == 0.0 {
            continue;
        }
        for c in 0..cols {
            let d = delta[[r, c]];
            sq += 0.5 * d * d;
            abs += d.abs();
        }
        if let Some(en) = &energy {
            e_sum += en.e[r];
            e_abs += en.e[r].abs();
        }
    }
    let stats = LossStats {
        loss: sq / nv,
        abs_td_error: abs / (nv * cols as f64),
        e_mean: e_sum / nv,
        e_abs_mean: e_abs / nv,
        n_valid,
    };
    if !stats.loss.is_finite() {
        return Err(Error::Diverged(format!(
            "loss is {} ({}; max|q_taken|={:.3e}, max|y|={:.3e})",
            stats.loss,
            batch.summary(),
            q_taken.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            y.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        )));
    }

    if with_grad {
        let mut g_taken = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                g_taken[[r, c]] = -mask[r] * delta[[r, c]] / nv;
            }
        }
        let g_chosen = match &mixer_tape {
            Some(tape) => nets.mixer.backward(params, tape, g_taken.column(0))?,
            None => g_taken.clone(),
        };
        let mut g_q = Array2::zeros(q_all.dim());
        for b in 0..b_n {
            for t in 0..t_n {
                for a in 0..n {
                    let r = b * t_n + t;
                    g_q[[agent_row(b, t, a, t_n, n), actions[[r, a]]]] += g_chosen[[r, a]];
                }
            }
        }
        nets.agent
            .backward(params, agent_tape.as_ref().expect("taped"), g_q.view())?;
        if let (Some(sn), Some(tape), Some(v)) = (&nets.surprise, &surprise_tape, &v_online) {
            let sign = cfg.ratio_order.online_sign();
            let mut g_v = energy_lse_grad(v.view());
            for r in 0..rows {
                let d: f64 = (0..cols).map(|c| delta[[r, c]]).sum();
                let g_lse = mask[r] * d * obj.beta * sign / nv;
                g_v.row_mut(r).mapv_inplace(|p| p * g_lse);
            }
            sn.backward(params, tape, g_v.view())?;
        }
    }

    Ok(LossOutput {
        stats,
        q_taken,
        y,
        target_values,
        reduced_target,
        energy,
    })
}
