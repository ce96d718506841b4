//! Property and oracle checks run by `emix check` and the acceptance suite.

use std::time::{Duration, Instant};

use anyhow::Result;
use emix_core::env::{EnvConfig, SpuriousCapture};
use emix_core::learner::{
    emix_loss, rollout, Algo, Episode, EpisodeBatch, EpisodeBuffer, Learner, LearnerConfig, ModelDims, Networks,
};
use emix_core::mixer::{MixerConfig, MixerKind, QmixMixer};
use emix_core::nn::{finite_diff_check, GradCheckReport, ParamSet};
use emix_core::surprise::{energy_lse, energy_lse_grad, lse, SurpriseNet};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Absolute slack allowed by the operator checks.
pub const LSE_SLACK: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e:#}")));
    CheckResult {
        id,
        name,
        passed,
        detail,
        elapsed: t.elapsed(),
    }
}

/// Non-expansiveness, monotonicity, shift-equivariance and the max bounds of
/// the log-sum-exp operator on `cases` random vectors.
pub fn lse_properties(cases: usize, seed: u64) -> CheckResult {
    timed(1, "log-sum-exp operator properties", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = [0usize; 4];
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let n = rng.random_range(1..=8);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1e6..=1e6)).collect();
            let y: Vec<f64> = if rng.random_bool(0.5) {
                (0..n).map(|_| rng.random_range(-1e6..=1e6)).collect()
            } else {
                let scale = 10f64.powf(rng.random_range(-6.0..3.0));
                x.iter().map(|v| v + rng.random_range(-scale..=scale)).collect()
            };
            let (lx, ly) = (lse(&x), lse(&y));
            let sup = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let excess = (lx - ly).abs() - sup;
            worst = worst.max(excess);
            violations[0] += (excess > LSE_SLACK) as usize;

            let z: Vec<f64> = x.iter().map(|v| v + rng.random_range(0.0..=1e3)).collect();
            violations[1] += (lse(&z) < lx - LSE_SLACK) as usize;

            let c = rng.random_range(-1e6..=1e6);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            violations[2] += ((lse(&shifted) - (lx + c)).abs() > LSE_SLACK) as usize;

            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            violations[3] += (lx < max - LSE_SLACK || lx > max + (n as f64).ln() + LSE_SLACK) as usize;
        }
        let total: usize = violations.iter().sum();
        Ok((
            total == 0,
            format!(
                "{cases} vectors; violations non-expansive={} monotone={} shift={} bounds={}; worst non-expansive excess {worst:.2e}",
                violations[0], violations[1], violations[2], violations[3]
            ),
        ))
    })
}

/// Tiny model dimensions for gradient checks.
pub const MICRO_DIMS: ModelDims = ModelDims {
    n_agents: 2,
    n_actions: 3,
    obs_dim: 4,
    state_dim: 6,
};

pub fn micro_config(beta: f64, m: usize) -> LearnerConfig {
    LearnerConfig {
        algo: Algo::Emix,
        beta,
        m: Some(m),
        agent_hidden: 6,
        surprise_hidden: 5,
        batch_size: 2,
        buffer_capacity: 16,
        mixer: MixerConfig {
            kind: MixerKind::Qmix,
            embed_dim: 4,
            hypernet_hidden: 5,
        },
        ..Default::default()
    }
}

/// A random episode with arbitrary features of the given dimensions.
pub fn synthetic_episode(dims: &ModelDims, len: usize, rng: &mut impl Rng) -> Episode {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let states = (0..=len).map(|_| v(dims.state_dim)).collect();
    let observations = (0..=len)
        .map(|_| (0..dims.n_agents).map(|_| v(dims.obs_dim)).collect())
        .collect();
    let rewards = v(len);
    let actions = (0..len)
        .map(|_| (0..dims.n_agents).map(|_| rng.random_range(0..dims.n_actions)).collect())
        .collect();
    let mut terminated = vec![false; len];
    terminated[len - 1] = rng.random_bool(0.5);
    Episode {
        states,
        observations,
        actions,
        rewards,
        terminated,
        success: false,
    }
}

pub fn perturb(params: &mut ParamSet, scale: f64, rng: &mut impl Rng, filter: impl Fn(&str) -> bool) {
    for p in params.iter_mut().filter(|p| filter(&p.name)) {
        p.value.mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
}

/// A micro learner whose targets differ from the online parameters and from
/// each other.
pub fn micro_learner(beta: f64, m: usize, seed: u64) -> Result<Learner> {
    let mut l = Learner::new(micro_config(beta, m), MICRO_DIMS, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for t in l.targets.params.iter_mut() {
        perturb(t, 0.3, &mut rng, |_| true);
    }
    Ok(l)
}

fn micro_batch(lens: &[usize], seed: u64) -> Result<EpisodeBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<Episode> = lens.iter().map(|&l| synthetic_episode(&MICRO_DIMS, l, &mut rng)).collect();
    Ok(EpisodeBatch::from_episodes(&eps.iter().collect::<Vec<_>>(), MICRO_DIMS.n_actions)?)
}

fn report_line(what: &str, r: &GradCheckReport) -> String {
    format!(
        "{what}: max rel {:.2e} over {} coords (worst {})",
        r.max_rel_error,
        r.checked,
        r.worst_param.as_deref().unwrap_or("-")
    )
}

/// Finite-difference checks of the full loss, the QMIX mixer alone and the
/// surprise mixer alone.
pub fn gradient_fidelity(seed: u64) -> CheckResult {
    timed(2, "gradient fidelity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lines = Vec::new();
        let mut ok = true;

        let l = micro_learner(0.1, 2, seed)?;
        let batch = micro_batch(&[3, 2], seed + 1)?;
        let mut params = l.params.clone();
        params.zero_grads();
        emix_loss(&batch, &l.nets, &mut params, &l.targets, &l.cfg, true)?;
        let f = |p: &ParamSet| {
            let mut p = p.detached_clone();
            emix_loss(&batch, &l.nets, &mut p, &l.targets, &l.cfg, false)
                .map(|o| o.stats.loss)
                .unwrap_or(f64::NAN)
        };
        let r = finite_diff_check(f, &params, 1e-6, GRAD_TOL, usize::MAX, &mut rng);
        ok &= r.passed;
        lines.push(report_line("full loss", &r));

        let rows = 6;
        let mut mp = ParamSet::new();
        let mcfg = micro_config(0.0, 1).mixer;
        let mixer = QmixMixer::new(&mut mp, 3, 5, &mcfg, &mut rng)?;
        let q = Array2::from_shape_fn((rows, 3), |_| rng.random_range(-2.0..2.0));
        let s = Array2::from_shape_fn((rows, 5), |_| rng.random_range(-1.0..1.0));
        let w = Array1::from_shape_fn(rows, |_| rng.random_range(-1.0..1.0));
        let (out, tape) = mixer.forward(&mp, q.view(), s.view())?;
        debug_assert_eq!(out.len(), rows);
        mixer.backward(&mut mp, &tape, w.view())?;
        let f = |p: &ParamSet| mixer.predict(p, q.view(), s.view()).map(|o| o.dot(&w)).unwrap_or(f64::NAN);
        let r = finite_diff_check(f, &mp, 1e-6, GRAD_TOL, usize::MAX, &mut rng);
        ok &= r.passed;
        lines.push(report_line("mixer", &r));

        let mut sp = ParamSet::new();
        let sn = SurpriseNet::new(&mut sp, 5, 2, 3, 4, 6, &mut rng)?;
        let x = Array2::from_shape_fn((rows, sn.input_dim()), |_| rng.random_range(-1.0..1.0));
        let (v, tape) = sn.forward(&sp, x.view())?;
        let mut g = energy_lse_grad(v.view());
        for (mut row, wr) in g.rows_mut().into_iter().zip(w.iter()) {
            row.mapv_inplace(|p| p * wr);
        }
        sn.backward(&mut sp, &tape, g.view())?;
        let f = |p: &ParamSet| {
            sn.predict(p, x.view())
                .and_then(|v| energy_lse(v.view()))
                .map(|e| e.dot(&w))
                .unwrap_or(f64::NAN)
        };
        let r = finite_diff_check(f, &sp, 1e-6, GRAD_TOL, usize::MAX, &mut rng);
        ok &= r.passed;
        lines.push(report_line("surprise mixer", &r));
        Ok((ok, lines.join("; ")))
    })
}

/// Non-negative mixing gradients and decentralized greedy optimality.
pub fn monotonic_mixing(instances: usize, seed: u64) -> CheckResult {
    timed(3, "monotonic mixing", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MixerConfig {
            kind: MixerKind::Qmix,
            embed_dim: 8,
            hypernet_hidden: 16,
        };
        let (n, a_n, sd) = (3usize, 4usize, 6usize);
        let mut negative = 0usize;
        let mut min_grad = f64::INFINITY;
        let mut misses = 0usize;
        for i in 0..instances {
            let mut p = ParamSet::new();
            let mixer = QmixMixer::new(&mut p, n, sd, &cfg, &mut ChaCha8Rng::seed_from_u64(seed + i as u64))?;
            perturb(&mut p, 0.5, &mut rng, |_| true);
            let s = Array2::from_shape_fn((1, sd), |_| rng.random_range(-2.0..2.0));
            let hyper = mixer.hypernet_forward(&p, s.view())?;

            let q = Array2::from_shape_fn((1, n), |_| rng.random_range(-5.0..5.0));
            let g = mixer.grad_wrt_q(&hyper, q.view());
            negative += g.iter().filter(|&&v| v < 0.0).count();
            min_grad = g.iter().copied().fold(min_grad, f64::min);

            let table = Array2::from_shape_fn((n, a_n), |_| rng.random_range(-5.0..5.0));
            let greedy: Vec<f64> = (0..n)
                .map(|a| table.row(a).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let greedy_value = mixer.mix_row(&hyper, 0, &greedy);
            let mut best = f64::NEG_INFINITY;
            for j in 0..a_n.pow(n as u32) {
                let mut code = j;
                let joint: Vec<f64> = (0..n)
                    .map(|a| {
                        let u = code % a_n;
                        code /= a_n;
                        table[[a, u]]
                    })
                    .collect();
                best = best.max(mixer.mix_row(&hyper, 0, &joint));
            }
            misses += (greedy_value < best) as usize;
        }
        Ok((
            negative == 0 && misses == 0,
            format!(
                "{instances} instances: {negative} negative partials (min {min_grad:.3e}); greedy attained the joint max in {}/{instances}",
                instances - misses
            ),
        ))
    })
}

/// Random-policy episodes from the default environment, for replay-driven checks.
pub fn random_episodes(env_cfg: &EnvConfig, count: usize, seed: u64) -> Result<Vec<Episode>> {
    let dims = ModelDims::from_env(env_cfg);
    let (nets, params) = Networks::build(dims, &LearnerConfig::default(), seed)?;
    let mut env = SpuriousCapture::new(env_cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| Ok(rollout(&mut env, &nets, &params, seed * 1000 + k as u64, |_| 1.0, &mut rng)?))
        .collect()
}

fn loss_bits(cfg: &LearnerConfig, dims: ModelDims, batches: &[EpisodeBatch], seed: u64) -> Result<Vec<u64>> {
    let mut l = Learner::new(cfg.clone(), dims, seed)?;
    let mut out = Vec::with_capacity(batches.len());
    for (k, b) in batches.iter().enumerate() {
        l.sync_targets(k as u64)?;
        out.push(l.update(b)?.loss.to_bits());
    }
    Ok(out)
}

/// Bit-identical loss sequences for the reductions of the EMIX objective.
pub fn reduction_lattice(updates: usize, seed: u64) -> CheckResult {
    timed(4, "reduction lattice", || {
        let env_cfg = EnvConfig::default();
        let dims = ModelDims::from_env(&env_cfg);
        let mut buffer = EpisodeBuffer::new(64)?;
        for ep in random_episodes(&env_cfg, 64, seed)? {
            buffer.insert(ep);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = (0..updates)
            .map(|_| EpisodeBatch::from_episodes(&buffer.sample(8, &mut rng)?, dims.n_actions))
            .collect::<emix_core::Result<Vec<_>>>()?;
        let base = LearnerConfig {
            batch_size: 8,
            update_interval: 10,
            ..Default::default()
        };
        let with = |algo, beta, m: Option<usize>, kind| LearnerConfig {
            algo,
            beta,
            m,
            mixer: MixerConfig { kind, ..base.mixer },
            ..base.clone()
        };
        let cases = [
            ("EMIX(beta=0, m=1) = QMIX", with(Algo::Emix, 0.0, Some(1), MixerKind::Qmix), with(Algo::Qmix, 0.0, None, MixerKind::Qmix)),
            ("EMIX(beta=0, m=2) = TwinQMIX", with(Algo::Emix, 0.0, Some(2), MixerKind::Qmix), with(Algo::Twinqmix, 0.0, None, MixerKind::Qmix)),
            ("EMIX(beta=0, m=1, vdn) = VDN", with(Algo::Emix, 0.0, Some(1), MixerKind::Vdn), with(Algo::Vdn, 0.0, None, MixerKind::Vdn)),
        ];
        let mut ok = true;
        let mut lines = Vec::new();
        for (name, a, b) in cases {
            let (la, lb) = (loss_bits(&a, dims, &batches, seed)?, loss_bits(&b, dims, &batches, seed)?);
            let first_diff = la.iter().zip(&lb).position(|(x, y)| x != y);
            ok &= first_diff.is_none() && la.len() == updates;
            lines.push(match first_diff {
                None => format!("{name}: {updates} identical"),
                Some(k) => format!("{name}: differs at update {k}"),
            });
        }
        Ok((ok, lines.join("; ")))
    })
}

/// Min dominance over targets and the absence of gradient paths through them.
pub fn target_isolation(batches: usize, seed: u64) -> CheckResult {
    timed(5, "target-min dominance and gradient-free targets", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = micro_learner(0.1, 3, seed)?;
        let mut dominance_violations = 0usize;
        for k in 0..batches {
            let lens: Vec<usize> = (0..3).map(|_| rng.random_range(1..=4)).collect();
            let out = l.evaluate(&micro_batch(&lens, seed + 10 + k as u64)?)?;
            for t in &out.target_values {
                dominance_violations += out.reduced_target.iter().zip(t.iter()).filter(|(r, v)| r > v).count();
            }
        }

        let batch = micro_batch(&[3, 2], seed + 1)?;
        let base = l.evaluate(&batch)?;
        let mut moved = l.clone();
        for t in moved.targets.params.iter_mut() {
            perturb(t, 0.5, &mut rng, |_| true);
        }
        let moved_out = moved.evaluate(&batch)?;
        let y_changed = moved_out.y != base.y;

        let mut params = moved.params.clone();
        params.zero_grads();
        let targets = moved.targets.clone();
        let before: Vec<Vec<f64>> = targets
            .params
            .iter()
            .map(|p| p.iter().flat_map(|x| x.value.iter().copied()).collect())
            .collect();
        emix_loss(&batch, &moved.nets, &mut params, &targets, &moved.cfg, true)?;
        let target_grads: f64 = targets
            .params
            .iter()
            .flat_map(|p| p.iter().flat_map(|x| x.grad.iter().map(|g| g.abs())))
            .sum();
        let after: Vec<Vec<f64>> = targets
            .params
            .iter()
            .map(|p| p.iter().flat_map(|x| x.value.iter().copied()).collect())
            .collect();
        let untouched = before == after && target_grads == 0.0;

        let f = |p: &ParamSet| {
            let mut p = p.detached_clone();
            emix_loss(&batch, &moved.nets, &mut p, &targets, &moved.cfg, false)
                .map(|o| o.stats.loss)
                .unwrap_or(f64::NAN)
        };
        let fd = finite_diff_check(f, &params, 1e-6, GRAD_TOL, usize::MAX, &mut rng);

        // dy/dθ by central differences, split by whether θ is a surprise weight.
        let h = 1e-6;
        let (mut outside, mut inside) = (0.0f64, 0.0f64);
        let mut probe = moved.params.clone();
        let names: Vec<String> = probe.iter().map(|p| p.name.clone()).collect();
        for name in &names {
            let len = probe.by_name(name).expect("present").value.len();
            for i in (0..len).step_by(((len / 6).max(1)).min(len)) {
                let orig = probe.by_name(name).expect("present").value.as_slice().expect("contiguous")[i];
                let mut eval = |v: f64| -> Result<Array2<f64>> {
                    probe.by_name_mut(name).expect("present").value.as_slice_mut().expect("contiguous")[i] = v;
                    let mut scratch = probe.detached_clone();
                    Ok(emix_loss(&batch, &moved.nets, &mut scratch, &targets, &moved.cfg, false)?.y)
                };
                let (yp, ym) = (eval(orig + h)?, eval(orig - h)?);
                eval(orig)?;
                let d = yp.iter().zip(ym.iter()).map(|(a, b)| ((a - b) / (2.0 * h)).abs()).fold(0.0, f64::max);
                if name.starts_with("surprise.") {
                    inside = inside.max(d);
                } else {
                    outside = outside.max(d);
                }
            }
        }
        let ok = dominance_violations == 0 && y_changed && untouched && fd.passed && outside == 0.0 && inside > 0.0;
        Ok((
            ok,
            format!(
                "{dominance_violations} dominance violations over {batches} batches; y changes with targets: {y_changed}; \
                 target params untouched with zero grad: {untouched}; online grad vs finite differences max rel {:.2e}; \
                 max |dy/dθ| outside surprise {outside:.1e}, inside {inside:.1e}",
                fd.max_rel_error
            ),
        ))
    })
}

/// Criteria 1 through 5 at their acceptance sizes.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        lse_properties(10_000, seed),
        gradient_fidelity(seed),
        monotonic_mixing(1000, seed),
        reduction_lattice(50, seed),
        target_isolation(50, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        assert!(lse_properties(500, 3).passed);
        assert!(monotonic_mixing(50, 3).passed);
        let r = reduction_lattice(5, 3);
        assert!(r.passed, "{}", r.line());
    }

    #[test]
    fn result_lines_name_the_outcome() {
        let r = CheckResult {
            id: 7,
            name: "x",
            passed: false,
            detail: "d".into(),
            elapsed: Duration::from_millis(1500),
        };
        assert_eq!(r.line(), "[FAIL]  7 x (1.50s): d");
    }
}
