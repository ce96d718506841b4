use emix_core::env::{EnvConfig, MultiAgentEnv, SpuriousCapture, N_ACTIONS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_episode(env: &mut SpuriousCapture, seed: u64, rng: &mut ChaCha8Rng) -> Vec<(Vec<Vec<f64>>, bool, f64)> {
    let (_, obs) = env.reset(seed).unwrap();
    let mut out = vec![(obs.into_iter().map(|o| o.0).collect(), env.storm_active(), 0.0)];
    loop {
        let u: Vec<usize> = (0..env.n_agents()).map(|_| rng.random_range(0..N_ACTIONS)).collect();
        let r = env.step(&u).unwrap();
        out.push((
            r.observations.into_iter().map(|o| o.0).collect(),
            r.info.storm_active,
            r.reward,
        ));
        if r.terminated || r.truncated {
            return out;
        }
    }
}

#[test]
fn rewards_bounded_and_length_capped() {
    let cfg = EnvConfig {
        p_storm: 0.2,
        ..Default::default()
    };
    let mut env = SpuriousCapture::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..200 {
        let ep = random_episode(&mut env, seed, &mut rng);
        assert!(ep.len() - 1 <= cfg.episode_limit);
        for (obs, _, r) in &ep[1..] {
            assert!(*r >= -0.1 - 1e-12 && *r <= 10.0 * cfg.n_prey as f64, "{r}");
            assert!(obs.iter().flatten().all(|v| v.is_finite()));
            assert!(obs.iter().all(|o| o.len() == cfg.obs_dim()));
        }
    }
}

#[test]
fn trajectory_determined_by_seed_and_actions() {
    let cfg = EnvConfig {
        p_storm: 0.3,
        ..Default::default()
    };
    let mut a = SpuriousCapture::new(cfg.clone()).unwrap();
    let mut b = SpuriousCapture::new(cfg).unwrap();
    let mut ra = ChaCha8Rng::seed_from_u64(9);
    let mut rb = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        assert_eq!(random_episode(&mut a, seed, &mut ra), random_episode(&mut b, seed, &mut rb));
    }
}

fn window_spread(obs: &[Vec<Vec<f64>>]) -> f64 {
    let n = obs.len() as f64;
    let (agents, dim) = (obs[0].len(), obs[0][0].len());
    let mut total = 0.0;
    for a in 0..agents {
        for j in 0..dim {
            let mean = obs.iter().map(|o| o[a][j]).sum::<f64>() / n;
            let var = obs.iter().map(|o| (o[a][j] - mean).powi(2)).sum::<f64>() / n;
            total += var.sqrt();
        }
    }
    total / (agents * dim) as f64
}

#[test]
fn storms_raise_observation_spread() {
    let cfg = EnvConfig {
        p_storm: 0.1,
        ..Default::default()
    };
    let len = cfg.storm_duration;
    let mut env = SpuriousCapture::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut storm, mut calm, mut used) = (0.0, 0.0, 0);
    let mut seed = 0;
    while used < 100 {
        seed += 1;
        assert!(seed < 10_000, "too few episodes with both windows");
        let ep = random_episode(&mut env, seed, &mut rng);
        let find = |want: bool| {
            (0..ep.len().saturating_sub(len - 1)).find(|&s| ep[s..s + len].iter().all(|(_, st, _)| *st == want))
        };
        let (Some(s), Some(c)) = (find(true), find(false)) else {
            continue;
        };
        let pick = |start: usize| ep[start..start + len].iter().map(|(o, _, _)| o.clone()).collect::<Vec<_>>();
        storm += window_spread(&pick(s));
        calm += window_spread(&pick(c));
        used += 1;
    }
    assert!(storm > calm, "storm {storm} vs calm {calm}");
}
