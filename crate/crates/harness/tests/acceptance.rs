//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! Criteria 1-5 are property checks; 6-10 train full-length runs (200k
//! environment steps each) on the gridworld, so the whole gate takes well over
//! an hour on one core.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use emix_core::env::EnvConfig;
use emix_core::learner::{random_policy_baseline, Algo};
use emix_harness::checks;
use emix_harness::config::RunConfig;
use emix_harness::experiments::{energy_deciles, mean, terminal_abs_td, terminal_success};
use emix_harness::run::{train, TrainOutcome};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const RUN_BUDGET: Duration = Duration::from_secs(30 * 60);

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: u8, name: &str, passed: bool, detail: &str) {
        if !passed {
            self.failed += 1;
        }
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "[{}] {id:>2} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        let _ = out.flush();
    }
}

fn note(msg: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "  .. {msg}");
}

fn config(algo: Algo, beta: f64, storm: bool, seeds: &[u64]) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.learner.algo = algo;
    cfg.learner.beta = beta;
    if !storm {
        cfg.env.p_storm = 0.0;
    }
    cfg.run.seeds = seeds.to_vec();
    cfg
}

/// Trains `cfg` and records the slowest single seed.
fn timed_train(cfg: &RunConfig, root: &Path) -> (TrainOutcome, Duration) {
    let t = Instant::now();
    let mut last = Instant::now();
    let mut slowest = Duration::ZERO;
    let out = train(cfg, root, |m| {
        slowest = slowest.max(last.elapsed());
        last = Instant::now();
        note(m);
    })
    .unwrap_or_else(|e| panic!("training {:?} failed: {e:#}", cfg.learner.algo));
    slowest = slowest.max(last.elapsed());
    note(&format!("{} done in {:.0}s", out.label, t.elapsed().as_secs_f64()));
    (out, slowest)
}

fn per_seed(out: &TrainOutcome, f: impl Fn(&emix_harness::run::SeedOutcome) -> Option<f64>) -> Vec<f64> {
    out.seeds.iter().map(|s| f(s).unwrap_or(f64::NAN)).collect()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let root: PathBuf = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let mut gate = Gate { failed: 0 };

    let results = checks::run_all(1);
    let budgets = [5.0, 30.0, f64::INFINITY, f64::INFINITY, f64::INFINITY];
    for (r, budget) in results.iter().zip(budgets) {
        let in_time = r.elapsed.as_secs_f64() < budget;
        let detail = format!("{} [{:.2}s]", r.detail, r.elapsed.as_secs_f64());
        gate.report(r.id, r.name, r.passed && in_time, &detail);
    }

    let total = RunConfig::default().run.total_steps;
    let random = random_policy_baseline(
        &EnvConfig {
            p_storm: 0.0,
            ..Default::default()
        },
        1000,
        0,
    )
    .expect("baseline");
    note(&format!("random-policy success on the storm-free variant: {:.3}", random.success_rate));

    let (emix, emix_slowest) = timed_train(&config(Algo::Emix, 0.01, true, &SEEDS), &root);
    let deciles: Vec<_> = emix.seeds.iter().map(|s| energy_deciles(&s.summary.updates)).collect();
    let settled = deciles.iter().filter(|d| d.is_some_and(|d| d.settled())).count();
    let pairs: Vec<String> = deciles
        .iter()
        .map(|d| d.map_or("-".into(), |d| format!("{:.4}->{:.4}", d.first, d.last)))
        .collect();
    gate.report(
        6,
        "energy settles under storms",
        settled >= 4 && emix_slowest <= RUN_BUDGET,
        &format!(
            "mean |E| first->last tenth per seed [{}]; settled in {settled}/5 (need 4); slowest run {:.0}s",
            pairs.join(", "),
            emix_slowest.as_secs_f64()
        ),
    );

    let (qmix_calm, _) = timed_train(&config(Algo::Qmix, 0.0, false, &SEEDS), &root);
    let best: Vec<f64> = qmix_calm
        .seeds
        .iter()
        .map(|s| s.summary.metrics.iter().map(|m| m.success_rate).fold(0.0, f64::max))
        .collect();
    let calm_terminal = per_seed(&qmix_calm, |s| terminal_success(&s.summary.metrics, total));
    let threshold = 0.8;
    gate.report(
        7,
        "desk-scale learning without storms",
        threshold > random.success_rate && best.iter().all(|&b| b >= threshold),
        &format!(
            "QMIX best success per seed [{}], terminal [{}]; threshold {threshold} vs random policy {:.3}",
            fmt(&best),
            fmt(&calm_terminal),
            random.success_rate
        ),
    );

    let (qmix, _) = timed_train(&config(Algo::Qmix, 0.0, true, &SEEDS), &root);
    let (twin, _) = timed_train(&config(Algo::Twinqmix, 0.0, true, &SEEDS), &root);
    let success = |o: &TrainOutcome| per_seed(o, |s| terminal_success(&s.summary.metrics, total));
    let (se, sq, st) = (success(&emix), success(&qmix), success(&twin));
    let (me, mq, mt) = (mean(&se), mean(&sq), mean(&st));
    let plot_dir = root.join("comparison");
    let plot = Command::new(env!("CARGO_BIN_EXE_emix"))
        .arg("plot")
        .args([&emix.dir, &qmix.dir, &twin.dir])
        .arg("--out")
        .arg(&plot_dir)
        .output()
        .expect("plot runs");
    let plotted = plot.status.success() && plot_dir.join("success.svg").is_file();
    gate.report(
        8,
        "surprise benefit under storms",
        me >= mq && me >= mt && plotted,
        &format!(
            "terminal success EMIX {me:.3} [{}], QMIX {mq:.3} [{}], TwinQMIX {mt:.3} [{}]; plot {}",
            fmt(&se),
            fmt(&sq),
            fmt(&st),
            if plotted { plot_dir.display().to_string() } else { "missing".into() }
        ),
    );

    let td = |o: &TrainOutcome| per_seed(o, |s| terminal_abs_td(&s.summary.updates, total));
    let (tq, tt) = (td(&qmix), td(&twin));
    gate.report(
        9,
        "twin targets lower the TD error",
        mean(&tt) <= mean(&tq),
        &format!(
            "terminal mean |TD| TwinQMIX {:.4} [{}] vs QMIX {:.4} [{}]",
            mean(&tt),
            fmt(&tt),
            mean(&tq),
            fmt(&tq)
        ),
    );

    let (low, _) = timed_train(&config(Algo::Emix, 0.001, true, &SEEDS), &root);
    let (high, _) = timed_train(&config(Algo::Emix, 0.1, true, &SEEDS[..2]), &root);
    let movement = |o: &TrainOutcome| per_seed(o, |s| energy_deciles(&s.summary.updates).map(|d| d.movement()));
    let (ml, mm, mh) = (movement(&low), movement(&emix), movement(&high));
    let complete = [&low, &emix, &high]
        .iter()
        .all(|o| o.seeds.iter().all(|s| s.summary.aborted.is_none()));
    let ablation = root.join("beta-ablation");
    let ablation_written = emix_harness::run::write_comparison(&ablation, &[low.clone(), emix.clone(), high.clone()]).is_ok();
    gate.report(
        10,
        "beta ablation",
        complete && ablation_written && mean(&ml) < mean(&mm),
        &format!(
            "mean |E| movement beta=0.001 {:.4} [{}], beta=0.01 {:.4} [{}], beta=0.1 {:.4} [{}]; all complete: {complete}; report {}",
            mean(&ml),
            fmt(&ml),
            mean(&mm),
            fmt(&mm),
            mean(&mh),
            fmt(&mh),
            ablation.join("report.json").display()
        ),
    );

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance: {} of 10 criteria failed", gate.failed);
    if gate.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
