//! Cross-seed aggregation of metrics logs.

use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use emix_core::learner::MetricsRecord;
use serde::{Deserialize, Serialize};

/// Mean and population standard deviation; `std` is absent for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
        Some(Self {
            mean,
            std,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub success_rate: Stat,
    pub abs_td_error: Option<Stat>,
    pub energy_ratio_mean: Option<Stat>,
    pub energy_ratio_abs_mean: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFinal {
    pub run: String,
    pub final_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub runs: Vec<RunFinal>,
    pub final_success: Stat,
    pub curve: Vec<CurvePoint>,
}

fn stat_of_present(values: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
    let v: Option<Vec<f64>> = values.collect();
    v.and_then(|v| Stat::of(&v))
}

/// Aligns named logs on their shared step grid and summarises each point.
pub fn aggregate(label: &str, logs: &[(String, Vec<MetricsRecord>)]) -> Result<AggregateReport> {
    let Some((_, first)) = logs.first() else {
        bail!("aggregate needs at least one metrics log");
    };
    let grid: Vec<u64> = first.iter().map(|m| m.step).collect();
    if grid.is_empty() {
        bail!("metrics log `{}` is empty", logs[0].0);
    }
    let offending: Vec<&str> = logs
        .iter()
        .filter(|(_, l)| !l.iter().map(|m| m.step).eq(grid.iter().copied()))
        .map(|(n, _)| n.as_str())
        .collect();
    if !offending.is_empty() {
        bail!(
            "step grids differ from `{}`: {}",
            logs[0].0,
            offending.join(", ")
        );
    }
    let curve = (0..grid.len())
        .map(|i| {
            let at = |f: fn(&MetricsRecord) -> Option<f64>| stat_of_present(logs.iter().map(|(_, l)| f(&l[i])));
            CurvePoint {
                step: grid[i],
                success_rate: at(|m| Some(m.success_rate)).expect("non-empty"),
                abs_td_error: at(|m| m.abs_td_error),
                energy_ratio_mean: at(|m| m.energy_ratio_mean),
                energy_ratio_abs_mean: at(|m| m.energy_ratio_abs_mean),
            }
        })
        .collect();
    let runs: Vec<RunFinal> = logs
        .iter()
        .map(|(n, l)| RunFinal {
            run: n.clone(),
            final_success: l.last().expect("non-empty").success_rate,
        })
        .collect();
    let finals: Vec<f64> = runs.iter().map(|r| r.final_success).collect();
    Ok(AggregateReport {
        label: label.to_string(),
        final_success: Stat::of(&finals).expect("non-empty"),
        runs,
        curve,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(steps: &[u64], success: &[f64]) -> Vec<MetricsRecord> {
        steps
            .iter()
            .zip(success)
            .map(|(&step, &s)| MetricsRecord {
                step,
                success_rate: s,
                mean_return: 0.0,
                abs_td_error: (step > 0).then_some(s),
                energy_ratio_mean: None,
                energy_ratio_abs_mean: None,
                epsilon: 1.0,
                loss: None,
            })
            .collect()
    }

    #[test]
    fn single_log_has_no_std() {
        let r = aggregate("a", &[("s1".into(), log(&[0, 10], &[0.1, 0.5]))]).unwrap();
        assert_eq!(r.final_success.mean, 0.5);
        assert_eq!(r.final_success.std, None);
        assert_eq!(r.curve[0].success_rate.mean, 0.1);
        assert!(r.curve[0].abs_td_error.is_none());
        assert!(r.curve[1].energy_ratio_mean.is_none());
    }

    #[test]
    fn identical_logs_have_zero_std() {
        let l = log(&[0, 10], &[0.2, 0.7]);
        let r = aggregate("a", &[("s1".into(), l.clone()), ("s2".into(), l)]).unwrap();
        assert_eq!(r.final_success.std, Some(0.0));
    }

    #[test]
    fn population_std_of_three_finals() {
        let logs: Vec<(String, Vec<MetricsRecord>)> = [0.8, 0.9, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| (format!("s{i}"), log(&[0, 10], &[0.0, s])))
            .collect();
        let r = aggregate("a", &logs).unwrap();
        let oracle = ((0.01 + 0.0 + 0.01) / 3.0f64).sqrt();
        assert!((r.final_success.mean - 0.9).abs() < 1e-12);
        assert!((r.final_success.std.unwrap() - oracle).abs() < 1e-12);
        assert!((r.final_success.std.unwrap() - 0.0816).abs() < 1e-4);
    }

    #[test]
    fn mismatched_grids_name_the_runs() {
        let logs = vec![
            ("s1".to_string(), log(&[0, 10], &[0.0, 1.0])),
            ("s2".to_string(), log(&[0, 20], &[0.0, 1.0])),
            ("s3".to_string(), log(&[0], &[0.0])),
        ];
        let err = aggregate("a", &logs).unwrap_err().to_string();
        assert!(err.ends_with(": s2, s3"), "{err}");
        assert!(aggregate("a", &[]).is_err());
    }

    #[test]
    fn reads_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let l = log(&[0, 10], &[0.25, 0.5]);
        let text: String = l.iter().map(|m| serde_json::to_string(m).unwrap() + "\n").collect();
        std::fs::write(&p, text).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), l);
    }
}
