//! Summaries of finished runs used by the directional experiments.

use emix_core::learner::{MetricsRecord, UpdateRecord};
use serde::{Deserialize, Serialize};

/// Fraction of training treated as the opening and terminal phases.
pub const PHASE_FRACTION: f64 = 0.1;

/// Means over the first and last tenth of `values`, each at least one element.
pub fn decile_means(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let k = ((values.len() as f64 * PHASE_FRACTION).round() as usize).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..k]), mean(&values[values.len() - k..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeciles {
    pub first: f64,
    pub last: f64,
}

impl EnergyDeciles {
    /// Whether mean |E| fell from the opening to the terminal phase.
    pub fn settled(&self) -> bool {
        self.last < self.first
    }

    /// Absolute change of mean |E| between the phases.
    pub fn movement(&self) -> f64 {
        (self.first - self.last).abs()
    }
}

/// Mean per-update |E| over the first and last tenth of the updates.
pub fn energy_deciles(updates: &[UpdateRecord]) -> Option<EnergyDeciles> {
    let v: Vec<f64> = updates.iter().map(|u| u.e_abs_mean).collect();
    decile_means(&v).map(|(first, last)| EnergyDeciles { first, last })
}

/// Mean evaluation success over records in the terminal phase of a run of
/// `total_steps`.
pub fn terminal_success(metrics: &[MetricsRecord], total_steps: u64) -> Option<f64> {
    let from = total_steps as f64 * (1.0 - PHASE_FRACTION);
    let v: Vec<f64> = metrics
        .iter()
        .filter(|m| m.step as f64 >= from)
        .map(|m| m.success_rate)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean absolute TD error over updates in the terminal phase.
pub fn terminal_abs_td(updates: &[UpdateRecord], total_steps: u64) -> Option<f64> {
    let from = total_steps as f64 * (1.0 - PHASE_FRACTION);
    let v: Vec<f64> = updates
        .iter()
        .filter(|u| u.step as f64 > from)
        .map(|u| u.abs_td_error)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(step: u64, td: f64, e: f64) -> UpdateRecord {
        UpdateRecord {
            step,
            loss: 0.0,
            abs_td_error: td,
            e_mean: e,
            e_abs_mean: e.abs(),
        }
    }

    #[test]
    fn deciles_of_a_ramp() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(decile_means(&v), Some((4.5, 94.5)));
        assert_eq!(decile_means(&[3.0]), Some((3.0, 3.0)));
        assert_eq!(decile_means(&[]), None);
    }

    #[test]
    fn energy_settles_when_the_tail_is_smaller() {
        let u: Vec<UpdateRecord> = (0..20).map(|i| upd(i, 0.0, -((20 - i) as f64))).collect();
        let d = energy_deciles(&u).unwrap();
        assert_eq!((d.first, d.last), (19.5, 1.5));
        assert!(d.settled());
        assert_eq!(d.movement(), 18.0);
    }

    #[test]
    fn terminal_phase_selection() {
        let u: Vec<UpdateRecord> = (1..=10).map(|i| upd(i * 10, i as f64, 0.0)).collect();
        assert_eq!(terminal_abs_td(&u, 100), Some(10.0));
        let m: Vec<MetricsRecord> = (0..=10)
            .map(|i| MetricsRecord {
                step: i * 10,
                success_rate: i as f64 / 10.0,
                mean_return: 0.0,
                abs_td_error: None,
                energy_ratio_mean: None,
                energy_ratio_abs_mean: None,
                epsilon: 0.0,
                loss: None,
            })
            .collect();
        assert!((terminal_success(&m, 100).unwrap() - 0.95).abs() < 1e-12);
        assert_eq!(terminal_success(&m[..2], 100), None);
    }
}
