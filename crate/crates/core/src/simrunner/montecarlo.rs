use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tag_model::Epc;

use super::report::{write_csv, RunReport};
use super::run::run_scenario;
use super::scenario::{ScenarioConfig, ScenarioError};

/// Normal quantile for a two-sided 95 % interval.
pub const Z_95: f64 = 1.96;

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateSummary {
    pub fn new(successes: usize, trials: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials, Z_95);
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        Self { successes, trials, rate, ci_low, ci_high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub count: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p90_s: f64,
    pub max_s: f64,
}

impl TimeSummary {
    pub fn from_samples(mut xs: Vec<f64>) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        let q = |f: f64| xs[((xs.len() - 1) as f64 * f).round() as usize];
        Some(Self {
            count: xs.len(),
            mean_s: xs.iter().sum::<f64>() / xs.len() as f64,
            median_s: q(0.5),
            p90_s: q(0.9),
            max_s: xs[xs.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSummary {
    pub epc: Epc,
    pub detection: RateSummary,
    pub time_to_read: Option<TimeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub scenario: String,
    pub base_seed: u64,
    pub runs: usize,
    /// Pooled over every tag of every run.
    pub detection: RateSummary,
    pub per_tag: Vec<TagSummary>,
    pub time_to_read: Option<TimeSummary>,
    /// How many runs found every tag.
    pub all_found: RateSummary,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub summary: MonteCarloSummary,
    pub reports: Vec<RunReport>,
}

impl MonteCarloResult {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let ids: Vec<String> = self.reports.iter().map(|r| r.seed.to_string()).collect();
        write_csv(out, ids.iter().zip(&self.reports).map(|(id, r)| (id.as_str(), r.tags.as_slice())))
    }
}

/// Run seeds `base_seed .. base_seed + n_runs` in parallel.
pub fn monte_carlo(cfg: &ScenarioConfig, n_runs: usize, base_seed: u64) -> Result<MonteCarloResult, ScenarioError> {
    cfg.validate()?;
    let reports = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_scenario(cfg, base_seed + i).map(|o| o.report))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MonteCarloResult { summary: summarize(&cfg.name, base_seed, &reports), reports })
}

pub fn summarize(scenario: &str, base_seed: u64, reports: &[RunReport]) -> MonteCarloSummary {
    let tags_detected: usize = reports.iter().map(|r| r.detected).sum();
    let tags_total: usize = reports.iter().map(|r| r.total).sum();
    let epcs: Vec<Epc> = reports.first().map(|r| r.tags.iter().map(|t| t.epc).collect()).unwrap_or_default();
    let per_tag = epcs
        .iter()
        .map(|epc| {
            let outcomes: Vec<_> = reports.iter().filter_map(|r| r.tag(epc)).collect();
            let hits = outcomes.iter().filter(|t| t.detected).count();
            TagSummary {
                epc: *epc,
                detection: RateSummary::new(hits, outcomes.len()),
                time_to_read: TimeSummary::from_samples(outcomes.iter().filter_map(|t| t.time_to_read_s).collect()),
            }
        })
        .collect();
    let times = reports.iter().flat_map(|r| r.tags.iter().filter_map(|t| t.time_to_read_s)).collect();
    MonteCarloSummary {
        scenario: scenario.into(),
        base_seed,
        runs: reports.len(),
        detection: RateSummary::new(tags_detected, tags_total),
        per_tag,
        time_to_read: TimeSummary::from_samples(times),
        all_found: RateSummary::new(reports.iter().filter(|r| r.total > 0 && r.detected == r.total).count(), reports.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wilson_matches_hand_computation() {
        // 8 of 10: center 0.7167, half-width 0.2260.
        let (lo, hi) = wilson_interval(8, 10, Z_95);
        assert_abs_diff_eq!(lo, 0.4902, epsilon = 1e-4);
        assert_abs_diff_eq!(hi, 0.9433, epsilon = 1e-4);
        assert_eq!(wilson_interval(0, 0, Z_95), (0.0, 1.0));
        let (lo, hi) = wilson_interval(10, 10, Z_95);
        assert!(hi == 1.0 && lo > 0.7);
    }

    #[test]
    fn time_summary_quantiles() {
        let s = TimeSummary::from_samples(vec![3.0, 1.0, 2.0, 5.0, 4.0]).unwrap();
        assert_eq!((s.count, s.median_s, s.max_s), (5, 3.0, 5.0));
        assert_abs_diff_eq!(s.mean_s, 3.0);
        assert!(TimeSummary::from_samples(Vec::new()).is_none());
    }
}
