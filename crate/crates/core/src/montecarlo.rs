//! Repeated runs with derived seeds and their averaged statistics.

use std::collections::BTreeMap;

use crate::config::{ModelKind, SimulationConfig};
use crate::engine::{run_simulation_with, TimeSeriesRecord};
use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecPolicy};
use crate::rng::run_seed;
use crate::stats::{excess_kurtosis, StatsReport};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub stats: StatsReport,
    /// Model-specific scalars, e.g. the mean chartist share.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub per_run: Vec<RunSummary>,
    pub mean: StatsReport,
    pub mean_metrics: BTreeMap<String, f64>,
}

/// Configuration of run `run`: the master config with its derived seed.
pub fn run_config(config: &SimulationConfig, run: usize) -> SimulationConfig {
    SimulationConfig {
        seed: run_seed(config.seed, run),
        ..config.clone()
    }
}

fn mean_after_first(record: &TimeSeriesRecord, column: &str) -> Option<f64> {
    let v = record.column(column)?;
    let tail = &v[1..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Scalars summarizing one record beyond the return statistics.
pub fn run_metrics(record: &TimeSeriesRecord) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    match record.model {
        ModelKind::Fw => {
            if let Some(share) = mean_after_first(record, "chartist_share") {
                m.insert("chartist_share".into(), share);
            }
        }
        ModelKind::Lls => {
            if let Some(f) = mean_after_first(record, "boundary_fraction") {
                m.insert("boundary_fraction".into(), f);
            }
        }
        ModelKind::CrossWealth => {
            if let Some(w) = &record.final_wealth {
                m.insert("wealth_kurtosis".into(), excess_kurtosis(w)?);
            }
        }
        ModelKind::Cross | ModelKind::CrossSde => {}
    }
    Ok(m)
}

pub fn run_monte_carlo(config: &SimulationConfig, runs: usize) -> Result<MonteCarloReport> {
    run_monte_carlo_with(config, runs, ExecPolicy::default(), &|_, _| Ok(()))
}

/// Runs `runs` independent simulations, run `i` seeded with
/// `run_seed(config.seed, i)`, and hands each record to `on_record` before
/// reducing it to statistics. Runs execute in parallel under
/// [`ExecPolicy::Parallel`]; the report does not depend on the policy.
pub fn run_monte_carlo_with(
    config: &SimulationConfig,
    runs: usize,
    policy: ExecPolicy,
    on_record: &(dyn Fn(usize, &TimeSeriesRecord) -> Result<()> + Sync),
) -> Result<MonteCarloReport> {
    if runs < 1 {
        return Err(Error::ConfigMismatch(
            "at least one Monte-Carlo run is required".into(),
        ));
    }
    config.validate()?;
    let (max_lag, qq) = (config.analysis.max_lag, config.analysis.num_quantiles);
    let one = |run: usize| -> Result<RunSummary> {
        let cfg = run_config(config, run);
        // agent sweeps stay sequential while runs are spread over threads
        let inner = if policy.is_parallel() && runs > 1 {
            ExecPolicy::Sequential
        } else {
            policy
        };
        let record = run_simulation_with(&cfg, inner)?;
        on_record(run, &record)?;
        let stats = StatsReport::compute(&record.returns()?, max_lag, qq)?;
        Ok(RunSummary {
            run,
            seed: cfg.seed,
            stats,
            metrics: run_metrics(&record)?,
        })
    };
    let results = map_indices(runs, policy, |run| one(run).map_err(|e| e.in_run(run)));
    let per_run = results.into_iter().collect::<Result<Vec<_>>>()?;
    let stats: Vec<StatsReport> = per_run.iter().map(|r| r.stats.clone()).collect();
    let mean = StatsReport::mean_of(&stats).expect("at least one run");
    let mut mean_metrics = BTreeMap::new();
    for key in per_run[0].metrics.keys() {
        let total: f64 = per_run.iter().map(|r| r.metrics[key]).sum();
        mean_metrics.insert(key.clone(), total / runs as f64);
    }
    Ok(MonteCarloReport {
        per_run,
        mean,
        mean_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    fn short(name: &str, steps: u64) -> SimulationConfig {
        let mut c = preset(name).unwrap();
        c.num_steps = steps;
        c
    }

    #[test]
    fn single_run_equals_its_stats() {
        let c = short("dca-hpm", 500);
        let report = run_monte_carlo(&c, 1).unwrap();
        assert_eq!(report.per_run[0].seed, c.seed);
        assert_eq!(report.mean, report.per_run[0].stats);
        assert_eq!(report.mean_metrics, report.per_run[0].metrics);
        let direct = run_simulation_with(&c, ExecPolicy::Sequential).unwrap();
        let stats = StatsReport::compute(&direct.returns().unwrap(), 20, 100).unwrap();
        assert_eq!(stats, report.mean);
    }

    #[test]
    fn seeds_shared_across_variants() {
        let a = run_monte_carlo(&short("dca-w", 200), 3).unwrap();
        let b = run_monte_carlo(&short("tpa-w", 200), 3).unwrap();
        let seeds = |r: &MonteCarloReport| r.per_run.iter().map(|s| s.seed).collect::<Vec<_>>();
        assert_eq!(seeds(&a), seeds(&b));
    }

    #[test]
    fn policy_does_not_change_report() {
        let c = short("cross-base", 500);
        let on = |_: usize, _: &TimeSeriesRecord| Ok(());
        let a = run_monte_carlo_with(&c, 4, ExecPolicy::Sequential, &on).unwrap();
        let b = run_monte_carlo_with(&c, 4, ExecPolicy::Parallel, &on).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_carry_run_index() {
        let mut c = short("sde-f1", 10_000);
        c.dt = 1.0;
        match run_monte_carlo(&c, 2) {
            Err(Error::Run { run, source }) => {
                assert_eq!(run, 0);
                assert!(matches!(*source, Error::NonPositivePrice { .. }));
            }
            other => panic!("expected a tagged error, got {other:?}"),
        }
    }

    #[test]
    fn metrics_present() {
        let r = run_monte_carlo(&short("dca-hpm", 300), 2).unwrap();
        assert!(r.mean_metrics.contains_key("chartist_share"));
        let r = run_monte_carlo(&short("lls-noisy", 150), 1).unwrap();
        assert!(r.mean_metrics.contains_key("boundary_fraction"));
        let r = run_monte_carlo(&short("cross-wealth", 300), 1).unwrap();
        assert!(r.mean_metrics.contains_key("wealth_kurtosis"));
    }
}
