//! Time-stepping loop shared by all model assemblies.
//!
//! One step of every [`Market`] runs in a fixed order: the population posts
//! its demand, the demands are aggregated into an excess demand, the price
//! rule moves the price, and the agents update their internal state from the
//! new price. The engine records the state before the first step and after
//! every step, so a run of `K` steps yields `K + 1` rows.

use crate::agents::cross::CrossMarket;
use crate::agents::fw::FwMarket;
use crate::agents::lls::LlsMarket;
use crate::config::{ModelKind, SimulationConfig};
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::rng::{NoiseSource, RngStream, StreamId};
use crate::stats::{log_returns, ReturnSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    /// Price `S(t_k)`; `exp(P)` for log-price models.
    pub price: f64,
    pub price_prev: f64,
    pub log_price: f64,
    pub excess_demand: f64,
    pub excess_demand_prev: f64,
    pub step_index: u64,
}

impl MarketState {
    pub fn initial(price: f64, log_price: f64, excess_demand: f64) -> Self {
        MarketState {
            price,
            price_prev: price,
            log_price,
            excess_demand,
            excess_demand_prev: excess_demand,
            step_index: 0,
        }
    }
}

/// An assembled population plus market mechanism.
pub trait Market: Send {
    fn state(&self) -> MarketState;

    /// Names of the model-specific observables, in [`Market::observe_extras`] order.
    fn extra_columns(&self) -> Vec<&'static str>;

    fn observe_extras(&self, out: &mut Vec<f64>);

    /// Advances one time step.
    fn advance(&mut self) -> Result<()>;

    /// Per-agent wealth at the current step, for populations that keep one.
    fn final_wealth(&self) -> Option<Vec<f64>> {
        None
    }
}

const BASE_COLUMNS: [&str; 5] = ["k", "time", "price", "log_price", "excess_demand"];

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub model: ModelKind,
    /// Cross-sectional wealth after the last step (Cross wealth ledger).
    pub final_wealth: Option<Vec<f64>>,
}

impl TimeSeriesRecord {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Per-step returns: log returns of `price`, or log-price differences
    /// for the Franke-Westerhoff model.
    pub fn returns(&self) -> Result<ReturnSeries> {
        let missing = |c: &str| Error::ConfigMismatch(format!("column `{c}` was not recorded"));
        if self.model == ModelKind::Fw {
            let lp = self
                .column("log_price")
                .ok_or_else(|| missing("log_price"))?;
            ReturnSeries::from_log_prices(&lp)
        } else {
            let p = self.column("price").ok_or_else(|| missing("price"))?;
            log_returns(&p)
        }
    }
}

/// Stepwise driver around an assembled [`Market`].
pub struct Simulation {
    market: Box<dyn Market>,
    config: SimulationConfig,
    keep: Vec<usize>,
    columns: Vec<String>,
}

impl Simulation {
    pub fn new(config: &SimulationConfig, policy: ExecPolicy) -> Result<Self> {
        let seed = config.seed;
        Self::with_noise(config, policy, &|id| Box::new(RngStream::new(seed, id)))
    }

    /// Assembles the model with the per-step shocks drawn from `noise`
    /// instead of the seeded streams. Initial populations still come from
    /// the configured seed.
    pub fn with_noise(
        config: &SimulationConfig,
        policy: ExecPolicy,
        noise: &dyn Fn(StreamId) -> Box<dyn NoiseSource>,
    ) -> Result<Self> {
        config.validate()?;
        let market = assemble(config, policy, noise)?;
        let all: Vec<&str> = BASE_COLUMNS
            .iter()
            .copied()
            .chain(market.extra_columns())
            .collect();
        let wanted = &config.recorder.observables;
        for w in wanted {
            if !all.contains(&w.as_str()) {
                return Err(Error::ConfigMismatch(format!(
                    "unknown observable `{w}` for model {:?}; available: {}",
                    config.model,
                    all.join(", ")
                )));
            }
        }
        let keep: Vec<usize> = (0..all.len())
            .filter(|&i| i < 2 || wanted.is_empty() || wanted.iter().any(|w| w == all[i]))
            .collect();
        let columns = keep.iter().map(|&i| all[i].to_string()).collect();
        Ok(Simulation {
            market,
            config: config.clone(),
            keep,
            columns,
        })
    }

    pub fn state(&self) -> MarketState {
        self.market.state()
    }

    pub fn step(&mut self) -> Result<()> {
        self.market.advance()
    }

    fn observe(&self, scratch: &mut Vec<f64>) -> Vec<f64> {
        let s = self.market.state();
        scratch.clear();
        scratch.extend([
            s.step_index as f64,
            s.step_index as f64 * self.config.dt,
            s.price,
            s.log_price,
            s.excess_demand,
        ]);
        self.market.observe_extras(scratch);
        self.keep.iter().map(|&i| scratch[i]).collect()
    }

    /// Runs the configured number of steps from the current state.
    pub fn run(mut self) -> Result<TimeSeriesRecord> {
        let steps = self.config.num_steps as usize;
        let mut scratch = Vec::new();
        let mut rows = Vec::with_capacity(steps + 1);
        rows.push(self.observe(&mut scratch));
        for _ in 0..steps {
            self.market.advance()?;
            rows.push(self.observe(&mut scratch));
        }
        Ok(TimeSeriesRecord {
            columns: self.columns,
            rows,
            model: self.config.model,
            final_wealth: self.market.final_wealth(),
        })
    }
}

fn assemble(
    config: &SimulationConfig,
    policy: ExecPolicy,
    noise: &dyn Fn(StreamId) -> Box<dyn NoiseSource>,
) -> Result<Box<dyn Market>> {
    use crate::rng::Component;
    let market: Box<dyn Market> = match config.model {
        ModelKind::Cross | ModelKind::CrossWealth | ModelKind::CrossSde => {
            let params = config.cross_params()?;
            let rule = config.price_rule()?;
            Box::new(CrossMarket::new(
                &params,
                rule,
                config.num_agents,
                config.seed,
                noise(StreamId::new(Component::CrossPrice, 0)),
                policy,
            )?)
        }
        ModelKind::Lls => Box::new(LlsMarket::new(
            config.lls_params()?,
            config.num_agents,
            config.dt,
            config.seed,
            noise(StreamId::new(Component::LlsDividend, 0)),
            noise(StreamId::new(Component::LlsNoise, 0)),
            policy,
        )?),
        ModelKind::Fw => {
            let (params, switching) = config.fw_params()?;
            Box::new(FwMarket::new(
                params,
                switching,
                noise(StreamId::new(Component::FwDemand, 0)),
            )?)
        }
    };
    Ok(market)
}

pub fn run_simulation(config: &SimulationConfig) -> Result<TimeSeriesRecord> {
    run_simulation_with(config, ExecPolicy::default())
}

pub fn run_simulation_with(
    config: &SimulationConfig,
    policy: ExecPolicy,
) -> Result<TimeSeriesRecord> {
    Simulation::new(config, policy)?.run()
}
