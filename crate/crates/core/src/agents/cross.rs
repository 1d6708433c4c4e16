//! Cross threshold agents: binary positions switched by inaction and herding
//! pressure, with an optional per-agent wealth ledger.

use serde::{Deserialize, Serialize};

use crate::engine::{Market, MarketState};
use crate::error::{Error, Result};
use crate::exec::{map_chunks_mut, map_indices, pairwise_sum, ExecPolicy};
use crate::mechanisms::PriceRule;
use crate::rng::{Component, NoiseSource, RngStream, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossParams {
    /// Inaction threshold support `[A1, A2]`.
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    /// Herding threshold support in time steps; scaled by `dt`.
    pub b1: f64,
    pub b2: f64,
    #[serde(rename = "S0", default = "one")]
    pub s0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wealth: Option<WealthParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WealthParams {
    /// Bond interest rate.
    pub r: f64,
    /// Fraction of wealth held in the stock.
    pub gamma: f64,
    #[serde(default = "one")]
    pub w0: f64,
}

fn one() -> f64 {
    1.0
}

impl CrossParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigMismatch(msg));
        if !(self.a1 > 0.0) || !(self.a2 >= self.a1) {
            return bad(format!(
                "cross: need 0 < A1 <= A2, got A1={} A2={}",
                self.a1, self.a2
            ));
        }
        if !(self.b1 > 0.0) || !(self.b2 >= self.b1) {
            return bad(format!(
                "cross: need 0 < b1 <= b2, got b1={} b2={}",
                self.b1, self.b2
            ));
        }
        if !(self.s0 > 0.0) {
            return bad(format!("cross: S0 must be positive, got {}", self.s0));
        }
        if let Some(w) = &self.wealth {
            if !(w.r >= 0.0) || !(0.0..=1.0).contains(&w.gamma) || !(w.w0 > 0.0) {
                return bad(format!(
                    "cross.wealth: need r >= 0, gamma in [0, 1], w0 > 0, got {w:?}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossAgent {
    /// Position, +1 long or -1 short.
    pub sigma: i8,
    /// Inaction threshold.
    pub alpha: f64,
    /// Herding threshold, in time units.
    pub beta: f64,
    /// Accumulated herding pressure, in time units.
    pub c: f64,
    /// Price at the last switch.
    pub m: f64,
    pub wealth: f64,
}

impl CrossAgent {
    /// Herding pressure grows by `dt |ED|` while the agent opposes the market.
    #[inline]
    pub fn accumulate_herding(&mut self, ed: f64, dt: f64) {
        if (self.sigma as f64) * ed < 0.0 {
            self.c += dt * ed.abs();
        }
    }

    #[inline]
    pub fn in_inaction_band(&self, price: f64) -> bool {
        let width = 1.0 + self.alpha;
        price >= self.m / width && price <= self.m * width
    }

    /// Flips the position when herding pressure exceeds the threshold or the
    /// price leaves the inaction band. Returns whether a switch happened.
    #[inline]
    pub fn maybe_switch(&mut self, price: f64) -> bool {
        if self.c > self.beta || !self.in_inaction_band(price) {
            self.sigma = -self.sigma;
            self.c = 0.0;
            self.m = price;
            true
        } else {
            false
        }
    }

    /// One step of the wealth ledger. The stock share earns
    /// `(S_now - S_prev) / S_now` with the sign of the agent's position.
    #[inline]
    pub fn update_wealth(&mut self, s_now: f64, s_prev: f64, params: &WealthParams, dt: f64) {
        let stock_return = (s_now - s_prev) / (dt * s_now);
        let rate =
            (1.0 - params.gamma) * params.r + params.gamma * self.sigma as f64 * stock_return;
        self.wealth += dt * rate * self.wealth;
    }
}

/// `(1/N) sum sigma_i`.
pub fn cross_excess_demand(agents: &[CrossAgent]) -> Result<f64> {
    if agents.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let total: i64 = agents.iter().map(|a| a.sigma as i64).sum();
    Ok(total as f64 / agents.len() as f64)
}

/// Draws the population from per-agent streams: `alpha ~ U(A1, A2)`,
/// `beta, c ~ U(b1 dt, b2 dt)`, `sigma ~ U{-1, +1}`, `m = price0`.
pub fn init_cross_population(
    params: &CrossParams,
    n: usize,
    price0: f64,
    dt: f64,
    seed: u64,
    policy: ExecPolicy,
) -> Result<Vec<CrossAgent>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let (big_b1, big_b2) = (params.b1 * dt, params.b2 * dt);
    let w0 = params.wealth.map_or(1.0, |w| w.w0);
    let agents = map_indices(n, policy, |i| {
        let mut rng = RngStream::new(seed, StreamId::new(Component::CrossInit, i as u64));
        let alpha = rng.uniform_in(params.a1, params.a2);
        let beta = rng.uniform_in(big_b1, big_b2);
        let c = rng.uniform_in(big_b1, big_b2);
        let sigma = rng.sign();
        CrossAgent {
            sigma,
            alpha,
            beta,
            c,
            m: price0,
            wealth: w0,
        }
    });
    Ok(agents)
}

/// Cross agents coupled to an excess-demand driven price rule.
pub struct CrossMarket {
    agents: Vec<CrossAgent>,
    rule: PriceRule,
    wealth: Option<WealthParams>,
    state: MarketState,
    noise: Box<dyn NoiseSource>,
    policy: ExecPolicy,
}

impl CrossMarket {
    pub fn new(
        params: &CrossParams,
        rule: PriceRule,
        num_agents: usize,
        seed: u64,
        noise: Box<dyn NoiseSource>,
        policy: ExecPolicy,
    ) -> Result<Self> {
        let agents = init_cross_population(params, num_agents, params.s0, rule.dt, seed, policy)?;
        Self::from_agents(agents, params.s0, rule, params.wealth, noise, policy)
    }

    pub fn from_agents(
        agents: Vec<CrossAgent>,
        price0: f64,
        rule: PriceRule,
        wealth: Option<WealthParams>,
        noise: Box<dyn NoiseSource>,
        policy: ExecPolicy,
    ) -> Result<Self> {
        let ed = cross_excess_demand(&agents)?;
        Ok(CrossMarket {
            agents,
            rule,
            wealth,
            // dED(t_0) = 0
            state: MarketState::initial(price0, price0.ln(), ed),
            noise,
            policy,
        })
    }

    pub fn agents(&self) -> &[CrossAgent] {
        &self.agents
    }

    fn wealth_moments(&self) -> (f64, f64) {
        let w: Vec<f64> = self.agents.iter().map(|a| a.wealth).collect();
        let n = w.len() as f64;
        let mean = pairwise_sum(&w, self.policy) / n;
        let sq: Vec<f64> = w.iter().map(|x| (x - mean) * (x - mean)).collect();
        (mean, (pairwise_sum(&sq, self.policy) / n).sqrt())
    }
}

impl Market for CrossMarket {
    fn state(&self) -> MarketState {
        self.state
    }

    fn extra_columns(&self) -> Vec<&'static str> {
        if self.wealth.is_some() {
            vec!["wealth_mean", "wealth_std"]
        } else {
            Vec::new()
        }
    }

    fn observe_extras(&self, out: &mut Vec<f64>) {
        if self.wealth.is_some() {
            let (mean, std) = self.wealth_moments();
            out.push(mean);
            out.push(std);
        }
    }

    fn advance(&mut self) -> Result<()> {
        let s = self.state;
        let step = s.step_index + 1;
        let d_ed = s.excess_demand - s.excess_demand_prev;
        let eta = self.noise.standard_normal();
        let price = self
            .rule
            .next_price(s.price, s.excess_demand, d_ed, eta)
            .map_err(|e| e.at_step(step))?;

        let (ed, dt, wealth, prev) = (s.excess_demand, self.rule.dt, self.wealth, s.price);
        let sums = map_chunks_mut(&mut self.agents, self.policy, |chunk| {
            let mut total = 0i64;
            for agent in chunk {
                if let Some(w) = &wealth {
                    agent.update_wealth(price, prev, w, dt);
                }
                agent.accumulate_herding(ed, dt);
                agent.maybe_switch(price);
                total += agent.sigma as i64;
            }
            total
        });
        let total: i64 = sums.into_iter().sum();

        self.state = MarketState {
            price,
            price_prev: s.price,
            log_price: price.ln(),
            excess_demand: total as f64 / self.agents.len() as f64,
            excess_demand_prev: s.excess_demand,
            step_index: step,
        };
        Ok(())
    }

    fn final_wealth(&self) -> Option<Vec<f64>> {
        self.wealth
            .map(|_| self.agents.iter().map(|a| a.wealth).collect())
    }
}
