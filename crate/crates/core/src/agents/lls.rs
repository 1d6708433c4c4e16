//! Levy-Levy-Solomon log-utility investors.
//!
//! Each investor splits its wealth between a bond paying `r` and a stock
//! paying a multiplicative dividend. The stock fraction `gamma` maximizes the
//! expected log wealth over the investor's return window and is then blurred
//! by truncated normal noise. The price is the fixed point of the market
//! clearance condition `sum_i gamma_i w_i(S) / S = n`; the fractions depend
//! only on past returns, the wealth on the trial price.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{Market, MarketState};
use crate::error::{Error, Result};
use crate::exec::{map_indices, pairwise_sum, ExecPolicy, PAR_MIN_AGENTS};
use crate::rng::{Component, NoiseSource, RngStream, StreamId};
use crate::solve::{brent_with_values, RootError};

pub const GAMMA_MIN: f64 = 0.01;
pub const GAMMA_MAX: f64 = 0.99;
/// Upper limit on the number of memory groups (one wealth column each).
pub const MAX_GROUPS: usize = 8;
const GROUP_WEALTH: [&str; MAX_GROUPS] = [
    "wealth_group1",
    "wealth_group2",
    "wealth_group3",
    "wealth_group4",
    "wealth_group5",
    "wealth_group6",
    "wealth_group7",
    "wealth_group8",
];

/// Relative clearance tolerance on `|g(S)| / n`.
pub const CLEARANCE_TOL: f64 = 1e-8;
const FOC_XTOL: f64 = 1e-10;
/// Bracket expansion factor and range around the previous price.
const BRACKET_FACTOR: f64 = 1.189_207_115_002_721; // 2^(1/4)
const BRACKET_STEPS: usize = 80; // 2^20

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlsGroup {
    /// Agents in the group; omitted counts split the population evenly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Look-back in time steps.
    pub memory: usize,
}

/// Price dividing the price change and dividend in the per-step return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnBase {
    /// `(S_k - S_{k-1} + dt D_k) / (dt S_{k-1})`: wealth is bond plus shares
    /// marked at the new price, and a clearing price always exists.
    #[default]
    PreviousPrice,
    /// `((S_k - S_{k-1}) / dt + D_k) / S_k`, see [`per_step_return`].
    CurrentPrice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlsParams {
    /// Bond rate.
    pub r: f64,
    pub z1: f64,
    pub z2: f64,
    pub sigma_gamma: f64,
    pub mu_h: f64,
    pub sigma_h: f64,
    /// Share supply; defaults to `n0` times the number of agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<f64>,
    /// Initial shares per agent.
    #[serde(default = "default_n0")]
    pub n0: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    #[serde(rename = "D0")]
    pub d0: f64,
    pub gamma0: f64,
    pub w0: f64,
    #[serde(default)]
    pub return_base: ReturnBase,
    pub groups: Vec<LlsGroup>,
}

fn default_n0() -> f64 {
    100.0
}

impl LlsParams {
    pub fn validate(&self, num_agents: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigMismatch(format!("lls: {msg}")));
        if self.z2 < self.z1 {
            return Err(Error::InvalidSupport {
                low: self.z1,
                high: self.z2,
            });
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return bad(format!("r = {} outside (0, 1)", self.r));
        }
        if !(self.sigma_gamma >= 0.0 && self.sigma_h >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if !(self.s0 > 0.0 && self.d0 > 0.0 && self.w0 > 0.0 && self.n0 >= 0.0) {
            return bad("S0, D0, w0 must be positive".into());
        }
        if !(GAMMA_MIN..=GAMMA_MAX).contains(&self.gamma0) {
            return bad(format!("gamma0 = {} outside [0.01, 0.99]", self.gamma0));
        }
        if let Some(n) = self.n_total {
            if !(n > 0.0) {
                return bad("n_total must be positive".into());
            }
        }
        if self.groups.is_empty() || self.groups.len() > MAX_GROUPS {
            return bad(format!("between 1 and {MAX_GROUPS} groups required"));
        }
        if self.groups.iter().any(|g| g.memory == 0) {
            return bad("memory must be at least 1".into());
        }
        self.group_sizes(num_agents).map(|_| ())
    }

    /// Agents per group, in group order.
    pub fn group_sizes(&self, num_agents: usize) -> Result<Vec<usize>> {
        let counts: Vec<Option<usize>> = self.groups.iter().map(|g| g.count).collect();
        if counts.iter().all(Option::is_some) {
            let sizes: Vec<usize> = counts.into_iter().flatten().collect();
            let total: usize = sizes.iter().sum();
            if total != num_agents {
                return Err(Error::ConfigMismatch(format!(
                    "lls: group counts sum to {total}, num_agents is {num_agents}"
                )));
            }
            Ok(sizes)
        } else if counts.iter().all(Option::is_none) {
            let g = self.groups.len();
            Ok((0..g)
                .map(|i| num_agents / g + usize::from(i < num_agents % g))
                .collect())
        } else {
            Err(Error::ConfigMismatch(
                "lls: give a count for every group or for none".into(),
            ))
        }
    }

    pub fn total_shares(&self, num_agents: usize) -> f64 {
        self.n_total.unwrap_or(self.n0 * num_agents as f64)
    }

    pub fn max_memory(&self) -> usize {
        self.groups.iter().map(|g| g.memory).max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlsAgent {
    /// Stock fraction of wealth.
    pub gamma: f64,
    pub wealth: f64,
    pub shares: f64,
    pub memory: usize,
}

/// `(1 + dt z) D` with `z ~ U(z1, z2)`.
pub fn dividend_step(
    d: f64,
    z1: f64,
    z2: f64,
    dt: f64,
    noise: &mut dyn NoiseSource,
) -> Result<f64> {
    if z2 < z1 {
        return Err(Error::InvalidSupport { low: z1, high: z2 });
    }
    let z = if z1 == z2 {
        z1
    } else {
        z1 + noise.uniform() * (z2 - z1)
    };
    Ok((1.0 + dt * z) * d)
}

/// Per-step stock return including the dividend yield, relative to the
/// current price.
pub fn per_step_return(s_now: f64, s_prev: f64, d_now: f64, dt: f64) -> f64 {
    ((s_now - s_prev) / dt + d_now) / s_now
}

pub fn step_return(base: ReturnBase, s_now: f64, s_prev: f64, d_now: f64, dt: f64) -> f64 {
    match base {
        ReturnBase::PreviousPrice => ((s_now - s_prev) / dt + d_now) / s_prev,
        ReturnBase::CurrentPrice => per_step_return(s_now, s_prev, d_now, dt),
    }
}

/// First-order condition of the expected log utility in `gamma`.
pub fn foc_value(gamma: f64, window: &[f64], r: f64, dt: f64) -> Result<f64> {
    let b = 1.0 + dt * r;
    let mut sum = 0.0;
    for &x in window {
        let a = dt * (x - r);
        let den = a * gamma + b;
        if den <= 0.0 {
            return Err(Error::SingularDenominator { gamma });
        }
        sum += a / den;
    }
    Ok(sum / window.len() as f64)
}

/// Expected log wealth per unit of current wealth.
pub fn expected_log_utility(gamma: f64, window: &[f64], r: f64, dt: f64) -> f64 {
    let b = 1.0 + dt * r;
    window
        .iter()
        .map(|&x| (dt * (x - r) * gamma + b).ln())
        .sum::<f64>()
        / window.len() as f64
}

/// FOC numerators `dt (x_j - r)` of a return window.
struct FocWindow<'a> {
    a: &'a [f64],
    b: f64,
}

impl FocWindow<'_> {
    fn sum_at(&self, gamma: f64) -> f64 {
        self.a.iter().map(|&a| a / (a * gamma + self.b)).sum()
    }

    /// Smallest `gamma` at which a denominator vanishes.
    fn cap(&self) -> f64 {
        self.a
            .iter()
            .filter(|&&a| a < 0.0)
            .map(|&a| -self.b / a)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Maximizer of the utility given the FOC sums at both boundaries and the
/// pole location. Returns `(gamma*, at_boundary)`.
fn solve_foc(win: &FocWindow<'_>, f_lo: f64, f_hi: f64, cap: f64) -> Result<(f64, bool)> {
    if cap <= GAMMA_MIN {
        return Err(Error::SingularDenominator { gamma: GAMMA_MIN });
    }
    if f_lo <= 0.0 {
        return Ok((GAMMA_MIN, true));
    }
    let hi = if cap > GAMMA_MAX {
        if f_hi >= 0.0 {
            return Ok((GAMMA_MAX, true));
        }
        GAMMA_MAX
    } else {
        GAMMA_MIN + (cap - GAMMA_MIN) * (1.0 - 1e-12)
    };
    let f = |g: f64| win.sum_at(g);
    let f_top = if hi == GAMMA_MAX { f_hi } else { f(hi) };
    if f_top >= 0.0 {
        return Ok((hi, hi == GAMMA_MAX));
    }
    match brent_with_values(f, (GAMMA_MIN, f_lo), (hi, f_top), FOC_XTOL, 0.0, 200) {
        Ok(root) => Ok((root.x, false)),
        Err(RootError::MaxIterations { x, .. }) => Ok((x, false)),
        Err(e) => Err(Error::SolverFailure {
            step: 0,
            reason: format!("utility maximization: {e:?}"),
        }),
    }
}

/// Optimal stock fraction in `[0.01, 0.99]` for a return window.
pub fn optimal_gamma(window: &[f64], r: f64, dt: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::InsufficientSample("empty return window".into()));
    }
    let a: Vec<f64> = window.iter().map(|&x| dt * (x - r)).collect();
    let win = FocWindow {
        a: &a,
        b: 1.0 + dt * r,
    };
    let cap = win.cap();
    if cap <= GAMMA_MIN {
        return Err(Error::SingularDenominator { gamma: GAMMA_MIN });
    }
    let f_lo = win.sum_at(GAMMA_MIN);
    let f_hi = if cap > GAMMA_MAX {
        win.sum_at(GAMMA_MAX)
    } else {
        f64::NEG_INFINITY
    };
    solve_foc(&win, f_lo, f_hi, cap).map(|(g, _)| g)
}

/// `gamma* + eps` with `eps ~ N(0, sigma^2)` redrawn until the sum lies in
/// `[0.01, 0.99]`.
pub fn blur_gamma(gamma_star: f64, sigma_gamma: f64, noise: &mut dyn NoiseSource) -> f64 {
    if sigma_gamma == 0.0 {
        return gamma_star;
    }
    loop {
        let g = gamma_star + sigma_gamma * noise.standard_normal();
        if (GAMMA_MIN..=GAMMA_MAX).contains(&g) {
            return g;
        }
    }
}

/// The same truncated normal law as [`blur_gamma`], driven by one uniform
/// `u` through the inverse CDF. Continuous in `gamma_star` for fixed `u`.
pub fn blur_gamma_with_uniform(gamma_star: f64, sigma_gamma: f64, u: f64) -> f64 {
    if sigma_gamma == 0.0 {
        return gamma_star;
    }
    let n = Normal::standard();
    let pa = n.cdf((GAMMA_MIN - gamma_star) / sigma_gamma);
    let pb = n.cdf((GAMMA_MAX - gamma_star) / sigma_gamma);
    let p = pa + u * (pb - pa);
    let z = if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        n.inverse_cdf(p)
    };
    (gamma_star + sigma_gamma * z).clamp(GAMMA_MIN, GAMMA_MAX)
}

/// Wealth after one step at the agent's current `gamma`; shares rebalanced to
/// the new wealth.
pub fn lls_wealth_update(
    agent: &LlsAgent,
    s_now: f64,
    s_prev: f64,
    d_now: f64,
    r: f64,
    dt: f64,
) -> LlsAgent {
    let x = per_step_return(s_now, s_prev, d_now, dt);
    let w = agent.wealth;
    let wealth = w + dt * ((1.0 - agent.gamma) * r * w + agent.gamma * w * x);
    LlsAgent {
        wealth,
        shares: agent.gamma * wealth / s_now,
        ..*agent
    }
}

/// Artificial return history of i.i.d. `N(mu_h, sigma_h^2)` draws.
pub fn init_history(
    mu_h: f64,
    sigma_h: f64,
    length: usize,
    noise: &mut dyn NoiseSource,
) -> Vec<f64> {
    (0..length)
        .map(|_| mu_h + sigma_h * noise.standard_normal())
        .collect()
}

/// Outcome of one clearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Clearance {
    pub price: f64,
    /// Return `x(S*)` entering the history.
    pub x: f64,
    /// Pre-noise optimum per group.
    pub gamma_star: Vec<f64>,
    pub at_boundary: Vec<bool>,
    /// Post-noise fractions per agent.
    pub gammas: Vec<f64>,
    /// `sum_i gamma_i w_i / S* - n`.
    pub residual: f64,
}

/// Inputs that stay fixed while the clearance price is searched.
pub struct ClearanceInput<'a> {
    pub agents: &'a [LlsAgent],
    /// One uniform per agent for the truncated normal noise.
    pub uniforms: &'a [f64],
    /// Past returns, oldest first.
    pub history: &'a [f64],
    pub r: f64,
    pub sigma_gamma: f64,
    pub n_total: f64,
    /// Dividend of the step being cleared.
    pub dividend: f64,
    pub s_prev: f64,
    pub dt: f64,
    pub return_base: ReturnBase,
    pub policy: ExecPolicy,
}

struct Clearing<'a> {
    input: &'a ClearanceInput<'a>,
    gamma_star: Vec<f64>,
    at_boundary: Vec<bool>,
    gammas: Vec<f64>,
    /// Hypothetical wealth `A_i + B_i x(S)`.
    coef_a: Vec<f64>,
    coef_b: Vec<f64>,
    /// `sum_i gamma_i A_i` and `sum_i gamma_i B_i`.
    sum_a: f64,
    sum_b: f64,
}

fn memory_runs(agents: &[LlsAgent]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=agents.len() {
        if i == agents.len() || agents[i].memory != agents[start].memory {
            runs.push(start..i);
            start = i;
        }
    }
    runs
}

/// Pre-noise optimum for the most recent `m` returns. Below the pole even
/// the minimum stake can lose everything, so the minimum is taken.
fn window_optimum(history: &[f64], m: usize, r: f64, dt: f64) -> Result<(f64, bool)> {
    if history.len() < m {
        return Err(Error::InsufficientSample(format!(
            "history of {} returns for memory {m}",
            history.len()
        )));
    }
    let a: Vec<f64> = history[history.len() - m..]
        .iter()
        .map(|&x| dt * (x - r))
        .collect();
    let win = FocWindow {
        a: &a,
        b: 1.0 + dt * r,
    };
    let cap = win.cap();
    if cap <= GAMMA_MIN {
        return Ok((GAMMA_MIN, true));
    }
    let f_lo = win.sum_at(GAMMA_MIN);
    let f_hi = if cap > GAMMA_MAX {
        win.sum_at(GAMMA_MAX)
    } else {
        f64::NEG_INFINITY
    };
    solve_foc(&win, f_lo, f_hi, cap)
}

impl<'a> Clearing<'a> {
    fn new(input: &'a ClearanceInput<'a>) -> Result<Self> {
        let ClearanceInput { agents, r, dt, .. } = *input;
        let coef_a: Vec<f64> = agents
            .iter()
            .map(|ag| ag.wealth * (1.0 + dt * (1.0 - ag.gamma) * r))
            .collect();
        let coef_b: Vec<f64> = agents.iter().map(|ag| dt * ag.gamma * ag.wealth).collect();
        let mut gamma_star = Vec::new();
        let mut at_boundary = Vec::new();
        let mut gammas = vec![0.0; agents.len()];
        for range in memory_runs(agents) {
            let (gs, edge) = window_optimum(input.history, agents[range.start].memory, r, dt)?;
            gamma_star.push(gs);
            at_boundary.push(edge);
            for i in range {
                gammas[i] = blur_gamma_with_uniform(gs, input.sigma_gamma, input.uniforms[i]);
            }
        }
        let policy = if agents.len() >= PAR_MIN_AGENTS {
            input.policy
        } else {
            ExecPolicy::Sequential
        };
        let ga: Vec<f64> = map_indices(agents.len(), policy, |i| gammas[i] * coef_a[i]);
        let gb: Vec<f64> = map_indices(agents.len(), policy, |i| gammas[i] * coef_b[i]);
        Ok(Clearing {
            input,
            gamma_star,
            at_boundary,
            sum_a: pairwise_sum(&ga, policy),
            sum_b: pairwise_sum(&gb, policy),
            gammas,
            coef_a,
            coef_b,
        })
    }

    fn x(&self, s: f64) -> f64 {
        step_return(
            self.input.return_base,
            s,
            self.input.s_prev,
            self.input.dividend,
            self.input.dt,
        )
    }

    /// `g(S) = sum_i gamma_i w_i(S) / S - n`.
    fn residual(&self, s: f64) -> f64 {
        (self.sum_a + self.sum_b * self.x(s)) / s - self.input.n_total
    }
}

fn solver_failure(reason: String) -> Error {
    Error::SolverFailure { step: 0, reason }
}

/// Solves the market clearance condition for the price of the current step.
pub fn clear_market(input: &ClearanceInput<'_>) -> Result<Clearance> {
    if input.agents.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let c = Clearing::new(input)?;
    let n = input.n_total;
    let s0 = input.s_prev;
    let g0 = c.residual(s0);
    if !g0.is_finite() {
        return Err(solver_failure(format!("residual not finite at S = {s0}")));
    }
    let price = if g0 == 0.0 {
        s0
    } else {
        let mut bracket = None;
        // excess demand pushes the price up, excess supply down
        let first = if g0 > 0.0 {
            BRACKET_FACTOR
        } else {
            1.0 / BRACKET_FACTOR
        };
        'dirs: for factor in [first, 1.0 / first] {
            let (mut s, mut g) = (s0, g0);
            for _ in 0..BRACKET_STEPS {
                let s_next = s * factor;
                let g_next = c.residual(s_next);
                if g_next.is_finite() && (g_next == 0.0 || g_next.signum() != g.signum()) {
                    bracket = Some(((s, g), (s_next, g_next)));
                    break 'dirs;
                }
                (s, g) = (s_next, g_next);
            }
        }
        let Some((lo, hi)) = bracket else {
            return Err(solver_failure(format!(
                "no sign change of the clearance residual in [{:e}, {:e}]",
                s0 * 2f64.powi(-20),
                s0 * 2f64.powi(20)
            )));
        };
        let xtol = 1e-15 * lo.0.min(hi.0);
        let ftol = 1e-4 * CLEARANCE_TOL * n;
        let root = match brent_with_values(|s| c.residual(s), lo, hi, xtol, ftol, 500) {
            Ok(root) => root,
            Err(RootError::MaxIterations { x, fx }) => crate::solve::Root {
                x,
                fx,
                iterations: 500,
            },
            Err(e) => return Err(solver_failure(format!("price search: {e:?}"))),
        };
        root.x
    };

    let x = c.x(price);
    let holdings: Vec<f64> = (0..c.gammas.len())
        .map(|i| c.gammas[i] * (c.coef_a[i] + c.coef_b[i] * x))
        .collect();
    let residual = pairwise_sum(&holdings, input.policy) / price - n;
    if !(residual.abs() <= CLEARANCE_TOL * n) {
        return Err(solver_failure(format!(
            "residual {residual:e} at S = {price} exceeds tolerance"
        )));
    }
    Ok(Clearance {
        price,
        x,
        gamma_star: c.gamma_star,
        at_boundary: c.at_boundary,
        gammas: c.gammas,
        residual,
    })
}

pub struct LlsMarket {
    params: LlsParams,
    dt: f64,
    n_total: f64,
    agents: Vec<LlsAgent>,
    groups: Vec<Range<usize>>,
    history: Vec<f64>,
    dividend: f64,
    price: f64,
    price_prev: f64,
    residual: f64,
    residual_prev: f64,
    boundary_fraction: f64,
    uniforms: Vec<f64>,
    step: u64,
    dividend_noise: Box<dyn NoiseSource>,
    gamma_noise: Box<dyn NoiseSource>,
    policy: ExecPolicy,
}

impl LlsMarket {
    pub fn new(
        params: LlsParams,
        num_agents: usize,
        dt: f64,
        seed: u64,
        dividend_noise: Box<dyn NoiseSource>,
        gamma_noise: Box<dyn NoiseSource>,
        policy: ExecPolicy,
    ) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::EmptyPopulation);
        }
        params.validate(num_agents)?;
        let sizes = params.group_sizes(num_agents)?;
        let mut agents = Vec::with_capacity(num_agents);
        let mut groups = Vec::with_capacity(sizes.len());
        for (g, &size) in params.groups.iter().zip(&sizes) {
            let start = agents.len();
            agents.extend((0..size).map(|_| LlsAgent {
                gamma: params.gamma0,
                wealth: params.w0,
                shares: params.n0,
                memory: g.memory,
            }));
            groups.push(start..agents.len());
        }
        let mut hist_rng = RngStream::new(seed, StreamId::new(Component::LlsHistory, 0));
        let history = init_history(
            params.mu_h,
            params.sigma_h,
            params.max_memory(),
            &mut hist_rng,
        );
        let n_total = params.total_shares(num_agents);
        let mut m = LlsMarket {
            dt,
            n_total,
            agents,
            groups,
            history,
            dividend: params.d0,
            price: params.s0,
            price_prev: params.s0,
            residual: 0.0,
            residual_prev: 0.0,
            boundary_fraction: f64::NAN,
            uniforms: vec![0.0; num_agents],
            step: 0,
            dividend_noise,
            gamma_noise,
            policy,
            params,
        };
        m.residual = m.holdings_residual();
        m.residual_prev = m.residual;
        Ok(m)
    }

    pub fn agents(&self) -> &[LlsAgent] {
        &self.agents
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn n_total(&self) -> f64 {
        self.n_total
    }

    fn holdings_residual(&self) -> f64 {
        let h: Vec<f64> = self.agents.iter().map(|a| a.gamma * a.wealth).collect();
        pairwise_sum(&h, self.policy) / self.price - self.n_total
    }
}

impl Market for LlsMarket {
    fn state(&self) -> MarketState {
        MarketState {
            price: self.price,
            price_prev: self.price_prev,
            log_price: self.price.ln(),
            excess_demand: self.residual,
            excess_demand_prev: self.residual_prev,
            step_index: self.step,
        }
    }

    fn extra_columns(&self) -> Vec<&'static str> {
        let mut cols = vec![
            "dividend",
            "mean_gamma",
            "gamma_min",
            "gamma_max",
            "boundary_fraction",
        ];
        cols.extend(&GROUP_WEALTH[..self.groups.len()]);
        cols
    }

    fn observe_extras(&self, out: &mut Vec<f64>) {
        let n = self.agents.len() as f64;
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for a in &self.agents {
            sum += a.gamma;
            lo = lo.min(a.gamma);
            hi = hi.max(a.gamma);
        }
        out.extend([self.dividend, sum / n, lo, hi, self.boundary_fraction]);
        for g in &self.groups {
            out.push(self.agents[g.clone()].iter().map(|a| a.wealth).sum());
        }
    }

    fn advance(&mut self) -> Result<()> {
        let k = self.step + 1;
        let p = &self.params;
        let dividend = dividend_step(
            self.dividend,
            p.z1,
            p.z2,
            self.dt,
            self.dividend_noise.as_mut(),
        )?;
        if p.sigma_gamma > 0.0 {
            for u in &mut self.uniforms {
                *u = self.gamma_noise.uniform();
            }
        }
        let input = ClearanceInput {
            agents: &self.agents,
            uniforms: &self.uniforms,
            history: &self.history,
            r: p.r,
            sigma_gamma: p.sigma_gamma,
            n_total: self.n_total,
            dividend,
            s_prev: self.price,
            dt: self.dt,
            return_base: p.return_base,
            policy: self.policy,
        };
        let cl = clear_market(&input).map_err(|e| e.at_step(k))?;
        if !(cl.price > 0.0 && cl.price.is_finite()) {
            return Err(Error::NonPositivePrice {
                step: k,
                price: cl.price,
            });
        }

        let (r, dt) = (p.r, self.dt);
        for (agent, &gamma) in self.agents.iter_mut().zip(&cl.gammas) {
            let w = agent.wealth;
            agent.wealth = w + dt * ((1.0 - agent.gamma) * r * w + agent.gamma * w * cl.x);
            agent.gamma = gamma;
            agent.shares = gamma * agent.wealth / cl.price;
        }
        let on_edge: usize = self
            .groups
            .iter()
            .zip(&cl.at_boundary)
            .filter(|(_, &b)| b)
            .map(|(g, _)| g.len())
            .sum();
        self.boundary_fraction = on_edge as f64 / self.agents.len() as f64;
        self.history.push(cl.x);
        self.dividend = dividend;
        self.price_prev = self.price;
        self.price = cl.price;
        self.residual_prev = self.residual;
        self.residual = self.holdings_residual();
        self.step = k;
        Ok(())
    }

    fn final_wealth(&self) -> Option<Vec<f64>> {
        Some(self.agents.iter().map(|a| a.wealth).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ZeroNoise;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basic(sigma_gamma: f64) -> LlsParams {
        LlsParams {
            r: 0.04,
            z1: 0.05,
            z2: 0.05,
            sigma_gamma,
            mu_h: 0.0415,
            sigma_h: 0.003,
            n_total: None,
            n0: 100.0,
            s0: 4.0,
            d0: 0.2,
            gamma0: 0.4,
            w0: 1000.0,
            return_base: ReturnBase::PreviousPrice,
            groups: vec![LlsGroup {
                count: None,
                memory: 15,
            }],
        }
    }

    fn stream(i: u64) -> RngStream {
        RngStream::new(99, StreamId::new(Component::User(1), i))
    }

    #[test]
    fn dividend_examples() {
        assert_abs_diff_eq!(
            dividend_step(0.2, 0.05, 0.05, 1.0, &mut ZeroNoise).unwrap(),
            0.21,
            epsilon = 1e-15
        );
        assert_eq!(
            dividend_step(0.37, 0.0, 0.0, 1.0, &mut ZeroNoise).unwrap(),
            0.37
        );
        assert_abs_diff_eq!(
            dividend_step(0.004, 1.5e-4, 1.5e-4, 1.0, &mut ZeroNoise).unwrap(),
            0.004_000_6,
            epsilon = 1e-17
        );
        assert!(matches!(
            dividend_step(1.0, 0.2, 0.1, 1.0, &mut ZeroNoise),
            Err(Error::InvalidSupport { .. })
        ));
        let mut rng = stream(0);
        for _ in 0..1000 {
            let d = dividend_step(1.0, -0.1, 0.3, 1.0, &mut rng).unwrap();
            assert!((0.9..=1.3).contains(&d));
        }
    }

    #[test]
    fn return_examples() {
        assert_abs_diff_eq!(per_step_return(4.0, 4.0, 0.2, 1.0), 0.05, epsilon = 1e-16);
        assert_eq!(per_step_return(3.0, 3.0, 0.0, 1.0), 0.0);
        assert_abs_diff_eq!(
            per_step_return(4.2, 4.0, 0.2, 1.0),
            0.4 / 4.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn foc_examples() {
        for g in [0.01, 0.3, 0.99] {
            assert_eq!(foc_value(g, &[0.04; 7], 0.04, 1.0).unwrap(), 0.0);
        }
        assert_eq!(foc_value(0.0, &[1.0], 0.0, 1.0).unwrap(), 1.0);
        for g in [0.01, 0.5, 0.99] {
            assert!(foc_value(g, &[-1.0], 0.0, 1.0).unwrap() < 0.0);
        }
        assert!(matches!(
            foc_value(1.0, &[-1.0], 0.0, 1.0),
            Err(Error::SingularDenominator { .. })
        ));
    }

    #[test]
    fn optimal_gamma_boundaries() {
        assert_eq!(
            optimal_gamma(&[0.01, 0.02, -0.05], 0.04, 1.0).unwrap(),
            GAMMA_MIN
        );
        assert_eq!(
            optimal_gamma(&[0.05, 0.06, 0.1], 0.04, 1.0).unwrap(),
            GAMMA_MAX
        );
    }

    fn grid_argmax(window: &[f64], r: f64, dt: f64) -> f64 {
        (0..=98_000)
            .map(|i| GAMMA_MIN + i as f64 * 1e-5)
            .map(|g| (g, expected_log_utility(g, window, r, dt)))
            .fold((0.0, f64::NEG_INFINITY), |best, c| {
                if c.1 > best.1 {
                    c
                } else {
                    best
                }
            })
            .0
    }

    #[test]
    fn optimal_gamma_two_term_root() {
        let w = [0.5, -0.4];
        let g = optimal_gamma(&w, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(g, 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(grid_argmax(&w, 0.0, 1.0), 0.25, epsilon = 2e-5);
    }

    #[test]
    fn optimal_gamma_matches_utility_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = rng.random_range(1..20);
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(-0.6..0.8)).collect();
            let g = optimal_gamma(&w, 0.04, 1.0).unwrap();
            assert_abs_diff_eq!(g, grid_argmax(&w, 0.04, 1.0), epsilon = 2e-5);
        }
    }

    #[test]
    fn optimal_gamma_below_pole() {
        // x = -2 puts the pole at gamma = 0.5; the optimum stays below it
        let w = [3.0, -2.0];
        let g = optimal_gamma(&w, 0.0, 1.0).unwrap();
        assert!(g > GAMMA_MIN && g < 0.5);
        assert!(foc_value(g, &w, 0.0, 1.0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn blur_examples() {
        let mut rng = stream(1);
        assert_eq!(blur_gamma(0.37, 0.0, &mut rng), 0.37);
        let n = 1_000_000;
        let mean = (0..n).map(|_| blur_gamma(0.5, 0.2, &mut rng)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-3);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| blur_gamma(0.99, 0.2, &mut rng))
            .collect();
        assert!(draws.iter().all(|&g| (GAMMA_MIN..=GAMMA_MAX).contains(&g)));
        assert!(draws.iter().sum::<f64>() / draws.len() as f64 <= 0.99);
    }

    #[test]
    fn inverse_cdf_blur_matches_rejection_law() {
        let mut rng = stream(2);
        for gs in [0.01, 0.3, 0.99] {
            let n = 200_000;
            let mut a: Vec<f64> = (0..n).map(|_| blur_gamma(gs, 0.2, &mut rng)).collect();
            let mut b: Vec<f64> = (0..n)
                .map(|_| blur_gamma_with_uniform(gs, 0.2, rng.uniform()))
                .collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for q in [0.05, 0.25, 0.5, 0.75, 0.95] {
                let i = (q * n as f64) as usize;
                assert_abs_diff_eq!(a[i], b[i], epsilon = 5e-3);
            }
        }
        assert_eq!(blur_gamma_with_uniform(0.5, 0.2, 0.5), 0.5);
        assert_eq!(blur_gamma_with_uniform(0.42, 0.0, 0.9), 0.42);
    }

    #[test]
    fn wealth_examples() {
        let agent = LlsAgent {
            gamma: 0.0,
            wealth: 1000.0,
            shares: 0.0,
            memory: 15,
        };
        assert_abs_diff_eq!(
            lls_wealth_update(&agent, 4.0, 4.0, 0.2, 0.04, 1.0).wealth,
            1040.0,
            epsilon = 1e-10
        );
        // x = r: indifferent to gamma
        for gamma in [0.01, 0.5, 0.99] {
            let a = LlsAgent { gamma, ..agent };
            let w = lls_wealth_update(&a, 4.0, 4.0, 0.16, 0.04, 1.0).wealth;
            assert_abs_diff_eq!(w, 1040.0, epsilon = 1e-10);
        }
        let a = LlsAgent {
            gamma: 1.0,
            ..agent
        };
        let up = lls_wealth_update(&a, 4.2, 4.0, 0.2, 0.04, 1.0);
        assert_abs_diff_eq!(up.wealth, 1000.0 * (1.0 + 0.4 / 4.2), epsilon = 1e-10);
        assert_abs_diff_eq!(up.shares, up.wealth / 4.2, epsilon = 1e-12);
    }

    #[test]
    fn history_examples() {
        assert_eq!(
            init_history(0.0415, 0.0, 5, &mut stream(3)),
            vec![0.0415; 5]
        );
        let h = init_history(0.0415, 0.003, 1_000_000, &mut stream(4));
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        assert_abs_diff_eq!(mean, 0.0415, epsilon = 1e-5);
    }

    #[test]
    fn table_history_starts_at_upper_boundary() {
        let h = init_history(0.0415, 0.003, 15, &mut stream(5));
        assert!(foc_value(GAMMA_MIN, &h, 0.04, 1.0).unwrap() > 0.0);
        assert!(foc_value(GAMMA_MAX, &h, 0.04, 1.0).unwrap() > 0.0);
        assert_eq!(optimal_gamma(&h, 0.04, 1.0).unwrap(), GAMMA_MAX);
    }

    #[test]
    fn initial_values_are_in_equilibrium() {
        let m = LlsMarket::new(
            basic(0.0),
            100,
            1.0,
            1,
            Box::new(ZeroNoise),
            Box::new(ZeroNoise),
            ExecPolicy::Sequential,
        )
        .unwrap();
        assert_eq!(m.n_total(), 10_000.0);
        assert_eq!(m.state().excess_demand, 0.0);
    }

    #[test]
    fn single_agent_closed_form() {
        let agents = [LlsAgent {
            gamma: 0.0,
            wealth: 1000.0,
            shares: 0.0,
            memory: 200,
        }];
        let history = vec![0.5; 200];
        let input = ClearanceInput {
            agents: &agents,
            uniforms: &[0.5],
            history: &history,
            r: 0.04,
            sigma_gamma: 0.0,
            n_total: 100.0,
            dividend: 0.2,
            s_prev: 4.0,
            dt: 1.0,
            return_base: ReturnBase::CurrentPrice,
            policy: ExecPolicy::Sequential,
        };
        let cl = clear_market(&input).unwrap();
        assert_eq!(cl.gamma_star, vec![GAMMA_MAX]);
        assert_abs_diff_eq!(cl.price, GAMMA_MAX * 1040.0 / 100.0, epsilon = 1e-9);
        assert!(cl.residual.abs() <= CLEARANCE_TOL * 100.0);
    }

    // Independent oracle: bisection on the FOC over the past window, direct
    // wealth formula.
    fn oracle_gammas(input: &ClearanceInput<'_>) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, ag) in input.agents.iter().enumerate() {
            let w = &input.history[input.history.len() - ag.memory..];
            let f = |g: f64| -> f64 {
                w.iter()
                    .map(|&xj| {
                        let a = input.dt * (xj - input.r);
                        a / (a * g + 1.0 + input.dt * input.r)
                    })
                    .sum()
            };
            let gs = if f(GAMMA_MIN) <= 0.0 {
                GAMMA_MIN
            } else if f(GAMMA_MAX) >= 0.0 {
                GAMMA_MAX
            } else {
                let (mut lo, mut hi) = (GAMMA_MIN, GAMMA_MAX);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        lo = mid
                    } else {
                        hi = mid
                    }
                }
                0.5 * (lo + hi)
            };
            out.push(blur_gamma_with_uniform(
                gs,
                input.sigma_gamma,
                input.uniforms[i],
            ));
        }
        out
    }

    fn oracle_residual(input: &ClearanceInput<'_>, gammas: &[f64], s: f64) -> f64 {
        let x = step_return(input.return_base, s, input.s_prev, input.dividend, input.dt);
        let mut total = 0.0;
        for (ag, &gamma) in input.agents.iter().zip(gammas) {
            let wealth = ag.wealth
                + input.dt * ((1.0 - ag.gamma) * input.r * ag.wealth + ag.gamma * ag.wealth * x);
            total += gamma * wealth;
        }
        total / s - input.n_total
    }

    #[test]
    fn clearance_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let memories = [2, 2, 3, 3, 5];
        let agents: Vec<LlsAgent> = memories
            .iter()
            .map(|&memory| LlsAgent {
                gamma: rng.random_range(0.1..0.9),
                wealth: rng.random_range(500.0..1500.0),
                shares: 0.0,
                memory,
            })
            .collect();
        let uniforms: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let history = [0.3, -0.2, 0.1, 0.06, -0.2, 0.3];
        // supply equals the shares held at the previous price
        let n_total: f64 = agents.iter().map(|a| a.gamma * a.wealth / 4.0).sum();
        for return_base in [ReturnBase::PreviousPrice, ReturnBase::CurrentPrice] {
            let input = ClearanceInput {
                agents: &agents,
                uniforms: &uniforms,
                history: &history,
                r: 0.04,
                sigma_gamma: 0.2,
                n_total,
                dividend: 0.2,
                s_prev: 4.0,
                dt: 1.0,
                return_base,
                policy: ExecPolicy::Sequential,
            };
            let cl = clear_market(&input).unwrap();
            assert!(cl.residual.abs() <= CLEARANCE_TOL * n_total);
            assert_eq!(cl.gamma_star[2], GAMMA_MIN);
            assert!(cl.gamma_star[..2]
                .iter()
                .all(|&g| g > GAMMA_MIN && g < GAMMA_MAX));
            let gammas = oracle_gammas(&input);
            assert_abs_diff_eq!(
                oracle_residual(&input, &gammas, cl.price),
                0.0,
                epsilon = 1e-6
            );

            let (lo, hi) = (0.5 * cl.price, 2.0 * cl.price);
            let n = 1_000_000;
            let h = (hi - lo) / n as f64;
            let mut prev = oracle_residual(&input, &gammas, lo);
            let mut crossings = Vec::new();
            for i in 1..=n {
                let s = lo + i as f64 * h;
                let g = oracle_residual(&input, &gammas, s);
                if g.signum() != prev.signum() {
                    crossings.push(s);
                }
                prev = g;
            }
            assert!(crossings.iter().any(|&s| (s - cl.price).abs() <= h));
        }
    }

    #[test]
    fn current_price_return_can_lack_equilibrium() {
        // a fully invested agent turns bearish: with the current-price return
        // the residual peaks below zero
        let agents = [LlsAgent {
            gamma: 0.99,
            wealth: 1000.0,
            shares: 247.5,
            memory: 3,
        }];
        let history = [-0.2, -0.1, 0.0];
        let mk = |return_base| ClearanceInput {
            agents: &agents,
            uniforms: &[0.5],
            history: &history,
            r: 0.04,
            sigma_gamma: 0.0,
            n_total: 247.5,
            dividend: 0.2,
            s_prev: 4.0,
            dt: 1.0,
            return_base,
            policy: ExecPolicy::Sequential,
        };
        let cl = clear_market(&mk(ReturnBase::PreviousPrice)).unwrap();
        assert_eq!(cl.gamma_star, vec![GAMMA_MIN]);
        assert!(matches!(
            clear_market(&mk(ReturnBase::CurrentPrice)),
            Err(Error::SolverFailure { .. })
        ));
    }

    #[test]
    fn deterministic_basic_run_stays_on_a_boundary() {
        let mut m = LlsMarket::new(
            basic(0.0),
            100,
            1.0,
            3,
            Box::new(ZeroNoise),
            Box::new(ZeroNoise),
            ExecPolicy::Sequential,
        )
        .unwrap();
        m.advance().unwrap();
        let g0 = m.agents()[0].gamma;
        assert!(g0 == GAMMA_MIN || g0 == GAMMA_MAX);
        for _ in 0..199 {
            m.advance().unwrap();
            assert!(m.agents().iter().all(|a| a.gamma == g0));
            assert!(m.state().excess_demand.abs() <= CLEARANCE_TOL * m.n_total());
        }
    }

    #[test]
    fn noisy_run_clears_every_step() {
        let mk = |policy| {
            LlsMarket::new(
                basic(0.2),
                100,
                1.0,
                8,
                Box::new(stream(10)),
                Box::new(stream(11)),
                policy,
            )
            .unwrap()
        };
        let mut a = mk(ExecPolicy::Sequential);
        let mut b = mk(ExecPolicy::Parallel);
        for _ in 0..200 {
            a.advance().unwrap();
            b.advance().unwrap();
            assert!(a.state().excess_demand.abs() <= CLEARANCE_TOL * a.n_total());
            assert!(a
                .agents()
                .iter()
                .all(|ag| ag.wealth > 0.0 && (GAMMA_MIN..=GAMMA_MAX).contains(&ag.gamma)));
            assert_eq!(a.state().price.to_bits(), b.state().price.to_bits());
        }
    }

    #[test]
    fn group_sizes_split_evenly() {
        let mut p = basic(0.2);
        p.groups = vec![
            LlsGroup {
                count: None,
                memory: 10,
            },
            LlsGroup {
                count: None,
                memory: 141,
            },
            LlsGroup {
                count: None,
                memory: 256,
            },
        ];
        assert_eq!(p.group_sizes(99).unwrap(), vec![33, 33, 33]);
        assert_eq!(p.group_sizes(100).unwrap(), vec![34, 33, 33]);
        p.groups[0].count = Some(5);
        assert!(p.group_sizes(99).is_err());
    }

    proptest! {
        #[test]
        fn foc_strictly_decreasing(window in proptest::collection::vec(-0.9f64..2.0, 1..40), g1 in 0.01f64..0.99, g2 in 0.01f64..0.99) {
            prop_assume!((g1 - g2).abs() > 1e-9);
            prop_assume!(window.iter().any(|&x| (x - 0.04).abs() > 1e-3));
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let fl = foc_value(lo, &window, 0.04, 1.0).unwrap();
            let fh = foc_value(hi, &window, 0.04, 1.0).unwrap();
            prop_assert!(fl > fh);
        }
    }
}
