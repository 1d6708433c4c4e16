//! Franke-Westerhoff chartist/fundamentalist model with structural
//! stochastic volatility.
//!
//! Two representative agents trade on the log price `P`. Their population
//! shares follow either the discrete choice approach (logistic in the
//! attractiveness index `a`) or the transition probability approach (bounded
//! switching flows). The index combines wealth comparison (W), herding (H),
//! predisposition (P) and misalignment (M).

use serde::{Deserialize, Serialize};

use crate::engine::{Market, MarketState};
use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// How the tabulated `sigma_f`, `sigma_c` map to the demand noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStd {
    /// Standard deviation `sigma^2`, the convention of the contest tables.
    #[default]
    SigmaSquared,
    /// Standard deviation `sigma`.
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwParams {
    /// Fundamentalist reaction to mispricing.
    pub phi: f64,
    /// Chartist reaction to the last price change.
    pub chi: f64,
    pub sigma_f: f64,
    pub sigma_c: f64,
    #[serde(default, skip_serializing_if = "is_default_std")]
    pub noise_std: NoiseStd,
    pub alpha_w: f64,
    pub alpha_0: f64,
    pub alpha_h: f64,
    pub alpha_m: f64,
    /// Intensity of choice (DCA only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Flexibility (TPA only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Memory of the hypothetical wealth, in `[0, 1]`.
    pub eta_memory: f64,
    /// Price impact of excess demand.
    pub mu: f64,
    /// Fundamental log price.
    #[serde(rename = "P_f")]
    pub p_f: f64,
    #[serde(rename = "P0")]
    pub p0: f64,
    /// Seed listed with the original parameter table; kept for reference only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_seed: Option<u64>,
}

fn is_default_std(n: &NoiseStd) -> bool {
    *n == NoiseStd::default()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Switching {
    Dca { beta: f64 },
    Tpa { nu: f64 },
}

impl FwParams {
    /// Standard deviations of `(eps_f, eps_c)`.
    pub fn noise_std_devs(&self) -> (f64, f64) {
        match self.noise_std {
            NoiseStd::SigmaSquared => (self.sigma_f * self.sigma_f, self.sigma_c * self.sigma_c),
            NoiseStd::Sigma => (self.sigma_f, self.sigma_c),
        }
    }

    pub fn validate(&self, switching: Switching) -> Result<()> {
        let bad = |msg: &str| Err(Error::ConfigMismatch(format!("fw: {msg}")));
        if !(self.phi > 0.0 && self.chi > 0.0) {
            return bad("phi and chi must be positive");
        }
        if !(self.sigma_f >= 0.0 && self.sigma_c >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if !(self.alpha_w >= 0.0 && self.alpha_h >= 0.0 && self.alpha_m >= 0.0) {
            return bad("alpha_w, alpha_h, alpha_m must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.eta_memory) {
            return bad("eta_memory must lie in [0, 1]");
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        match switching {
            Switching::Dca { beta } if !(beta > 0.0) => bad("beta must be positive"),
            Switching::Tpa { nu } if !(nu > 0.0) => bad("nu must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwState {
    /// Log price `P(t_k)`.
    pub p: f64,
    pub p_prev: f64,
    pub n_f: f64,
    pub n_c: f64,
    pub w_f: f64,
    pub w_c: f64,
    /// Fundamentalist demands `[d(t_{k}), d(t_{k-1})]`.
    pub d_f_hist: [f64; 2],
    pub d_c_hist: [f64; 2],
    /// Attractiveness of the fundamental strategy.
    pub a: f64,
    pub ed: f64,
}

impl FwState {
    /// Equal shares, zero wealth, zero demand history, `P(-1) = P(0) = p0`.
    pub fn initial(params: &FwParams) -> Self {
        let mut s = FwState {
            p: params.p0,
            p_prev: params.p0,
            n_f: 0.5,
            n_c: 0.5,
            w_f: 0.0,
            w_c: 0.0,
            d_f_hist: [0.0; 2],
            d_c_hist: [0.0; 2],
            a: 0.0,
            ed: 0.0,
        };
        s.a = attractiveness(&s, params);
        s
    }
}

/// Deterministic demand parts plus `(eps_f, eps_c)`.
pub fn fw_demands_with(state: &FwState, params: &FwParams, eps: (f64, f64)) -> (f64, f64) {
    let d_f = params.phi * (params.p_f - state.p) + eps.0;
    let d_c = params.chi * (state.p - state.p_prev) + eps.1;
    (d_f, d_c)
}

pub fn fw_demands(state: &FwState, params: &FwParams, noise: &mut dyn NoiseSource) -> (f64, f64) {
    let (sd_f, sd_c) = params.noise_std_devs();
    let eps_f = sd_f * noise.standard_normal();
    let eps_c = sd_c * noise.standard_normal();
    fw_demands_with(state, params, (eps_f, eps_c))
}

/// `(1/2)(2 n_f d_f + 2 n_c d_c)`.
pub fn fw_excess_demand(state: &FwState, d_f: f64, d_c: f64) -> f64 {
    state.n_f * d_f + state.n_c * d_c
}

pub fn fw_price_update(state: &FwState, params: &FwParams, ed_prev: f64) -> f64 {
    state.p + params.mu * ed_prev
}

pub fn attractiveness(state: &FwState, params: &FwParams) -> f64 {
    let mis = state.p - params.p_f;
    params.alpha_w * (state.w_f - state.w_c)
        + params.alpha_0
        + params.alpha_h * (state.n_f - state.n_c)
        + params.alpha_m * mis * mis
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// The larger share is computed directly and the smaller as its complement,
// which is exact for values >= 1/2, so the shares sum to exactly one.
fn complete(n_f: f64, n_c: f64) -> (f64, f64) {
    if n_f >= n_c {
        let n_f = n_f.clamp(0.0, 1.0);
        (n_f, 1.0 - n_f)
    } else {
        let n_c = n_c.clamp(0.0, 1.0);
        (1.0 - n_c, n_c)
    }
}

/// Discrete choice shares from the previous attractiveness.
pub fn dca_fractions(a_prev: f64, beta: f64) -> (f64, f64) {
    complete(logistic(beta * a_prev), logistic(-beta * a_prev))
}

/// Transition probability update of the previous shares.
pub fn tpa_fractions(state: &FwState, a_prev: f64, nu: f64) -> (f64, f64) {
    let to_f = (nu * a_prev.exp()).min(1.0);
    let to_c = (nu * (-a_prev).exp()).min(1.0);
    let n_f = state.n_f + state.n_c * to_f - state.n_f * to_c;
    let n_c = state.n_c + state.n_f * to_c - state.n_c * to_f;
    complete(n_f, n_c)
}

/// Hypothetical wealth from the price change at `t_k` and the demands of
/// `t_{k-2}`.
pub fn fw_wealth_update(
    state: &FwState,
    params: &FwParams,
    d_f_lag2: f64,
    d_c_lag2: f64,
) -> (f64, f64) {
    let m = params.eta_memory;
    let dp = state.p.exp() - state.p_prev.exp();
    (
        m * state.w_f + (1.0 - m) * dp * d_f_lag2,
        m * state.w_c + (1.0 - m) * dp * d_c_lag2,
    )
}

pub struct FwMarket {
    params: FwParams,
    switching: Switching,
    state: FwState,
    step: u64,
    noise: Box<dyn NoiseSource>,
}

impl FwMarket {
    pub fn new(
        params: FwParams,
        switching: Switching,
        noise: Box<dyn NoiseSource>,
    ) -> Result<Self> {
        params.validate(switching)?;
        Ok(FwMarket {
            state: FwState::initial(&params),
            params,
            switching,
            step: 0,
            noise,
        })
    }

    pub fn fw_state(&self) -> &FwState {
        &self.state
    }
}

impl Market for FwMarket {
    fn state(&self) -> MarketState {
        let s = &self.state;
        MarketState {
            price: s.p.exp(),
            price_prev: s.p_prev.exp(),
            log_price: s.p,
            excess_demand: s.ed,
            excess_demand_prev: 0.0,
            step_index: self.step,
        }
    }

    fn extra_columns(&self) -> Vec<&'static str> {
        vec!["chartist_share", "attractiveness", "wealth_diff"]
    }

    fn observe_extras(&self, out: &mut Vec<f64>) {
        out.extend([
            self.state.n_c,
            self.state.a,
            self.state.w_f - self.state.w_c,
        ]);
    }

    fn advance(&mut self) -> Result<()> {
        let prev = self.state;
        let mut s = prev;
        s.p_prev = prev.p;
        s.p = fw_price_update(&prev, &self.params, prev.ed);
        if !s.p.is_finite() {
            return Err(Error::NonPositivePrice {
                step: self.step + 1,
                price: s.p.exp(),
            });
        }
        (s.w_f, s.w_c) = fw_wealth_update(&s, &self.params, prev.d_f_hist[1], prev.d_c_hist[1]);
        (s.n_f, s.n_c) = match self.switching {
            Switching::Dca { beta } => dca_fractions(prev.a, beta),
            Switching::Tpa { nu } => tpa_fractions(&prev, prev.a, nu),
        };
        let (d_f, d_c) = fw_demands(&s, &self.params, self.noise.as_mut());
        s.d_f_hist = [d_f, prev.d_f_hist[0]];
        s.d_c_hist = [d_c, prev.d_c_hist[0]];
        s.ed = fw_excess_demand(&s, d_f, d_c);
        s.a = attractiveness(&s, &self.params);
        self.state = s;
        self.step += 1;
        Ok(())
    }
}
