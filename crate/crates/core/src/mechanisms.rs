//! Price-adjustment processes for populations that post an excess demand.
//!
//! The Franke-Westerhoff linear log-price rule lives with its agents in
//! [`crate::agents::fw`] and the LLS clearance in [`crate::agents::lls`]; both
//! are listed in [`PriceRuleKind`] so a configuration can name them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceRuleKind {
    /// `S exp((1 + theta|ED|) sqrt(dt) eta + kappa dED)`
    CrossExp,
    /// Euler–Maruyama step with drift `S dED/dt`.
    SdeEulerF1,
    /// Euler–Maruyama step with drift `S ED`.
    SdeEulerF2,
    FwLinear,
    LlsClearance,
}

impl PriceRuleKind {
    pub fn is_sde(self) -> bool {
        matches!(self, PriceRuleKind::SdeEulerF1 | PriceRuleKind::SdeEulerF2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceRule {
    pub kind: PriceRuleKind,
    /// Market depth.
    pub kappa: f64,
    /// Coupling of the noise amplitude to `|ED|`.
    pub theta: f64,
    pub dt: f64,
    /// SDE rules only: `S + kappa dED S + sqrt(dt) F S eta` instead of the
    /// drift/diffusion split.
    pub appendix_form: bool,
    /// F1 only: scale the drift `S dED/dt` by `kappa`.
    pub kappa_in_drift: bool,
}

impl PriceRule {
    pub fn cross_exp(kappa: f64, theta: f64, dt: f64) -> Self {
        PriceRule {
            kind: PriceRuleKind::CrossExp,
            kappa,
            theta,
            dt,
            appendix_form: false,
            kappa_in_drift: false,
        }
    }

    pub fn sde(kind: PriceRuleKind, theta: f64, dt: f64) -> Self {
        debug_assert!(kind.is_sde());
        PriceRule {
            kind,
            kappa: 0.0,
            theta,
            dt,
            appendix_form: false,
            kappa_in_drift: false,
        }
    }

    /// Next price from the current price, `ED(t_k)`, `ED(t_k) - ED(t_{k-1})`
    /// and one standard normal draw `eta`.
    pub fn next_price(&self, price: f64, ed: f64, d_ed: f64, eta: f64) -> Result<f64> {
        let next = match self.kind {
            PriceRuleKind::CrossExp => cross_exp_price(price, ed, d_ed, self, eta),
            PriceRuleKind::SdeEulerF1 | PriceRuleKind::SdeEulerF2 => {
                sde_euler_price(price, ed, d_ed, self, eta)?
            }
            other => {
                return Err(Error::ConfigMismatch(format!(
                    "price rule {other:?} does not act on an excess-demand population"
                )))
            }
        };
        if next > 0.0 && next.is_finite() {
            Ok(next)
        } else {
            Err(Error::NonPositivePrice {
                step: 0,
                price: next,
            })
        }
    }
}

pub fn cross_exp_price(price: f64, ed: f64, d_ed: f64, rule: &PriceRule, eta: f64) -> f64 {
    let diffusion = (1.0 + rule.theta * ed.abs()) * rule.dt.sqrt() * eta;
    // kappa * dt * (dED / dt)
    price * (diffusion + rule.kappa * d_ed).exp()
}

/// Drift operator `F(S, ED)` of the SDE rules.
pub fn sde_drift(kind: PriceRuleKind, price: f64, ed: f64, d_ed: f64, dt: f64) -> f64 {
    match kind {
        PriceRuleKind::SdeEulerF1 => price * d_ed / dt,
        PriceRuleKind::SdeEulerF2 => price * ed,
        _ => 0.0,
    }
}

pub fn sde_euler_price(price: f64, ed: f64, d_ed: f64, rule: &PriceRule, eta: f64) -> Result<f64> {
    let dt = rule.dt;
    let mut drift = sde_drift(rule.kind, price, ed, d_ed, dt);
    if rule.kappa_in_drift && rule.kind == PriceRuleKind::SdeEulerF1 {
        drift *= rule.kappa;
    }
    let next = if rule.appendix_form {
        price + rule.kappa * d_ed * price + dt.sqrt() * drift * price * eta
    } else {
        price + dt * drift + dt.sqrt() * price * (1.0 + rule.theta * ed.abs()) * eta
    };
    if next > 0.0 {
        Ok(next)
    } else {
        Err(Error::NonPositivePrice {
            step: 0,
            price: next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const DT: f64 = 4e-5;

    #[test]
    fn cross_exp_identity_without_shocks() {
        let rule = PriceRule::cross_exp(0.2, 0.0, DT);
        assert_eq!(cross_exp_price(1.7, 0.4, 0.0, &rule, 0.0), 1.7);
    }

    #[test]
    fn cross_exp_market_depth() {
        let rule = PriceRule::cross_exp(0.2, 0.0, DT);
        assert_abs_diff_eq!(
            cross_exp_price(1.0, 0.3, 0.1, &rule, 0.0),
            0.02f64.exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(0.02f64.exp(), 1.020_201_340_026_756, epsilon = 1e-15);
    }

    #[test]
    fn cross_exp_noise_amplitude() {
        // theta = 2, |ED| = 1: per-step log std is 3 sqrt(dt)
        let rule = PriceRule::cross_exp(0.0, 2.0, DT);
        let log_step = cross_exp_price(1.0, -1.0, 0.0, &rule, 1.0).ln();
        assert_abs_diff_eq!(log_step, 0.018_973_665_961_010_276, epsilon = 1e-15);
    }

    #[test]
    fn cross_exp_stays_positive() {
        let rule = PriceRule::cross_exp(0.2, 2.0, DT);
        for eta in [-40.0, -5.0, 0.0, 5.0] {
            assert!(cross_exp_price(1e-3, 1.0, -2.0, &rule, eta) > 0.0);
        }
    }

    #[test]
    fn sde_identity_without_shocks() {
        for kind in [PriceRuleKind::SdeEulerF1, PriceRuleKind::SdeEulerF2] {
            let rule = PriceRule::sde(kind, 2.0, DT);
            assert_eq!(sde_euler_price(2.5, 0.0, 0.0, &rule, 0.0).unwrap(), 2.5);
        }
    }

    #[test]
    fn sde_f2_drift() {
        let rule = PriceRule::sde(PriceRuleKind::SdeEulerF2, 0.0, DT);
        assert_abs_diff_eq!(
            sde_euler_price(1.0, 0.2, 0.0, &rule, 0.0).unwrap(),
            1.000_008,
            epsilon = 1e-15
        );
    }

    #[test]
    fn sde_f1_drift() {
        let rule = PriceRule::sde(PriceRuleKind::SdeEulerF1, 0.0, DT);
        assert_abs_diff_eq!(
            sde_euler_price(1.0, 0.5, 0.1, &rule, 0.0).unwrap(),
            1.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sde_f1_drift_scaled_by_kappa() {
        let mut rule = PriceRule::sde(PriceRuleKind::SdeEulerF1, 0.0, DT);
        rule.kappa = 0.2;
        rule.kappa_in_drift = true;
        assert_abs_diff_eq!(
            sde_euler_price(1.0, 0.5, 0.1, &rule, 0.0).unwrap(),
            1.02,
            epsilon = 1e-12
        );
        // a full-population cascade keeps the price positive
        assert!(sde_euler_price(1.0, 0.0, -2.0, &rule, 0.0).unwrap() > 0.0);
    }

    #[test]
    fn sde_negative_price_aborts() {
        let rule = PriceRule::sde(PriceRuleKind::SdeEulerF1, 0.0, DT);
        assert!(matches!(
            sde_euler_price(1.0, 0.0, -1.5, &rule, 0.0),
            Err(Error::NonPositivePrice { .. })
        ));
    }

    #[test]
    fn appendix_form_uses_kappa_drift() {
        let mut rule = PriceRule::sde(PriceRuleKind::SdeEulerF2, 0.0, DT);
        rule.appendix_form = true;
        rule.kappa = 0.2;
        // no shock: S (1 + kappa dED)
        assert_abs_diff_eq!(
            sde_euler_price(1.0, 0.5, 0.1, &rule, 0.0).unwrap(),
            1.02,
            epsilon = 1e-15
        );
        // shock scaled by F2 = S ED
        let with_shock = sde_euler_price(1.0, 0.5, 0.0, &rule, 1.0).unwrap();
        assert_abs_diff_eq!(with_shock, 1.0 + DT.sqrt() * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn foreign_rule_rejected() {
        let mut rule = PriceRule::cross_exp(0.2, 0.0, DT);
        rule.kind = PriceRuleKind::FwLinear;
        assert!(matches!(
            rule.next_price(1.0, 0.0, 0.0, 0.0),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
