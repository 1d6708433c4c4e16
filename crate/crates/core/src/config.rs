//! Declarative run description and its TOML form.

use serde::{Deserialize, Serialize};

use crate::agents::cross::CrossParams;
use crate::agents::fw::{FwParams, Switching};
use crate::agents::lls::LlsParams;
use crate::error::{Error, Result};
use crate::mechanisms::{PriceRule, PriceRuleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cross,
    CrossWealth,
    CrossSde,
    Lls,
    Fw,
}

impl ModelKind {
    pub fn is_cross(self) -> bool {
        matches!(
            self,
            ModelKind::Cross | ModelKind::CrossWealth | ModelKind::CrossSde
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub kind: PriceRuleKind,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub appendix_form: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub kappa_in_drift: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecorderSpec {
    /// Columns to keep besides `k` and `time`; empty keeps all.
    #[serde(default)]
    pub observables: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default = "default_quantiles")]
    pub num_quantiles: usize,
}

fn default_max_lag() -> usize {
    20
}

fn default_quantiles() -> usize {
    100
}

fn default_runs() -> usize {
    1
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            max_lag: default_max_lag(),
            num_quantiles: default_quantiles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: ModelKind,
    pub num_agents: usize,
    pub num_steps: u64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub monte_carlo_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<CrossParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lls: Option<LlsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fw_dca: Option<FwParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fw_tpa: Option<FwParams>,
    #[serde(default)]
    pub recorder: RecorderSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::ConfigMismatch(msg.into())
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps < 1 {
            return Err(mismatch("num_steps must be at least 1"));
        }
        if self.num_agents < 1 {
            return Err(mismatch("num_agents must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(mismatch(format!("dt must be positive, got {}", self.dt)));
        }
        if self.monte_carlo_runs < 1 {
            return Err(mismatch("monte_carlo_runs must be at least 1"));
        }
        let kind = self.model;
        let present = [
            ("cross", self.cross.is_some(), kind.is_cross()),
            ("lls", self.lls.is_some(), kind == ModelKind::Lls),
            ("fw_dca", self.fw_dca.is_some(), false),
            ("fw_tpa", self.fw_tpa.is_some(), false),
        ];
        for (block, is_set, allowed) in present {
            if is_set && !allowed && !(kind == ModelKind::Fw && block.starts_with("fw_")) {
                return Err(mismatch(format!(
                    "block [{block}] does not belong to model {kind:?}"
                )));
            }
        }
        match kind {
            ModelKind::Cross | ModelKind::CrossWealth | ModelKind::CrossSde => {
                self.cross_params()?;
                self.price_rule()?;
            }
            ModelKind::Lls => {
                self.lls_params()?;
                self.check_mechanism(&[PriceRuleKind::LlsClearance], true)?;
            }
            ModelKind::Fw => {
                self.fw_params()?;
                self.check_mechanism(&[PriceRuleKind::FwLinear], true)?;
            }
        }
        if self.analysis.max_lag < 1 || self.analysis.num_quantiles < 1 {
            return Err(mismatch(
                "analysis.max_lag and analysis.num_quantiles must be positive",
            ));
        }
        Ok(())
    }

    fn check_mechanism(
        &self,
        allowed: &[PriceRuleKind],
        optional: bool,
    ) -> Result<Option<MechanismConfig>> {
        match self.mechanism {
            None if optional => Ok(None),
            None => Err(mismatch(format!(
                "model {:?} needs a [mechanism] block",
                self.model
            ))),
            Some(m) if !allowed.contains(&m.kind) => Err(mismatch(format!(
                "mechanism {:?} cannot drive model {:?}; expected one of {allowed:?}",
                m.kind, self.model
            ))),
            Some(m) => {
                if !m.kappa.is_finite() || !(m.theta >= 0.0 && m.theta.is_finite()) {
                    return Err(mismatch(format!(
                        "mechanism needs finite kappa and theta >= 0, got kappa={} theta={}",
                        m.kappa, m.theta
                    )));
                }
                Ok(Some(m))
            }
        }
    }

    pub fn cross_params(&self) -> Result<CrossParams> {
        let p = self
            .cross
            .ok_or_else(|| mismatch(format!("model {:?} needs a [cross] block", self.model)))?;
        p.validate()?;
        match (self.model, p.wealth.is_some()) {
            (ModelKind::CrossWealth, false) => {
                Err(mismatch("model cross_wealth needs a [cross.wealth] block"))
            }
            (ModelKind::Cross | ModelKind::CrossSde, true) => Err(mismatch(format!(
                "[cross.wealth] requires model cross_wealth, got {:?}",
                self.model
            ))),
            _ => Ok(p),
        }
    }

    pub fn price_rule(&self) -> Result<PriceRule> {
        let allowed: &[PriceRuleKind] = match self.model {
            ModelKind::Cross | ModelKind::CrossWealth => &[PriceRuleKind::CrossExp],
            ModelKind::CrossSde => &[PriceRuleKind::SdeEulerF1, PriceRuleKind::SdeEulerF2],
            _ => {
                return Err(mismatch(format!(
                    "model {:?} has no excess-demand price rule",
                    self.model
                )))
            }
        };
        let m = self
            .check_mechanism(allowed, false)?
            .expect("mechanism is required");
        if m.appendix_form && !m.kind.is_sde() {
            return Err(mismatch("appendix_form applies to the SDE rules only"));
        }
        if m.kappa_in_drift && m.kind != PriceRuleKind::SdeEulerF1 {
            return Err(mismatch("kappa_in_drift applies to sde_euler_f1 only"));
        }
        Ok(PriceRule {
            kind: m.kind,
            kappa: m.kappa,
            theta: m.theta,
            dt: self.dt,
            appendix_form: m.appendix_form,
            kappa_in_drift: m.kappa_in_drift,
        })
    }

    pub fn lls_params(&self) -> Result<LlsParams> {
        let p = self
            .lls
            .clone()
            .ok_or_else(|| mismatch("model lls needs an [lls] block"))?;
        p.validate(self.num_agents)?;
        Ok(p)
    }

    pub fn fw_params(&self) -> Result<(FwParams, Switching)> {
        let (p, switching) = match (self.fw_dca, self.fw_tpa) {
            (Some(p), None) => {
                if p.nu.is_some() {
                    return Err(mismatch("[fw_dca] takes beta, not nu"));
                }
                let beta = p.beta.ok_or_else(|| mismatch("[fw_dca] needs beta"))?;
                (p, Switching::Dca { beta })
            }
            (None, Some(p)) => {
                if p.beta.is_some() {
                    return Err(mismatch("[fw_tpa] takes nu, not beta"));
                }
                let nu = p.nu.ok_or_else(|| mismatch("[fw_tpa] needs nu"))?;
                (p, Switching::Tpa { nu })
            }
            _ => {
                return Err(mismatch(
                    "model fw needs exactly one of [fw_dca] or [fw_tpa]",
                ))
            }
        };
        p.validate(switching)?;
        Ok((p, switching))
    }
}

/// Parses and validates a TOML configuration. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    let config: SimulationConfig =
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Canonical TOML form; [`parse_config`] inverts it exactly.
pub fn serialize_config(config: &SimulationConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Parse(e.to_string()))
}
