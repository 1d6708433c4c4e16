//! Configurations reproducing the published parameter tables.

use crate::config::{parse_config, SimulationConfig};
use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("cross-base", include_str!("presets/cross-base.toml")),
    ("cross-theta2", include_str!("presets/cross-theta2.toml")),
    ("cross-wealth", include_str!("presets/cross-wealth.toml")),
    ("cross-5m", include_str!("presets/cross-5m.toml")),
    ("sde-f1", include_str!("presets/sde-f1.toml")),
    ("sde-f2", include_str!("presets/sde-f2.toml")),
    ("sde-f1-theta2", include_str!("presets/sde-f1-theta2.toml")),
    ("sde-f2-theta2", include_str!("presets/sde-f2-theta2.toml")),
    ("lls-basic", include_str!("presets/lls-basic.toml")),
    ("lls-noisy", include_str!("presets/lls-noisy.toml")),
    ("lls-3groups", include_str!("presets/lls-3groups.toml")),
    (
        "lls-3groups-999",
        include_str!("presets/lls-3groups-999.toml"),
    ),
    ("dca-w", include_str!("presets/dca-w.toml")),
    ("dca-wp", include_str!("presets/dca-wp.toml")),
    ("dca-whp", include_str!("presets/dca-whp.toml")),
    ("dca-hpm", include_str!("presets/dca-hpm.toml")),
    ("tpa-w", include_str!("presets/tpa-w.toml")),
    ("tpa-wp", include_str!("presets/tpa-wp.toml")),
    ("tpa-hpm", include_str!("presets/tpa-hpm.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// TOML text of a bundled preset.
pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub fn preset(name: &str) -> Result<SimulationConfig> {
    parse_config(preset_text(name)?)
}
