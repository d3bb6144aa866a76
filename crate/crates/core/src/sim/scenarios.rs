//! Scenarios shipped with the crate.

use super::config::ScenarioConfig;

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        /// `(name, toml)` for every bundled scenario.
        pub const BUNDLED: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../scenarios/", $name, ".toml")))),*
        ];
    };
}

bundled!(
    "honest_pair",
    "drive_by",
    "relay_r1",
    "relay_r2",
    "relay_r2_skewed",
    "kiss_replay",
    "kiss_replay_fixed",
    "fake_claim",
    "eavesdropper",
    "infection_chain",
    "infection_chain_early_warning",
    "superspreader",
    "s1_neighbourhood",
);

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled scenario. Panics only if a shipped file is broken.
pub fn load(name: &str) -> Option<ScenarioConfig> {
    source(name).map(|s| ScenarioConfig::from_toml(s).expect("bundled scenario parses"))
}
