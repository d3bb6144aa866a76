//! Deterministic discrete-event simulator for all three schemes.

mod config;
mod engine;
mod linkability;
mod report;
pub mod scenarios;

pub use config::{
    AdversaryKind, AdversarySpec, BaselineConfig, ChannelConfig, ColocationSpec, DeviceSpec, DiseaseConfig, FeedConfig,
    PassSpec, ProtocolConfig, RedactionSpec, RegistrationMode, RssiProfile, ScenarioConfig, Scheme, SimTime,
    MAX_FANOUT,
};
pub use linkability::{eavesdropper_linkability, SensorObservation, Track};
pub use report::{
    AttackOutcome, ContactStats, LinkabilityEntry, LinkedDay, MatchEvent, NotificationEntry, ScenarioReport,
    REPORT_VERSION,
};

use crate::error::ConfigError;

/// Runs one scenario to completion. Same config, same report, byte for byte.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, ConfigError> {
    Ok(engine::Sim::new(config)?.run())
}
