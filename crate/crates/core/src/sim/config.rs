//! Scenario configuration (TOML, `version = 1`).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::baseline::DecentralizedConfig;
use crate::error::ConfigError;
use crate::exposure::RiskConfig;
use crate::time::{TimeFramePolicy, DAY_SECS};

pub const CONFIG_VERSION: u32 = 1;
/// 2020-09-14 00:00:00 UTC.
pub const DEFAULT_START_UNIX: u64 = 1_600_041_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Centralized,
    Decentralized,
    Tracecorona,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Centralized, Scheme::Decentralized, Scheme::Tracecorona];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Centralized => "centralized",
            Scheme::Decentralized => "decentralized",
            Scheme::Tracecorona => "tracecorona",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Seconds since scenario start. Written as an integer or as `"<d>d<HH>:<MM>"`
/// (optionally `:<SS>`), e.g. `"3d09:00"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn day_hm(day: u64, hour: u64, minute: u64) -> Self {
        SimTime(day * DAY_SECS + hour * 3_600 + minute * 60)
    }
}

impl FromStr for SimTime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(n) = s.parse::<u64>() {
            return Ok(SimTime(n));
        }
        let bad = || format!("invalid time `{s}`, expected seconds or e.g. \"3d09:00\"");
        let (day, clock) = s.split_once('d').ok_or_else(bad)?;
        let day: u64 = day.trim().parse().map_err(|_| bad())?;
        let parts: Vec<u64> =
            clock.split(':').map(|p| p.trim().parse::<u64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let (h, m, sec) = match parts.as_slice() {
            [h, m] => (*h, *m, 0),
            [h, m, sec] => (*h, *m, *sec),
            _ => return Err(bad()),
        };
        if h >= 24 || m >= 60 || sec >= 60 {
            return Err(bad());
        }
        Ok(SimTime(day * DAY_SECS + h * 3_600 + m * 60 + sec))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.0 / DAY_SECS;
        let r = self.0 % DAY_SECS;
        let (h, m, s) = (r / 3_600, r % 3_600 / 60, r % 60);
        if s == 0 {
            write!(f, "{d}d{h:02}:{m:02}")
        } else {
            write!(f, "{d}d{h:02}:{m:02}:{s:02}")
        }
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(SimTime(n)),
            Raw::Text(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub frame_period: u64,
    pub min_encounter_duration: u64,
    pub epsilon: u64,
    pub retention_days: u64,
    pub continuity_gap: u64,
    pub deferred_derivation: bool,
    pub second_level_early_warning: bool,
    pub superspreader_detection: bool,
    pub superspreader_threshold: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = TimeFramePolicy::default();
        Self {
            frame_period: p.frame_period,
            min_encounter_duration: p.min_encounter_duration,
            epsilon: p.epsilon,
            retention_days: 14,
            continuity_gap: 120,
            deferred_derivation: false,
            second_level_early_warning: false,
            superspreader_detection: false,
            superspreader_threshold: 3,
        }
    }
}

impl ProtocolConfig {
    pub fn policy(&self) -> TimeFramePolicy {
        TimeFramePolicy {
            frame_period: self.frame_period,
            min_encounter_duration: self.min_encounter_duration,
            epsilon: self.epsilon,
        }
    }
}

/// Feed publication schedule. Epochs close at `publish_offset_s` into every
/// cadence period and clients download `fetch_delay_s` later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedConfig {
    pub cadence_s: u64,
    pub publish_offset_s: u64,
    pub fetch_delay_s: u64,
}

impl Default for FeedConfig {
    fn default() -> Self {
        Self { cadence_s: DAY_SECS, publish_offset_s: 22 * 3_600, fetch_delay_s: 3_600 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Independent drop probability per beacon sighting.
    pub loss: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { loss: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    #[default]
    Anonymous,
    PhoneNumber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub replay_window: u64,
    pub kiss_bug: bool,
    /// Infected users also publish the key of the current day.
    pub publish_current_day_tek: bool,
    pub registration: RegistrationMode,
    pub bluetrace: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            replay_window: 7_200,
            kiss_bug: false,
            publish_current_day_tek: false,
            registration: RegistrationMode::Anonymous,
            bluetrace: false,
        }
    }
}

impl BaselineConfig {
    pub fn decentralized(&self) -> DecentralizedConfig {
        DecentralizedConfig { replay_window: self.replay_window, kiss_bug: self.kiss_bug }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiseaseConfig {
    pub incubation_to_contagious_days: u64,
    pub contagious_to_symptoms_days: u64,
    pub symptoms_to_test_days: u64,
    pub test_to_result_days: u64,
    /// Hour of day at which test results arrive.
    pub result_hour: u64,
}

impl Default for DiseaseConfig {
    fn default() -> Self {
        Self {
            incubation_to_contagious_days: 3,
            contagious_to_symptoms_days: 2,
            symptoms_to_test_days: 2,
            test_to_result_days: 1,
            result_hour: 9,
        }
    }
}

impl DiseaseConfig {
    pub fn contagious_day(&self, infected_day: u64) -> u64 {
        infected_day + self.incubation_to_contagious_days
    }

    pub fn result_day(&self, infected_day: u64) -> u64 {
        self.contagious_day(infected_day)
            + self.contagious_to_symptoms_days
            + self.symptoms_to_test_days
            + self.test_to_result_days
    }
}

/// Tokens an infected user keeps out of the upload.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RedactionSpec {
    pub min_duration_s: Option<u64>,
    pub exclude_ranges: Vec<(SimTime, SimTime)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    #[serde(default)]
    pub clock_offset_s: i64,
    #[serde(default)]
    pub infected_day: Option<u64>,
    #[serde(default)]
    pub advertise_phase: Option<u64>,
    #[serde(default)]
    pub scan_phase: Option<u64>,
    #[serde(default)]
    pub redact: RedactionSpec,
}

/// Constant dBm, or `[[offset_s, dbm], ...]` steps from the interval start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RssiProfile {
    Constant(i16),
    Piecewise(Vec<(u64, i16)>),
}

impl Default for RssiProfile {
    fn default() -> Self {
        RssiProfile::Constant(-60)
    }
}

impl RssiProfile {
    pub fn at(&self, offset: u64) -> i16 {
        match self {
            RssiProfile::Constant(v) => *v,
            RssiProfile::Piecewise(steps) => steps
                .iter()
                .take_while(|(from, _)| *from <= offset)
                .last()
                .or(steps.first())
                .map(|s| s.1)
                .unwrap_or(-60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColocationSpec {
    pub a: String,
    pub b: String,
    pub start: SimTime,
    pub end: SimTime,
    #[serde(default)]
    pub rssi: RssiProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    RelayOneway,
    RelayTwoway,
    Eavesdropper,
    FakeClaimer,
    KissReplay,
}

impl AdversaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryKind::RelayOneway => "relay_oneway",
            AdversaryKind::RelayTwoway => "relay_twoway",
            AdversaryKind::Eavesdropper => "eavesdropper",
            AdversaryKind::FakeClaimer => "fake_claimer",
            AdversaryKind::KissReplay => "kiss_replay",
        }
    }
}

/// A device passing one eavesdropping sensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassSpec {
    pub sensor: String,
    pub device: String,
    pub start: SimTime,
    pub end: SimTime,
}

pub const MAX_FANOUT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: AdversaryKind,
    /// Devices near the capturing end of a relay.
    #[serde(default)]
    pub capture: Vec<String>,
    /// Devices near the emitting end of a relay or replay.
    #[serde(default)]
    pub emit: Vec<String>,
    #[serde(default)]
    pub start: SimTime,
    #[serde(default)]
    pub end: SimTime,
    #[serde(default)]
    pub latency_s: u64,
    /// Remote victims one relayed device can be connected to per frame.
    #[serde(default = "default_fanout")]
    pub fanout_limit: usize,
    #[serde(default = "default_adv_rssi")]
    pub rssi: i16,
    /// One-way relays: also carry beacons from the emit site back.
    #[serde(default)]
    pub mirror: bool,
    #[serde(default)]
    pub passes: Vec<PassSpec>,
    /// Forged claims submitted by a fake claimer.
    #[serde(default = "default_attempts")]
    pub attempts: u64,
    /// A genuine contact handing its real secrets to the fake claimer.
    #[serde(default)]
    pub collude_with: Option<String>,
    /// Age of the identifier a KISS replayer rebroadcasts.
    #[serde(default = "default_replay_age")]
    pub replay_age_s: u64,
}

fn default_fanout() -> usize {
    MAX_FANOUT
}

fn default_adv_rssi() -> i16 {
    -60
}

fn default_attempts() -> u64 {
    10_000
}

fn default_replay_age() -> u64 {
    5 * 3_600
}

impl AdversarySpec {
    pub fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}#{index}", self.kind.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub duration_days: u64,
    #[serde(default = "default_start")]
    pub start_unix: u64,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub feed: FeedConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub disease: DiseaseConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub colocations: Vec<ColocationSpec>,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
}

fn default_start() -> u64 {
    DEFAULT_START_UNIX
}

impl ScenarioConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| ConfigError::invalid("<document>", e.message().to_owned()))?;
        let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::invalid(path, e.into_inner().message().to_owned())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn duration_s(&self) -> u64 {
        self.duration_days * DAY_SECS
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::invalid(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if self.duration_days == 0 {
            return Err(ConfigError::invalid("duration_days", "must be positive"));
        }
        if !self.start_unix.is_multiple_of(DAY_SECS) {
            return Err(ConfigError::invalid("start_unix", "must be midnight UTC"));
        }
        self.protocol
            .policy()
            .validate()
            .map_err(|e| ConfigError { path: format!("protocol.{}", e.path), message: e.message })?;
        if self.protocol.retention_days == 0 {
            return Err(ConfigError::invalid("protocol.retention_days", "must be positive"));
        }
        if self.protocol.superspreader_threshold == 0 {
            return Err(ConfigError::invalid("protocol.superspreader_threshold", "must be positive"));
        }
        let f = &self.feed;
        if f.cadence_s == 0 || f.cadence_s > DAY_SECS || !DAY_SECS.is_multiple_of(f.cadence_s) {
            return Err(ConfigError::invalid("feed.cadence_s", "must divide one day"));
        }
        if f.publish_offset_s >= f.cadence_s {
            return Err(ConfigError::invalid("feed.publish_offset_s", "must be below cadence_s"));
        }
        if f.fetch_delay_s == 0 || f.fetch_delay_s >= f.cadence_s {
            return Err(ConfigError::invalid("feed.fetch_delay_s", "must be positive and below cadence_s"));
        }
        if !(0.0..1.0).contains(&self.channel.loss) {
            return Err(ConfigError::invalid("channel.loss", "must be in [0, 1)"));
        }
        if self.disease.result_hour >= 24 {
            return Err(ConfigError::invalid("disease.result_hour", "must be below 24"));
        }
        let mut seen = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            if d.id.is_empty() {
                return Err(ConfigError::invalid(format!("devices[{i}].id"), "must not be empty"));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(ConfigError::invalid(format!("devices[{i}].id"), format!("duplicate device `{}`", d.id)));
            }
            if d.clock_offset_s.unsigned_abs() >= DAY_SECS {
                return Err(ConfigError::invalid(format!("devices[{i}].clock_offset_s"), "must be within one day"));
            }
            if d.advertise_phase.is_some_and(|p| p >= 60) {
                return Err(ConfigError::invalid(format!("devices[{i}].advertise_phase"), "must be below 60"));
            }
            if d.scan_phase.is_some_and(|p| p >= 50) {
                return Err(ConfigError::invalid(format!("devices[{i}].scan_phase"), "must be below 50"));
            }
            for (j, (s, e)) in d.redact.exclude_ranges.iter().enumerate() {
                if s > e {
                    return Err(ConfigError::invalid(
                        format!("devices[{i}].redact.exclude_ranges[{j}]"),
                        "start after end",
                    ));
                }
            }
        }
        let known = |path: String, id: &str| -> Result<(), ConfigError> {
            if seen.contains(id) {
                Ok(())
            } else {
                Err(ConfigError::invalid(path, format!("unknown device `{id}`")))
            }
        };
        let horizon = self.duration_s();
        let interval = |path: String, s: SimTime, e: SimTime| -> Result<(), ConfigError> {
            if s >= e {
                return Err(ConfigError::invalid(path, "start must be before end"));
            }
            if e.0 > horizon {
                return Err(ConfigError::invalid(path, "ends after the scenario"));
            }
            Ok(())
        };
        for (i, c) in self.colocations.iter().enumerate() {
            known(format!("colocations[{i}].a"), &c.a)?;
            known(format!("colocations[{i}].b"), &c.b)?;
            if c.a == c.b {
                return Err(ConfigError::invalid(format!("colocations[{i}].b"), "same device as a"));
            }
            interval(format!("colocations[{i}].end"), c.start, c.end)?;
            if let RssiProfile::Piecewise(steps) = &c.rssi {
                if steps.is_empty() || steps.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(ConfigError::invalid(
                        format!("colocations[{i}].rssi"),
                        "steps must be non-empty with increasing offsets",
                    ));
                }
            }
        }
        for (i, a) in self.adversaries.iter().enumerate() {
            let p = |f: &str| format!("adversaries[{i}].{f}");
            for (j, id) in a.capture.iter().enumerate() {
                known(format!("{}[{j}]", p("capture")), id)?;
            }
            for (j, id) in a.emit.iter().enumerate() {
                known(format!("{}[{j}]", p("emit")), id)?;
            }
            if let Some(id) = &a.collude_with {
                known(p("collude_with"), id)?;
            }
            if a.fanout_limit == 0 || a.fanout_limit > MAX_FANOUT {
                return Err(ConfigError::invalid(p("fanout_limit"), format!("must be in 1..={MAX_FANOUT}")));
            }
            match a.kind {
                AdversaryKind::RelayOneway | AdversaryKind::RelayTwoway => {
                    if a.capture.is_empty() || a.emit.is_empty() {
                        return Err(ConfigError::invalid(p("capture"), "relay needs capture and emit devices"));
                    }
                    if a.capture.iter().any(|c| a.emit.contains(c)) {
                        return Err(ConfigError::invalid(p("emit"), "device on both relay ends"));
                    }
                    interval(p("end"), a.start, a.end)?;
                    if a.end.0 + a.latency_s > horizon {
                        return Err(ConfigError::invalid(p("latency_s"), "relay outlives the scenario"));
                    }
                }
                AdversaryKind::KissReplay => {
                    if a.emit.is_empty() {
                        return Err(ConfigError::invalid(p("emit"), "replay needs target devices"));
                    }
                    interval(p("end"), a.start, a.end)?;
                }
                AdversaryKind::Eavesdropper => {
                    if a.passes.is_empty() {
                        return Err(ConfigError::invalid(p("passes"), "eavesdropper needs passes"));
                    }
                    for (j, pass) in a.passes.iter().enumerate() {
                        known(format!("{}[{j}].device", p("passes")), &pass.device)?;
                        interval(format!("{}[{j}].end", p("passes")), pass.start, pass.end)?;
                    }
                }
                AdversaryKind::FakeClaimer => {
                    if a.start.0 >= horizon {
                        return Err(ConfigError::invalid(p("start"), "after the scenario"));
                    }
                }
            }
        }
        Ok(())
    }
}
