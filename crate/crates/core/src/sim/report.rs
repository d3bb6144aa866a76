//! Scenario report: JSON with a stable field order, plus a flat summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{AdversaryKind, Scheme};
use crate::exposure::ExposureLevel;
use crate::server::{RecordTag, ServerStats};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationEntry {
    pub device: String,
    /// Scenario day on which the device learned of the exposure.
    pub day: u64,
    /// Seconds since scenario start.
    pub time: u64,
    pub level: ExposureLevel,
    pub superspreader_flag: bool,
    /// Simulator ground truth: the matched contact really happened.
    pub genuine: bool,
    /// Device whose upload caused the notification.
    pub source: Option<String>,
    /// Adversary that fabricated the contact, if any.
    pub attack: Option<String>,
    /// Days since the source became contagious.
    pub latency_days: Option<u64>,
    /// Token hash, TEK or user id that matched, hex.
    pub matched: String,
    pub risk_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub adversary: String,
    pub kind: AdversaryKind,
    pub attempts: u64,
    pub successes: u64,
    pub success_rate: f64,
    /// Tokens established through the adversary's tunnel.
    pub tokens_established: u64,
    /// Handshake requests that could not be served by the adversary.
    pub incomplete_handshakes: u64,
    /// Largest number of remote victims tunnelled to one device in one frame.
    pub max_victims_per_frame: u64,
    /// Uploads backed by a colluding contact's real secret.
    pub colluding_accepted: u64,
}

impl AttackOutcome {
    pub fn new(adversary: String, kind: AdversaryKind) -> Self {
        Self {
            adversary,
            kind,
            attempts: 0,
            successes: 0,
            success_rate: 0.0,
            tokens_established: 0,
            incomplete_handshakes: 0,
            max_victims_per_frame: 0,
            colluding_accepted: 0,
        }
    }

    pub fn finish(&mut self) {
        self.success_rate = if self.attempts == 0 { 0.0 } else { self.successes as f64 / self.attempts as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedDay {
    /// Scenario day of the key; negative for days before the start.
    pub day: i64,
    /// Identifiers the eavesdropper links through published key material.
    pub linked_identifiers: u64,
    /// Linked set equals the device's real identifiers of that day.
    pub equals_ground_truth: bool,
    pub observed_identifiers: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkabilityEntry {
    pub device: String,
    pub observations: u64,
    pub distinct_identifiers: u64,
    pub max_track_s: u64,
    pub linked_days: Vec<LinkedDay>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchEvent {
    pub device: String,
    pub time: u64,
    pub matched: String,
    pub tag: RecordTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContactStats {
    pub direct_tokens: u64,
    pub relayed_tokens: u64,
    pub handshake_failures: u64,
    pub sightings: u64,
    pub dropped_sightings: u64,
    pub peak_open_channels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub version: u32,
    pub name: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub duration_days: u64,
    pub notifications: Vec<NotificationEntry>,
    pub false_notification_count: u64,
    pub genuine_notification_count: u64,
    pub attack_success_rate: f64,
    pub attacks: Vec<AttackOutcome>,
    pub max_linkability_window_s: u64,
    pub linkability: Vec<LinkabilityEntry>,
    pub payload_bytes_uploaded: u64,
    pub payload_bytes_downloaded: u64,
    pub contacts: ContactStats,
    pub server_stats: Option<ServerStats>,
    /// The same aggregates counted independently by the simulator.
    pub ground_truth: ServerStats,
    pub match_events: Vec<MatchEvent>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn notifications_for<'a>(&'a self, device: &'a str) -> impl Iterator<Item = &'a NotificationEntry> + 'a {
        self.notifications.iter().filter(move |n| n.device == device)
    }

    pub fn attack(&self, kind: AdversaryKind) -> Option<&AttackOutcome> {
        self.attacks.iter().find(|a| a.kind == kind)
    }

    /// `key=value` lines for scripts.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("name", self.name.clone());
        kv("scheme", self.scheme.to_string());
        kv("seed", self.seed.to_string());
        kv("notifications", self.notifications.len().to_string());
        kv("false_notifications", self.false_notification_count.to_string());
        kv("attack_success_rate", format!("{:.4}", self.attack_success_rate));
        kv("max_linkability_window_s", self.max_linkability_window_s.to_string());
        kv("payload_bytes_uploaded", self.payload_bytes_uploaded.to_string());
        kv("payload_bytes_downloaded", self.payload_bytes_downloaded.to_string());
        let first = self
            .notifications
            .iter()
            .filter(|n| n.genuine && n.level == ExposureLevel::Direct)
            .filter_map(|n| n.latency_days)
            .min();
        if let Some(d) = first {
            kv("first_direct_latency_days", d.to_string());
        }
        for a in &self.attacks {
            kv(&format!("attack.{}", a.adversary), format!("{}/{}", a.successes, a.attempts));
        }
        out
    }
}
