//! Matching a downloaded feed against the local token store.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::client::{EncounterToken, TokenStore};
use crate::crypto::{decrypt_metadata, TokenHash, TokenSecret};
use crate::server::{PublishedFeed, RecordTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureLevel {
    Direct,
    SecondLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureNotification {
    pub matched_hash: TokenHash,
    pub level: ExposureLevel,
    pub superspreader_flag: bool,
    /// Local record of when the encounter happened.
    pub encounter_time: u64,
    /// Timestamp decrypted from the published record.
    pub remote_time: u64,
    pub duration: u64,
    pub max_signal_strength: i16,
    pub risk_score: f64,
}

/// Signal-strength weights for [`risk_score`]. Thresholds are inclusive lower
/// bounds in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub near_dbm: i16,
    pub mid_dbm: i16,
    pub near_weight: f64,
    pub mid_weight: f64,
    pub far_weight: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { near_dbm: -60, mid_dbm: -75, near_weight: 1.0, mid_weight: 0.5, far_weight: 0.25 }
    }
}

impl RiskConfig {
    pub fn weight(&self, rssi: i16) -> f64 {
        if rssi >= self.near_dbm {
            self.near_weight
        } else if rssi >= self.mid_dbm {
            self.mid_weight
        } else {
            self.far_weight
        }
    }
}

/// Exposure minutes weighted by proximity.
pub fn risk_score(duration: u64, max_rssi: i16, config: &RiskConfig) -> f64 {
    duration as f64 / 60.0 * config.weight(max_rssi)
}

fn level_of(tag: RecordTag) -> (ExposureLevel, bool) {
    match tag {
        RecordTag::Direct => (ExposureLevel::Direct, false),
        RecordTag::SecondLevel => (ExposureLevel::SecondLevel, false),
        RecordTag::PossibleSuperspreader => (ExposureLevel::Direct, true),
    }
}

fn notification(token: &EncounterToken, tag: RecordTag, remote_time: u64, risk: &RiskConfig) -> ExposureNotification {
    let (level, superspreader_flag) = level_of(tag);
    ExposureNotification {
        matched_hash: token.hash(),
        level,
        superspreader_flag,
        encounter_time: token.start_time,
        remote_time,
        duration: token.duration,
        max_signal_strength: token.max_signal_strength,
        risk_score: risk_score(token.duration, token.max_signal_strength, risk),
    }
}

/// Decrypted remote time if `token` validates `ciphertext` within `epsilon`.
pub fn token_matches(token: &EncounterToken, ciphertext: &[u8], epsilon: u64) -> Option<u64> {
    let remote = decrypt_metadata(&token.secret, ciphertext).ok()?;
    (remote.abs_diff(token.start_time) <= epsilon).then_some(remote)
}

/// Notifications for every feed record that opens under a local token with
/// timestamps at most `epsilon` apart. Ordered by encounter time, then hash.
pub fn match_feed(
    store: &TokenStore,
    feed: &PublishedFeed,
    epsilon: u64,
    risk: &RiskConfig,
) -> Vec<ExposureNotification> {
    let mut index: HashMap<TokenHash, Vec<&EncounterToken>> = HashMap::new();
    for token in store.iter() {
        index.entry(token.hash()).or_default().push(token);
    }
    let mut out = Vec::new();
    for record in &feed.records {
        let Some(tokens) = index.get(&record.hash) else {
            continue;
        };
        for token in tokens {
            if let Some(remote) = token_matches(token, &record.ciphertext, epsilon) {
                out.push(notification(token, record.tag, remote, risk));
            }
        }
    }
    sort_notifications(&mut out);
    out
}

pub fn sort_notifications(list: &mut [ExposureNotification]) {
    list.sort_by(|a, b| {
        (a.encounter_time, a.matched_hash, a.level, a.superspreader_flag).cmp(&(
            b.encounter_time,
            b.matched_hash,
            b.level,
            b.superspreader_flag,
        ))
    });
}

/// Secrets of the distinct infected records matched, when there are at least
/// `threshold` of them. Distinctness is per record.
pub fn detect_superspreader_candidate(
    store: &TokenStore,
    matched: &[ExposureNotification],
    threshold: usize,
) -> Option<Vec<TokenSecret>> {
    let hashes: BTreeSet<TokenHash> = matched
        .iter()
        .filter(|n| n.level == ExposureLevel::Direct && !n.superspreader_flag)
        .map(|n| n.matched_hash)
        .collect();
    if hashes.len() < threshold.max(1) {
        return None;
    }
    let secrets: Vec<TokenSecret> = hashes.iter().filter_map(|h| store.find_by_hash(h).map(|t| t.secret)).collect();
    (secrets.len() >= threshold).then_some(secrets)
}

/// Upload view of `store` without the tokens `exclude` selects.
pub fn redact_tokens<F>(store: &TokenStore, exclude: F) -> TokenStore
where
    F: FnMut(&EncounterToken) -> bool,
{
    store.redact(exclude)
}
