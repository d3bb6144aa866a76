use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::crypto::{
    derive_daily_tek, derive_tempid_decentralized, derive_tempids_decentralized, Tek, TempId,
    DECENTRALIZED_SLOTS_PER_DAY,
};
use crate::time::{day_of, DAY_SECS};

pub const DECENTRALIZED_SLOT_SECS: u64 = DAY_SECS / DECENTRALIZED_SLOTS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DecentralizedDailyKey {
    pub tek: Tek,
    pub day: u64,
}

impl DecentralizedDailyKey {
    pub fn tempids(&self) -> Vec<TempId> {
        derive_tempids_decentralized(&self.tek, self.day)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedKey {
    pub key: DecentralizedDailyKey,
    pub published_day: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecentralizedConfig {
    /// Tolerance around a TempID's ten-minute validity, seconds.
    pub replay_window: u64,
    /// Accept any observation made on the key's publication day.
    pub kiss_bug: bool,
}

impl Default for DecentralizedConfig {
    fn default() -> Self {
        Self { replay_window: 7_200, kiss_bug: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DecentralizedMatch {
    pub tempid: TempId,
    pub observed_at: u64,
    pub key_day: u64,
    pub slot: u64,
}

/// Key server of the decentralized baseline: stores and redistributes TEKs.
#[derive(Debug, Clone, Default)]
pub struct DecentralizedServer {
    published: Vec<PublishedKey>,
}

impl DecentralizedServer {
    pub fn publish(&mut self, keys: &[DecentralizedDailyKey], now: u64) {
        let published_day = day_of(now);
        self.published.extend(keys.iter().map(|key| PublishedKey { key: *key, published_day }));
    }

    pub fn published(&self) -> &[PublishedKey] {
        &self.published
    }

    pub fn published_since(&self, index: usize) -> &[PublishedKey] {
        &self.published[index.min(self.published.len())..]
    }
}

/// Client-side matching of observed TempIDs against published keys.
pub fn decentralized_match(
    keys: &[PublishedKey],
    observations: &[(TempId, u64)],
    config: &DecentralizedConfig,
) -> Vec<DecentralizedMatch> {
    let mut index: HashMap<TempId, Vec<(u64, u64, u64)>> = HashMap::new();
    for pk in keys {
        for (slot, id) in pk.key.tempids().into_iter().enumerate() {
            index.entry(id).or_default().push((pk.key.day, slot as u64, pk.published_day));
        }
    }
    let w = config.replay_window;
    let mut out = Vec::new();
    for (id, t) in observations {
        let Some(entries) = index.get(id) else {
            continue;
        };
        for &(day, slot, published_day) in entries {
            let start = (day * DECENTRALIZED_SLOTS_PER_DAY + slot) * DECENTRALIZED_SLOT_SECS;
            let end = start + DECENTRALIZED_SLOT_SECS;
            let in_window = *t + w >= start && *t <= end + w;
            let kiss = config.kiss_bug && day_of(*t) == published_day;
            if in_window || kiss {
                out.push(DecentralizedMatch { tempid: *id, observed_at: *t, key_day: day, slot });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Client of the decentralized baseline.
#[derive(Debug, Clone)]
pub struct DecentralizedClient {
    seed: [u8; 32],
    observations: Vec<(TempId, u64)>,
    pub retention_days: u64,
}

impl DecentralizedClient {
    pub fn new(seed: [u8; 32]) -> Self {
        Self { seed, observations: Vec::new(), retention_days: 14 }
    }

    pub fn daily_key(&self, day: u64) -> DecentralizedDailyKey {
        DecentralizedDailyKey { tek: derive_daily_tek(&self.seed, day), day }
    }

    pub fn tempid_at(&self, t: u64) -> TempId {
        let key = self.daily_key(day_of(t));
        derive_tempid_decentralized(&key.tek, t / DECENTRALIZED_SLOT_SECS)
    }

    pub fn observe(&mut self, id: TempId, t: u64) {
        self.observations.push((id, t));
    }

    pub fn observations(&self) -> &[(TempId, u64)] {
        &self.observations
    }

    /// Keys to publish after a positive test. Ends at the previous day unless
    /// `include_today` is set.
    pub fn keys_for_upload(&self, now: u64, include_today: bool) -> Vec<DecentralizedDailyKey> {
        let today = day_of(now);
        let last = if include_today { today } else { today.saturating_sub(1) };
        let first = today.saturating_sub(self.retention_days - 1);
        (first..=last).map(|d| self.daily_key(d)).collect()
    }

    pub fn check(&self, keys: &[PublishedKey], config: &DecentralizedConfig) -> Vec<DecentralizedMatch> {
        decentralized_match(keys, &self.observations, config)
    }

    /// Distinct exposure days per match, for reporting.
    pub fn exposure_days(matches: &[DecentralizedMatch]) -> BTreeMap<u64, usize> {
        let mut days = BTreeMap::new();
        for m in matches {
            *days.entry(day_of(m.observed_at)).or_default() += 1;
        }
        days
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(kiss_bug: bool) -> (DecentralizedClient, DecentralizedConfig, u64) {
        let cfg = DecentralizedConfig { kiss_bug, ..Default::default() };
        (DecentralizedClient::new([4; 32]), cfg, 10 * DAY_SECS + 8 * 3_600)
    }

    #[test]
    fn honest_contact_matches() {
        let (infected, cfg, t) = setup(false);
        let mut contact = DecentralizedClient::new([5; 32]);
        contact.observe(infected.tempid_at(t), t + 5);
        let mut server = DecentralizedServer::default();
        server.publish(&infected.keys_for_upload(t + 3 * DAY_SECS, false), t + 3 * DAY_SECS);
        assert_eq!(contact.check(server.published(), &cfg).len(), 1);
    }

    #[test]
    fn replay_within_two_hours_matches() {
        let (infected, cfg, t) = setup(false);
        let mut victim = DecentralizedClient::new([6; 32]);
        victim.observe(infected.tempid_at(t), t + 90 * 60);
        let mut late = DecentralizedClient::new([7; 32]);
        late.observe(infected.tempid_at(t), t + 3 * 3_600);
        let mut server = DecentralizedServer::default();
        server.publish(&infected.keys_for_upload(t + DAY_SECS, false), t + DAY_SECS);
        assert_eq!(victim.check(server.published(), &cfg).len(), 1);
        assert!(late.check(server.published(), &cfg).is_empty());
    }

    #[test]
    fn kiss_same_day_replay() {
        for (bug, expected) in [(true, 1), (false, 0)] {
            let (infected, cfg, t) = setup(bug);
            let mut server = DecentralizedServer::default();
            let publish_at = t + 60;
            server.publish(&infected.keys_for_upload(publish_at, true), publish_at);
            // attacker derives the morning TempID from the published key and
            // replays it five hours later
            let key = server.published().last().unwrap().key;
            let morning = key.tempids()[6 * 6];
            let mut victim = DecentralizedClient::new([8; 32]);
            victim.observe(morning, publish_at + 5 * 3_600);
            assert_eq!(victim.check(server.published(), &cfg).len(), expected, "bug={bug}");
        }
    }
}
