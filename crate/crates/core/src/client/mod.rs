//! Encounter-token client: beaconing, neighbor tracking, handshakes and the
//! local token store.
//!
//! A [`Device`] never sees the true time. Every method takes the device's own
//! clock reading; the simulator adds the configured offset before calling in.

mod channels;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use channels::{ChannelGrant, ChannelPool, MAX_CONCURRENT_CHANNELS, MAX_HANDSHAKES_PER_SECOND};
pub use store::{EncounterToken, TokenStore, TokenSummary};

use crate::crypto::{
    derive_ephemeral_id, derive_token, generate_frame_keypair, EphemeralId, FrameKeyPair, PublicKeyBytes, TokenHash,
};
use crate::error::ProtocolError;
use crate::time::{DutyCycle, TimeFramePolicy};

/// App identifier carried in every advertising message.
pub const APP_UUID: [u8; 16] = *b"TraceCoronaApp01";

/// Advertised payload `AM = UUID || EI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconMessage {
    #[serde(with = "uuid_hex")]
    pub uuid: [u8; 16],
    pub ephemeral_id: EphemeralId,
    /// Set when the advertiser accepts connections for a key exchange. This is
    /// the connectable bit of the advertising PDU, not part of the payload.
    pub carries_pubkey_offer: bool,
}

impl BeaconMessage {
    pub const PAYLOAD_BITS: usize = 256;

    pub fn payload(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[..16].copy_from_slice(&self.uuid);
        out[16..].copy_from_slice(&self.ephemeral_id.0);
        out
    }
}

mod uuid_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let bytes = hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)?;
        bytes.try_into().map_err(|_| serde::de::Error::custom("uuid must be 16 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborObservation {
    pub ephemeral_id: EphemeralId,
    pub first_seen: u64,
    pub last_seen: u64,
    pub rssi_samples: Vec<(u64, i16)>,
}

impl NeighborObservation {
    fn new(ephemeral_id: EphemeralId, now: u64, rssi: i16) -> Self {
        Self { ephemeral_id, first_seen: now, last_seen: now, rssi_samples: vec![(now, rssi)] }
    }

    pub fn max_rssi(&self) -> i16 {
        self.rssi_samples.iter().map(|s| s.1).max().unwrap_or(i16::MIN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub policy: TimeFramePolicy,
    pub retention_days: u64,
    /// Observation continuity breaks after this many silent seconds.
    pub continuity_gap: u64,
    /// Postpone token derivation to the next [`Device::charge`] call.
    pub deferred_derivation: bool,
    pub advertise_phase: u64,
    pub scan_phase: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            policy: TimeFramePolicy::default(),
            retention_days: 14,
            continuity_gap: 120,
            deferred_derivation: false,
            advertise_phase: 0,
            scan_phase: 0,
        }
    }
}

/// Radio and key-rotation events emitted by [`Device::advance_clock`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolAction {
    FrameRotated { at: u64, frame_index: u64, ephemeral_id: EphemeralId },
    AdvertiseStart { at: u64, beacon: BeaconMessage },
    AdvertiseStop { at: u64 },
    ScanStart { at: u64 },
    ScanStop { at: u64 },
}

impl ProtocolAction {
    pub fn at(&self) -> u64 {
        match self {
            ProtocolAction::FrameRotated { at, .. }
            | ProtocolAction::AdvertiseStart { at, .. }
            | ProtocolAction::AdvertiseStop { at }
            | ProtocolAction::ScanStart { at }
            | ProtocolAction::ScanStop { at } => *at,
        }
    }

    fn order(&self) -> u8 {
        match self {
            ProtocolAction::FrameRotated { .. } => 0,
            ProtocolAction::AdvertiseStop { .. } | ProtocolAction::ScanStop { .. } => 1,
            ProtocolAction::AdvertiseStart { .. } | ProtocolAction::ScanStart { .. } => 2,
        }
    }
}

/// Ask the transport to run a key exchange with a neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeRequest {
    pub own_ephemeral_id: EphemeralId,
    pub peer_ephemeral_id: EphemeralId,
    pub frame_index: u64,
    /// The lexicographically smaller identifier starts the connection.
    pub initiator: bool,
}

/// What one side sends during the key exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeOffer {
    pub ephemeral_id: EphemeralId,
    pub public_key: PublicKeyBytes,
    pub frame_index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeOutcome {
    Established(EncounterToken),
    /// Key agreement postponed until the device charges.
    Deferred,
}

#[derive(Debug, Clone)]
struct PendingDerivation {
    peer: EphemeralId,
    peer_public: PublicKeyBytes,
    frame_index: u64,
    start_time: u64,
    duration: u64,
    max_signal_strength: i16,
}

struct ActiveFrame {
    keypair: FrameKeyPair,
    ephemeral_id: EphemeralId,
}

/// Secret-free device state for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSnapshot {
    pub frame_index: Option<u64>,
    pub ephemeral_id: Option<EphemeralId>,
    pub neighbors: usize,
    pub open_channels: usize,
    pub pending_derivations: usize,
    pub tokens: Vec<TokenSummary>,
}

pub struct Device {
    config: DeviceConfig,
    key_seed: [u8; 32],
    clock: Option<u64>,
    frame: Option<ActiveFrame>,
    retained_keys: BTreeMap<u64, FrameKeyPair>,
    neighbors: BTreeMap<EphemeralId, NeighborObservation>,
    store: TokenStore,
    pending: Vec<PendingDerivation>,
    channels: ChannelPool,
    uploaded: BTreeSet<TokenHash>,
}

impl Device {
    pub fn new(config: DeviceConfig, key_seed: [u8; 32]) -> Self {
        Self {
            store: TokenStore::new(config.retention_days),
            config,
            key_seed,
            clock: None,
            frame: None,
            retained_keys: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            pending: Vec::new(),
            channels: ChannelPool::default(),
            uploaded: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn policy(&self) -> &TimeFramePolicy {
        &self.config.policy
    }

    pub fn advertising(&self) -> DutyCycle {
        DutyCycle::advertising(self.config.advertise_phase)
    }

    pub fn scanning(&self) -> DutyCycle {
        DutyCycle::scanning(self.config.scan_phase)
    }

    pub fn store(&self) -> &TokenStore {
        &self.store
    }

    pub fn channels(&self) -> &ChannelPool {
        &self.channels
    }

    /// Ephemeral identifier this device uses in `frame_index`.
    pub fn ephemeral_id_for_frame(&self, frame_index: u64) -> EphemeralId {
        derive_ephemeral_id(&self.key_seed, frame_index)
    }

    fn keypair_for_frame(&self, frame_index: u64) -> FrameKeyPair {
        let mut rng = ChaCha20Rng::from_seed(self.key_seed);
        generate_frame_keypair(frame_index, &mut rng)
    }

    /// Rotates the frame keypair and identifier if `now` left the current frame.
    fn sync_frame(&mut self, now: u64) -> Option<ProtocolAction> {
        let frame_index = self.config.policy.frame_index(now);
        if self.frame.as_ref().is_some_and(|f| f.keypair.frame_index() == frame_index) {
            return None;
        }
        let keypair = self.keypair_for_frame(frame_index);
        let ephemeral_id = self.ephemeral_id_for_frame(frame_index);
        if let Some(old) = self.frame.take() {
            let still_needed = self.pending.iter().any(|p| p.frame_index == old.keypair.frame_index());
            if still_needed {
                self.retained_keys.insert(old.keypair.frame_index(), old.keypair);
            }
        }
        let gap = self.config.continuity_gap;
        self.neighbors.retain(|_, o| now.saturating_sub(o.last_seen) <= gap);
        self.frame = Some(ActiveFrame { keypair, ephemeral_id });
        Some(ProtocolAction::FrameRotated {
            at: self.config.policy.frame_start(frame_index).max(self.clock.unwrap_or(now)),
            frame_index,
            ephemeral_id,
        })
    }

    pub fn current_frame(&mut self, now: u64) -> u64 {
        self.sync_frame(now);
        self.frame.as_ref().map(|f| f.keypair.frame_index()).unwrap_or_default()
    }

    pub fn beacon(&mut self, now: u64) -> BeaconMessage {
        self.sync_frame(now);
        BeaconMessage {
            uuid: APP_UUID,
            ephemeral_id: self.frame.as_ref().expect("frame synced").ephemeral_id,
            carries_pubkey_offer: true,
        }
    }

    pub fn offer(&mut self, now: u64) -> HandshakeOffer {
        self.sync_frame(now);
        let frame = self.frame.as_ref().expect("frame synced");
        HandshakeOffer {
            ephemeral_id: frame.ephemeral_id,
            public_key: *frame.keypair.public_key(),
            frame_index: frame.keypair.frame_index(),
        }
    }

    /// Moves the clock to `now` and reports everything that happened in
    /// `[previous, now)`. The first call only starts the clock.
    pub fn advance_clock(&mut self, now: u64) -> Vec<ProtocolAction> {
        let mut actions = Vec::new();
        let Some(from) = self.clock else {
            if let Some(a) = self.sync_frame(now) {
                actions.push(a);
            }
            self.clock = Some(now);
            return actions;
        };
        assert!(now >= from, "device clock must not run backwards");
        let policy = self.config.policy;
        let adv = self.advertising();
        let scan = self.scanning();
        let mut boundaries: Vec<u64> = Vec::new();
        let first_frame = policy.frame_index(from) + 1;
        let mut f = first_frame;
        while policy.frame_start(f) < now {
            boundaries.push(policy.frame_start(f));
            f += 1;
        }
        let mut events: Vec<ProtocolAction> = Vec::new();
        for at in boundaries {
            let frame_index = policy.frame_index(at);
            events.push(ProtocolAction::FrameRotated {
                at,
                frame_index,
                ephemeral_id: self.ephemeral_id_for_frame(frame_index),
            });
        }
        for at in adv.openings(from, now) {
            let frame_index = policy.frame_index(at);
            events.push(ProtocolAction::AdvertiseStart {
                at,
                beacon: BeaconMessage {
                    uuid: APP_UUID,
                    ephemeral_id: self.ephemeral_id_for_frame(frame_index),
                    carries_pubkey_offer: true,
                },
            });
        }
        for (_, end) in adv.windows(from.saturating_sub(adv.on), now) {
            if end >= from && end < now && !adv.is_on(end) {
                events.push(ProtocolAction::AdvertiseStop { at: end });
            }
        }
        for at in scan.openings(from, now) {
            events.push(ProtocolAction::ScanStart { at });
        }
        for (_, end) in scan.windows(from.saturating_sub(scan.on), now) {
            if end >= from && end < now && !scan.is_on(end) {
                events.push(ProtocolAction::ScanStop { at: end });
            }
        }
        events.sort_by_key(|a| (a.at(), a.order()));
        events.dedup();
        self.sync_frame(now);
        self.clock = Some(now);
        actions.extend(events);
        actions
    }

    /// Records a received advertisement. Returns a handshake request once the
    /// neighbor has been seen continuously for the minimum encounter duration.
    pub fn on_beacon(&mut self, beacon: &BeaconMessage, rssi: i16, now: u64) -> Option<HandshakeRequest> {
        if beacon.uuid != APP_UUID || !self.scanning().is_on(now) {
            return None;
        }
        self.sync_frame(now);
        let frame = self.frame.as_ref().expect("frame synced");
        let own = frame.ephemeral_id;
        let frame_index = frame.keypair.frame_index();
        let peer = beacon.ephemeral_id;
        if peer == own {
            return None;
        }
        let gap = self.config.continuity_gap;
        let obs = match self.neighbors.entry(peer) {
            std::collections::btree_map::Entry::Vacant(v) => v.insert(NeighborObservation::new(peer, now, rssi)),
            std::collections::btree_map::Entry::Occupied(o) => {
                let obs = o.into_mut();
                if now.saturating_sub(obs.last_seen) > gap {
                    *obs = NeighborObservation::new(peer, now, rssi);
                } else {
                    obs.last_seen = obs.last_seen.max(now);
                    obs.rssi_samples.push((now, rssi));
                }
                obs
            }
        };
        let first_seen = obs.first_seen;
        let max_rssi = obs.max_rssi();
        let frame_end = self.config.policy.frame_end(frame_index);
        let observed = now.min(frame_end) - first_seen.min(now.min(frame_end));

        if let Some(token) = self.store.get_mut(frame_index, &peer) {
            token.duration = token.duration.max(observed);
            token.max_signal_strength = token.max_signal_strength.max(max_rssi);
            return None;
        }
        if let Some(p) = self.pending.iter_mut().find(|p| p.frame_index == frame_index && p.peer == peer) {
            p.duration = p.duration.max(observed);
            p.max_signal_strength = p.max_signal_strength.max(max_rssi);
            return None;
        }
        if now - first_seen < self.config.policy.min_encounter_duration {
            return None;
        }
        if self.channels.is_open(&peer) {
            return None;
        }
        Some(HandshakeRequest { own_ephemeral_id: own, peer_ephemeral_id: peer, frame_index, initiator: own < peer })
    }

    /// Reserves a connection slot for a handshake with `peer`.
    pub fn open_channel(&mut self, peer: EphemeralId, now: u64) -> ChannelGrant {
        self.channels.request(peer, now)
    }

    /// Releases the slot held for `peer`; returns a queued peer that now holds
    /// a slot, if any.
    pub fn close_channel(&mut self, peer: &EphemeralId, now: u64) -> Option<EphemeralId> {
        self.channels.release(peer, now)
    }

    /// Finishes a key exchange with `peer` using its offered public key.
    pub fn complete_handshake(&mut self, offer: &HandshakeOffer, now: u64) -> Result<HandshakeOutcome, ProtocolError> {
        self.sync_frame(now);
        let frame = self.frame.as_ref().expect("frame synced");
        let own_frame = frame.keypair.frame_index();
        if offer.frame_index != own_frame {
            return Err(ProtocolError::FrameMismatch { own: own_frame, peer: offer.frame_index });
        }
        crate::crypto::validate_public_key(&offer.public_key)?;
        let peer = offer.ephemeral_id;
        let (first_seen, max_rssi) =
            self.neighbors.get(&peer).map(|o| (o.first_seen, o.max_rssi())).unwrap_or((now, i16::MIN));
        let duration = now.saturating_sub(first_seen);

        if self.config.deferred_derivation {
            let exists = self.store.contains(own_frame, &peer)
                || self.pending.iter().any(|p| p.frame_index == own_frame && p.peer == peer);
            if !exists {
                self.pending.push(PendingDerivation {
                    peer,
                    peer_public: offer.public_key,
                    frame_index: own_frame,
                    start_time: now,
                    duration,
                    max_signal_strength: max_rssi,
                });
            }
            return Ok(HandshakeOutcome::Deferred);
        }

        let secret = derive_token(&frame.keypair, &offer.public_key)?;
        let token = EncounterToken {
            secret,
            start_time: now,
            duration,
            max_signal_strength: max_rssi,
            frame_index: own_frame,
            peer_hint: peer,
        };
        self.store.insert(token.clone());
        Ok(HandshakeOutcome::Established(self.store.get_mut(own_frame, &peer).map(|t| t.clone()).unwrap_or(token)))
    }

    /// Runs all postponed key agreements; returns the number of new tokens.
    pub fn charge(&mut self, now: u64) -> usize {
        self.sync_frame(now);
        let pending = std::mem::take(&mut self.pending);
        let mut created = 0;
        for p in pending {
            let keypair = match &self.frame {
                Some(f) if f.keypair.frame_index() == p.frame_index => f.keypair.clone(),
                _ => match self.retained_keys.get(&p.frame_index) {
                    Some(k) => k.clone(),
                    None => continue,
                },
            };
            let Ok(secret) = derive_token(&keypair, &p.peer_public) else {
                continue;
            };
            created += usize::from(self.store.insert(EncounterToken {
                secret,
                start_time: p.start_time,
                duration: p.duration,
                max_signal_strength: p.max_signal_strength,
                frame_index: p.frame_index,
                peer_hint: p.peer,
            }));
        }
        self.retained_keys.clear();
        created
    }

    pub fn purge_expired(&mut self, now: u64) -> usize {
        self.store.purge_expired(now)
    }

    /// Remembers hashes this device published so its own records are never
    /// matched against itself.
    pub fn mark_uploaded<'a>(&mut self, hashes: impl IntoIterator<Item = &'a TokenHash>) {
        self.uploaded.extend(hashes);
    }

    pub fn has_uploaded(&self, hash: &TokenHash) -> bool {
        self.uploaded.contains(hash)
    }

    pub fn snapshot(&self) -> DeviceSnapshot {
        DeviceSnapshot {
            frame_index: self.frame.as_ref().map(|f| f.keypair.frame_index()),
            ephemeral_id: self.frame.as_ref().map(|f| f.ephemeral_id),
            neighbors: self.neighbors.len(),
            open_channels: self.channels.open_count(),
            pending_derivations: self.pending.len(),
            tokens: self.store.iter().map(EncounterToken::summary).collect(),
        }
    }
}
