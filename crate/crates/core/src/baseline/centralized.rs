use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{derive_tempid_bluetrace, derive_tempid_centralized, TempId, UserId, CENTRALIZED_SLOTS_PER_DAY};
use crate::time::DAY_SECS;

pub const CENTRALIZED_SLOT_SECS: u64 = DAY_SECS / CENTRALIZED_SLOTS_PER_DAY;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Registration {
    Anonymous,
    PhoneNumber(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempIdVariant {
    /// `HKDF(UserID, t_k)`.
    #[default]
    Generic,
    /// Server-keyed derivation with a fresh IV per identifier.
    BlueTrace,
}

pub fn slot_of(t: u64) -> u64 {
    t / CENTRALIZED_SLOT_SECS
}

/// Server of the centralized baseline. It alone maps TempIDs to users.
pub struct CentralizedServer {
    variant: TempIdVariant,
    master_key: [u8; 32],
    rng: ChaCha20Rng,
    registry: BTreeMap<UserId, Registration>,
    auth_tags: BTreeMap<UserId, [u8; 16]>,
    issued: HashMap<TempId, (UserId, u64)>,
    uploads: Vec<(UserId, TempId, u64)>,
    edges: BTreeSet<(UserId, UserId)>,
    /// Accepted lag, in slots, between broadcast and observation.
    pub slot_tolerance: u64,
}

impl CentralizedServer {
    pub fn new(variant: TempIdVariant, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let master_key = rng.gen();
        Self {
            variant,
            master_key,
            rng,
            registry: BTreeMap::new(),
            auth_tags: BTreeMap::new(),
            issued: HashMap::new(),
            uploads: Vec::new(),
            edges: BTreeSet::new(),
            slot_tolerance: 1,
        }
    }

    pub fn variant(&self) -> TempIdVariant {
        self.variant
    }

    pub fn register(&mut self, registration: Registration) -> UserId {
        loop {
            let id = UserId(self.rng.gen());
            if self.registry.contains_key(&id) {
                continue;
            }
            self.registry.insert(id, registration);
            let tag = self.rng.gen();
            self.auth_tags.insert(id, tag);
            return id;
        }
    }

    pub fn registration(&self, user: &UserId) -> Option<&Registration> {
        self.registry.get(user)
    }

    /// TempID for `user` in absolute slot `t_k`.
    pub fn tempid(&mut self, user: &UserId, t_k: u64) -> TempId {
        match self.variant {
            TempIdVariant::Generic => derive_tempid_centralized(&user.0, t_k),
            TempIdVariant::BlueTrace => {
                let iv: [u8; 16] = self.rng.gen();
                let tag = self.auth_tags[user];
                let id = derive_tempid_bluetrace(&user.0, t_k, &iv, &tag, &self.master_key);
                self.issued.insert(id, (*user, t_k));
                id
            }
        }
    }

    /// One day's batch of TempIDs handed to a registered client.
    pub fn issue_day(&mut self, user: &UserId, day: u64) -> Vec<TempId> {
        (0..CENTRALIZED_SLOTS_PER_DAY).map(|s| self.tempid(user, day * CENTRALIZED_SLOTS_PER_DAY + s)).collect()
    }

    fn resolve(&self, id: &TempId, observed_at: u64) -> Option<UserId> {
        let slot = slot_of(observed_at);
        let valid = |t_k: u64| t_k <= slot && slot - t_k <= self.slot_tolerance;
        match self.variant {
            TempIdVariant::Generic => {
                let lo = slot.saturating_sub(self.slot_tolerance);
                self.registry
                    .keys()
                    .copied()
                    .find(|user| (lo..=slot).any(|t_k| derive_tempid_centralized(&user.0, t_k) == *id))
            }
            TempIdVariant::BlueTrace => self.issued.get(id).filter(|(_, t_k)| valid(*t_k)).map(|(u, _)| *u),
        }
    }

    /// Users whose TempIDs appear in an infected user's upload.
    pub fn centralized_match(&mut self, uploader: &UserId, uploaded: &[(TempId, u64)]) -> Vec<UserId> {
        let mut found = BTreeSet::new();
        for (id, t) in uploaded {
            self.uploads.push((*uploader, *id, *t));
            if let Some(user) = self.resolve(id, *t) {
                if user != *uploader {
                    found.insert(user);
                    let edge = if *uploader < user { (*uploader, user) } else { (user, *uploader) };
                    self.edges.insert(edge);
                }
            }
        }
        found.into_iter().collect()
    }

    /// Contact edges among uploaders and their resolved contacts.
    pub fn contact_graph(&self) -> &BTreeSet<(UserId, UserId)> {
        &self.edges
    }

    pub fn uploads(&self) -> &[(UserId, TempId, u64)] {
        &self.uploads
    }
}

/// Client of the centralized baseline: broadcasts server-issued TempIDs and
/// logs what it hears.
#[derive(Debug, Clone)]
pub struct CentralizedClient {
    pub user_id: UserId,
    batches: BTreeMap<u64, Vec<TempId>>,
    observations: Vec<(TempId, u64)>,
}

impl CentralizedClient {
    pub fn new(user_id: UserId) -> Self {
        Self { user_id, batches: BTreeMap::new(), observations: Vec::new() }
    }

    pub fn tempid_at(&mut self, server: &mut CentralizedServer, t: u64) -> TempId {
        let slot = slot_of(t);
        let day = slot / CENTRALIZED_SLOTS_PER_DAY;
        let user = self.user_id;
        let batch = self.batches.entry(day).or_insert_with(|| server.issue_day(&user, day));
        batch[(slot % CENTRALIZED_SLOTS_PER_DAY) as usize]
    }

    pub fn observe(&mut self, id: TempId, t: u64) {
        self.observations.push((id, t));
    }

    pub fn observations_since(&self, since: u64) -> Vec<(TempId, u64)> {
        self.observations.iter().filter(|o| o.1 >= since).copied().collect()
    }
}
