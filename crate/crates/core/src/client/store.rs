use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{encrypt_metadata, token_hash, EphemeralId, TokenHash, TokenSecret};
use crate::server::TokenUploadRecord;
use crate::time::DAY_SECS;

/// A shared encounter secret plus the locally recorded metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncounterToken {
    pub secret: TokenSecret,
    /// Local clock reading when the token was established; this is the
    /// timestamp that gets encrypted into the upload.
    pub start_time: u64,
    /// Observed contact duration, capped at the end of the frame.
    pub duration: u64,
    /// Strongest received signal, dBm.
    pub max_signal_strength: i16,
    pub frame_index: u64,
    /// The peer's ephemeral identifier in that frame. Never uploaded.
    pub peer_hint: EphemeralId,
}

impl EncounterToken {
    pub fn hash(&self) -> TokenHash {
        token_hash(&self.secret)
    }

    pub fn to_upload_record(&self) -> TokenUploadRecord {
        TokenUploadRecord::new(self.hash(), encrypt_metadata(&self.secret, self.start_time))
    }

    pub fn summary(&self) -> TokenSummary {
        TokenSummary {
            hash: self.hash(),
            start_time: self.start_time,
            duration: self.duration,
            max_signal_strength: self.max_signal_strength,
            frame_index: self.frame_index,
        }
    }
}

/// Secret-free view of a token for snapshots and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSummary {
    pub hash: TokenHash,
    pub start_time: u64,
    pub duration: u64,
    pub max_signal_strength: i16,
    pub frame_index: u64,
}

/// Local token set `K_i`, one token per (frame, peer).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStore {
    tokens: BTreeMap<(u64, EphemeralId), EncounterToken>,
    retention_days: u64,
}

impl Default for TokenStore {
    fn default() -> Self {
        Self::new(14)
    }
}

impl TokenStore {
    pub fn new(retention_days: u64) -> Self {
        Self { tokens: BTreeMap::new(), retention_days }
    }

    pub fn retention_days(&self) -> u64 {
        self.retention_days
    }

    /// Inserts unless a token for the same (frame, peer) already exists.
    pub fn insert(&mut self, token: EncounterToken) -> bool {
        let key = (token.frame_index, token.peer_hint);
        if self.tokens.contains_key(&key) {
            return false;
        }
        self.tokens.insert(key, token);
        true
    }

    pub fn contains(&self, frame_index: u64, peer: &EphemeralId) -> bool {
        self.tokens.contains_key(&(frame_index, *peer))
    }

    pub fn get_mut(&mut self, frame_index: u64, peer: &EphemeralId) -> Option<&mut EncounterToken> {
        self.tokens.get_mut(&(frame_index, *peer))
    }

    pub fn iter(&self) -> impl Iterator<Item = &EncounterToken> {
        self.tokens.values()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn find_by_hash(&self, hash: &TokenHash) -> Option<&EncounterToken> {
        self.tokens.values().find(|t| t.hash() == *hash)
    }

    /// Drops tokens older than the retention horizon; returns how many.
    pub fn purge_expired(&mut self, now: u64) -> usize {
        let horizon = self.retention_days * DAY_SECS;
        let before = self.tokens.len();
        self.tokens.retain(|_, t| now.saturating_sub(t.start_time) <= horizon);
        before - self.tokens.len()
    }

    /// Upload view without the tokens `exclude` selects. `self` is untouched.
    pub fn redact<F>(&self, mut exclude: F) -> TokenStore
    where
        F: FnMut(&EncounterToken) -> bool,
    {
        TokenStore {
            tokens: self.tokens.iter().filter(|(_, t)| !exclude(t)).map(|(k, t)| (*k, t.clone())).collect(),
            retention_days: self.retention_days,
        }
    }

    pub fn upload_records(&self) -> Vec<TokenUploadRecord> {
        self.tokens.values().map(EncounterToken::to_upload_record).collect()
    }
}

impl FromIterator<EncounterToken> for TokenStore {
    fn from_iter<I: IntoIterator<Item = EncounterToken>>(iter: I) -> Self {
        let mut store = TokenStore::default();
        for token in iter {
            store.insert(token);
        }
        store
    }
}
