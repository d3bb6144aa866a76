//! Tracing server: TAN-authenticated uploads, possession proofs and the
//! shuffled record feed.

mod log;
mod record;
pub mod wire;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{replay_log, AppendLog, LogEntry, StatEvent};
pub use record::{PublishedFeed, RecordTag, TokenUploadRecord};

use crate::authority::HealthAuthority;
use crate::crypto::{decrypt_metadata, token_hash, TokenHash, TokenSecret};
use crate::error::LogError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    #[error("invalid TAN")]
    InvalidTan,
    #[error("malformed record")]
    MalformedRecord,
    #[error("no matching infected token")]
    NoMatchingInfectedToken,
    #[error("insufficient valid proofs")]
    InsufficientValidProofs,
}

impl RejectReason {
    pub fn to_byte(self) -> u8 {
        match self {
            RejectReason::InvalidTan => 1,
            RejectReason::MalformedRecord => 2,
            RejectReason::NoMatchingInfectedToken => 3,
            RejectReason::InsufficientValidProofs => 4,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => RejectReason::InvalidTan,
            2 => RejectReason::MalformedRecord,
            3 => RejectReason::NoMatchingInfectedToken,
            4 => RejectReason::InsufficientValidProofs,
            _ => return None,
        })
    }
}

/// Records accepted by one upload.
pub type UploadResult = Result<usize, RejectReason>;

pub type ProofHasher = fn(&TokenSecret) -> TokenHash;

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub superspreader_threshold: usize,
    /// Hash used to locate the record a possession proof refers to.
    pub hasher: ProofHasher,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { superspreader_threshold: 3, hasher: token_hash }
    }
}

/// Kind of notification a client reports back anonymously.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    Direct,
    SecondLevel,
}

/// Anonymous aggregates for epidemiological analysis.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    /// Largest number of feed downloads within one epoch.
    pub active_users: u64,
    pub infected_uploads: u64,
    pub records_published: u64,
    pub second_level_uploads: u64,
    pub second_level_records: u64,
    pub superspreader_flags: u64,
    pub direct_notifications_reported: u64,
    pub second_level_notifications_reported: u64,
}

type RecordKey = (u64, TokenHash, u32);

#[derive(Default)]
struct State {
    current_epoch: u64,
    records: BTreeMap<RecordKey, TokenUploadRecord>,
    stats: ServerStats,
    fetches: BTreeMap<u64, u64>,
}

impl State {
    fn store(&mut self, epoch: u64, record: TokenUploadRecord) {
        let dup = self.records.range((epoch, record.hash, 0)..=(epoch, record.hash, u32::MAX)).count() as u32;
        self.records.insert((epoch, record.hash, dup), record);
        self.stats.records_published += 1;
    }

    fn apply_stat(&mut self, event: StatEvent) {
        let s = &mut self.stats;
        match event {
            StatEvent::InfectedUpload => s.infected_uploads += 1,
            StatEvent::SecondLevelUpload => s.second_level_uploads += 1,
            StatEvent::SuperspreaderFlag => s.superspreader_flags += 1,
            StatEvent::Notification(NotificationKind::Direct) => s.direct_notifications_reported += 1,
            StatEvent::Notification(NotificationKind::SecondLevel) => s.second_level_notifications_reported += 1,
            StatEvent::FeedFetch { epoch } => {
                let n = self.fetches.entry(epoch).or_default();
                *n += 1;
                s.active_users = s.active_users.max(*n);
            }
        }
    }

    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Record { epoch, record } => {
                if record.tag == RecordTag::SecondLevel {
                    self.stats.second_level_records += 1;
                }
                self.store(epoch, record)
            }
            LogEntry::EpochClosed { epoch } => self.current_epoch = epoch + 1,
            LogEntry::Stat(event) => self.apply_stat(event),
        }
    }

    /// Direct record that `proof` opens, skipping keys in `used`.
    fn proof_target(&self, hasher: ProofHasher, proof: &TokenSecret, used: &[RecordKey]) -> Option<RecordKey> {
        let hash = hasher(proof);
        self.records
            .iter()
            .filter(|(k, r)| k.1 == hash && r.tag == RecordTag::Direct && !used.contains(k))
            .find(|(_, r)| decrypt_metadata(proof, &r.ciphertext).is_ok())
            .map(|(k, _)| *k)
    }
}

pub struct TracingServer {
    authority: Arc<HealthAuthority>,
    config: ServerConfig,
    state: RwLock<State>,
    log: Option<Mutex<AppendLog>>,
}

impl TracingServer {
    pub fn new(authority: Arc<HealthAuthority>, config: ServerConfig) -> Self {
        Self { authority, config, state: RwLock::new(State::default()), log: None }
    }

    /// Opens or creates an append-only log at `path` and replays it.
    pub fn with_log(authority: Arc<HealthAuthority>, config: ServerConfig, path: &Path) -> Result<Self, LogError> {
        let mut state = State::default();
        if path.exists() {
            for entry in replay_log(path)? {
                state.apply(entry);
            }
        }
        Ok(Self { authority, config, state: RwLock::new(state), log: Some(Mutex::new(AppendLog::open(path)?)) })
    }

    pub fn authority(&self) -> &Arc<HealthAuthority> {
        &self.authority
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn write_log(&self, entries: &[LogEntry]) {
        if let Some(log) = &self.log {
            let mut log = log.lock().expect("log lock");
            for e in entries {
                // A failed append leaves memory ahead of disk; surface loudly.
                log.append(e).expect("append-only log write failed");
            }
            log.flush().expect("append-only log flush failed");
        }
    }

    fn commit(&self, state: &mut State, entries: Vec<LogEntry>) {
        self.write_log(&entries);
        for e in entries {
            state.apply(e);
        }
    }

    fn ingest(&self, state: &mut State, records: &[TokenUploadRecord], tag: RecordTag, event: StatEvent) -> usize {
        let epoch = state.current_epoch;
        let mut entries: Vec<LogEntry> = records
            .iter()
            .map(|r| LogEntry::Record { epoch, record: TokenUploadRecord { tag, ..r.clone() } })
            .collect();
        entries.push(LogEntry::Stat(event));
        let n = records.len();
        self.commit(state, entries);
        n
    }

    fn check_records(records: &[TokenUploadRecord]) -> Result<(), RejectReason> {
        if records.is_empty() || !records.iter().all(TokenUploadRecord::is_well_formed_upload) {
            return Err(RejectReason::MalformedRecord);
        }
        Ok(())
    }

    pub fn upload_infected(&self, tan: &str, records: &[TokenUploadRecord], now: u64) -> UploadResult {
        Self::check_records(records)?;
        let mut state = self.state.write().expect("state lock");
        if !self.authority.verify_tan(tan, now).is_accepted() {
            return Err(RejectReason::InvalidTan);
        }
        Ok(self.ingest(&mut state, records, RecordTag::Direct, StatEvent::InfectedUpload))
    }

    pub fn upload_second_level(&self, proof: &TokenSecret, records: &[TokenUploadRecord]) -> UploadResult {
        let mut state = self.state.write().expect("state lock");
        if state.proof_target(self.config.hasher, proof, &[]).is_none() {
            return Err(RejectReason::NoMatchingInfectedToken);
        }
        Self::check_records(records)?;
        Ok(self.ingest(&mut state, records, RecordTag::SecondLevel, StatEvent::SecondLevelUpload))
    }

    pub fn upload_superspreader_proof(&self, proofs: &[TokenSecret], records: &[TokenUploadRecord]) -> UploadResult {
        let mut state = self.state.write().expect("state lock");
        if proofs.len() < self.config.superspreader_threshold {
            return Err(RejectReason::InsufficientValidProofs);
        }
        let mut used = Vec::with_capacity(proofs.len());
        for proof in proofs {
            match state.proof_target(self.config.hasher, proof, &used) {
                Some(key) => used.push(key),
                None => return Err(RejectReason::InsufficientValidProofs),
            }
        }
        Self::check_records(records)?;
        Ok(self.ingest(&mut state, records, RecordTag::PossibleSuperspreader, StatEvent::SuperspreaderFlag))
    }

    /// Closed-epoch records with `since_epoch <= epoch`, in shuffled order.
    pub fn fetch_feed<R: RngCore + ?Sized>(&self, since_epoch: u64, rng: &mut R) -> PublishedFeed {
        let mut state = self.state.write().expect("state lock");
        let current = state.current_epoch;
        let mut records: Vec<TokenUploadRecord> = state
            .records
            .range((since_epoch, TokenHash([0; 16]), 0)..(current, TokenHash([0; 16]), 0))
            .map(|(_, r)| r.clone())
            .collect();
        records.shuffle(rng);
        self.commit(&mut state, vec![LogEntry::Stat(StatEvent::FeedFetch { epoch: current })]);
        PublishedFeed { records, feed_epoch: current }
    }

    /// Closes the open epoch; its records become downloadable.
    pub fn advance_epoch(&self) -> u64 {
        let mut state = self.state.write().expect("state lock");
        let closed = state.current_epoch;
        self.commit(&mut state, vec![LogEntry::EpochClosed { epoch: closed }]);
        state.current_epoch
    }

    pub fn current_epoch(&self) -> u64 {
        self.state.read().expect("state lock").current_epoch
    }

    pub fn report_notification(&self, kind: NotificationKind) {
        let mut state = self.state.write().expect("state lock");
        self.commit(&mut state, vec![LogEntry::Stat(StatEvent::Notification(kind))]);
    }

    pub fn stats_snapshot(&self) -> ServerStats {
        self.state.read().expect("state lock").stats.clone()
    }

    /// Every stored record with its ingestion epoch, in storage order.
    pub fn export_records(&self) -> Vec<(u64, TokenUploadRecord)> {
        self.state.read().expect("state lock").records.iter().map(|(k, r)| (k.0, r.clone())).collect()
    }
}
