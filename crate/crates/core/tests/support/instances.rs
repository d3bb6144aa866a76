//! Random store/feed instances and the brute-force matching predicate.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use tracecorona::client::{EncounterToken, TokenStore};
use tracecorona::crypto::{decrypt_metadata, encrypt_metadata, token_hash, EphemeralId, TokenHash, TokenSecret};
use tracecorona::exposure::{risk_score, ExposureLevel, ExposureNotification, RiskConfig};
use tracecorona::server::{PublishedFeed, RecordTag, TokenUploadRecord};

fn secret(rng: &mut impl Rng) -> TokenSecret {
    TokenSecret::from_slice(&rng.gen::<[u8; 32]>()).unwrap()
}

/// A store of up to `max_store` tokens and a feed of up to `max_feed`
/// records mixing genuine uploads (with timestamp drift up to 90 s), foreign
/// records, wrong-key ciphertexts under a local hash, and garbage.
pub fn instance(rng: &mut impl Rng, max_store: usize, max_feed: usize) -> (TokenStore, PublishedFeed) {
    let n = rng.gen_range(0..=max_store);
    let m = rng.gen_range(0..=max_feed);
    let mut store = TokenStore::new(14);
    for i in 0..n {
        let frame_index = rng.gen_range(0..2_000u64);
        store.insert(EncounterToken {
            secret: secret(rng),
            start_time: frame_index * 900 + rng.gen_range(0..900),
            duration: rng.gen_range(300..900),
            max_signal_strength: rng.gen_range(-95..-40),
            frame_index,
            peer_hint: EphemeralId::from_slice(&(i as u128).to_be_bytes()).unwrap(),
        });
    }
    let tokens: Vec<EncounterToken> = store.iter().cloned().collect();
    let tags = [RecordTag::Direct, RecordTag::SecondLevel, RecordTag::PossibleSuperspreader];
    let mut records = Vec::with_capacity(m);
    for _ in 0..m {
        let tag = *tags.choose(rng).unwrap();
        let record = match (rng.gen_range(0..4), tokens.choose(rng)) {
            (0 | 1, Some(tok)) => {
                let drift = rng.gen_range(-90i64..=90);
                let t = tok.start_time.saturating_add_signed(drift);
                TokenUploadRecord::new(tok.hash(), encrypt_metadata(&tok.secret, t))
            }
            (2, Some(tok)) => TokenUploadRecord::new(tok.hash(), encrypt_metadata(&secret(rng), tok.start_time)),
            (3, _) => TokenUploadRecord::new(
                TokenHash::from_slice(&rng.gen::<[u8; 16]>()).unwrap(),
                (0..24).map(|_| rng.gen()).collect(),
            ),
            _ => {
                let s = secret(rng);
                TokenUploadRecord::new(token_hash(&s), encrypt_metadata(&s, rng.gen_range(0..2_000_000)))
            }
        };
        records.push(TokenUploadRecord { tag, ..record });
    }
    (store, PublishedFeed { records, feed_epoch: 1 })
}

/// Every (token, record) pair, checked independently.
pub fn brute_force(
    store: &TokenStore,
    feed: &PublishedFeed,
    epsilon: u64,
    risk: &RiskConfig,
) -> Vec<ExposureNotification> {
    let tokens: Vec<(&EncounterToken, TokenHash)> = store.iter().map(|t| (t, token_hash(&t.secret))).collect();
    let mut out = Vec::new();
    for record in &feed.records {
        for (tok, hash) in &tokens {
            if *hash != record.hash {
                continue;
            }
            let Ok(remote) = decrypt_metadata(&tok.secret, &record.ciphertext) else {
                continue;
            };
            if remote.abs_diff(tok.start_time) > epsilon {
                continue;
            }
            let level =
                if record.tag == RecordTag::SecondLevel { ExposureLevel::SecondLevel } else { ExposureLevel::Direct };
            out.push(ExposureNotification {
                matched_hash: *hash,
                level,
                superspreader_flag: record.tag == RecordTag::PossibleSuperspreader,
                encounter_time: tok.start_time,
                remote_time: remote,
                duration: tok.duration,
                max_signal_strength: tok.max_signal_strength,
                risk_score: risk_score(tok.duration, tok.max_signal_strength, risk),
            });
        }
    }
    out
}

/// Canonical order for multiset comparison.
pub fn canonical(mut v: Vec<ExposureNotification>) -> Vec<ExposureNotification> {
    v.sort_by(|a, b| {
        (a.encounter_time, a.matched_hash, a.level, a.superspreader_flag, a.remote_time).cmp(&(
            b.encounter_time,
            b.matched_hash,
            b.level,
            b.superspreader_flag,
            b.remote_time,
        ))
    });
    v
}
