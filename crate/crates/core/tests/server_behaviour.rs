//! Tracing server, health authority and the wire protocol.

use std::collections::{BTreeMap, HashSet};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};

use base64::Engine;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tracecorona::authority::HealthAuthority;
use tracecorona::crypto::{encrypt_metadata, token_hash, TokenSecret};
use tracecorona::server::wire::{serve_tcp, Clock, Loopback, TcpTransport, WireClient, WireService};
use tracecorona::server::{
    replay_log, LogEntry, NotificationKind, RecordTag, RejectReason, ServerConfig, TokenUploadRecord, TracingServer,
};

fn server() -> TracingServer {
    TracingServer::new(Arc::new(HealthAuthority::new(1)), ServerConfig::default())
}

fn secret(rng: &mut impl Rng) -> TokenSecret {
    TokenSecret::from_slice(&rng.gen::<[u8; 32]>()).unwrap()
}

fn record(s: &TokenSecret, t: u64) -> TokenUploadRecord {
    TokenUploadRecord::new(token_hash(s), encrypt_metadata(s, t))
}

fn upload(server: &TracingServer, records: &[TokenUploadRecord]) {
    let tan = server.authority().issue_tan(b"case", 0);
    server.upload_infected(&tan.value, records, 0).unwrap();
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new(counts.len() as f64 - 1.0).unwrap().cdf(stat)
}

#[test]
fn batch_positions_are_uniform() {
    let s = server();
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let batch1: Vec<_> = (0..10).map(|i| record(&secret(&mut rng), i)).collect();
    let batch2: Vec<_> = (0..10).map(|i| record(&secret(&mut rng), i)).collect();
    upload(&s, &batch1);
    upload(&s, &batch2);
    s.advance_epoch();
    let first: HashSet<_> = batch1.iter().map(|r| r.hash).collect();
    let mut counts = [0u64; 20];
    for draw in 0..200 {
        let feed = s.fetch_feed(0, &mut ChaCha20Rng::seed_from_u64(draw));
        assert_eq!(feed.len(), 20);
        for (pos, r) in feed.records.iter().enumerate() {
            if first.contains(&r.hash) {
                counts[pos] += 1;
            }
        }
    }
    let p = chi_square_p(&counts);
    assert!(p > 0.01, "positions {counts:?}, p = {p}");
}

#[test]
fn large_upload_is_permuted_without_adjacency_bias() {
    let s = server();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let batch: Vec<_> = (0..280).map(|i| record(&secret(&mut rng), i)).collect();
    upload(&s, &batch);
    s.advance_epoch();
    let stored: Vec<_> = s.export_records().into_iter().map(|(_, r)| r).collect();
    let mut adjacent = 0u64;
    for draw in 0..100 {
        let feed = s.fetch_feed(0, &mut ChaCha20Rng::seed_from_u64(draw));
        let mut sorted = feed.records.clone();
        sorted.sort_by_key(|r| r.hash);
        let mut expect = batch.clone();
        expect.sort_by_key(|r| r.hash);
        assert_eq!(sorted, expect);
        for w in feed.records.windows(2) {
            let i = stored.iter().position(|r| r.hash == w[0].hash).unwrap();
            if stored.get(i + 1).is_some_and(|n| n.hash == w[1].hash) {
                adjacent += 1;
            }
        }
    }
    // a uniform permutation keeps 279/280 neighbour pairs per draw on
    // average, variance close to one
    assert!((60..=140).contains(&adjacent), "adjacent pairs {adjacent}");
}

#[test]
fn forged_proofs_never_verify_and_genuine_ones_do() {
    let s = server();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let genuine: Vec<_> = (0..100).map(|_| secret(&mut rng)).collect();
    upload(&s, &genuine.iter().map(|k| record(k, 5)).collect::<Vec<_>>());
    let payload = vec![record(&secret(&mut rng), 7)];
    let forged = (0..10_000).filter(|_| s.upload_second_level(&secret(&mut rng), &payload).is_ok()).count();
    assert_eq!(forged, 0);
    let accepted = genuine.iter().filter(|k| s.upload_second_level(k, &payload).is_ok()).count();
    assert_eq!(accepted, 100);
}

#[test]
fn two_valid_proofs_and_a_forgery_is_not_a_superspreader() {
    let s = server();
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let real: Vec<_> = (0..3).map(|_| secret(&mut rng)).collect();
    upload(&s, &real.iter().map(|k| record(k, 1)).collect::<Vec<_>>());
    let payload = vec![record(&secret(&mut rng), 2)];
    let mixed = vec![real[0], real[1], secret(&mut rng)];
    assert_eq!(s.upload_superspreader_proof(&mixed, &payload), Err(RejectReason::InsufficientValidProofs));
    assert_eq!(s.upload_superspreader_proof(&real, &payload), Ok(1));
}

#[test]
fn concurrent_tan_verification_accepts_once() {
    let ha = Arc::new(HealthAuthority::new(14));
    for round in 0..5 {
        let tan = ha.issue_tan(b"ctx", 0).value;
        let accepted = Arc::new(AtomicUsize::new(0));
        let barrier = Arc::new(Barrier::new(100));
        let handles: Vec<_> = (0..100)
            .map(|_| {
                let (ha, tan, accepted, barrier) = (ha.clone(), tan.clone(), accepted.clone(), barrier.clone());
                std::thread::spawn(move || {
                    barrier.wait();
                    if ha.verify_tan(&tan, 1).is_accepted() {
                        accepted.fetch_add(1, Ordering::SeqCst);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(accepted.load(Ordering::SeqCst), 1, "round {round}");
    }
}

#[test]
fn concurrent_uploads_with_one_tan_ingest_once() {
    let s = Arc::new(server());
    let tan = s.authority().issue_tan(b"ctx", 0).value;
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let records = vec![record(&secret(&mut rng), 1)];
    let barrier = Arc::new(Barrier::new(100));
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let (s, tan, records, barrier) = (s.clone(), tan.clone(), records.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                s.upload_infected(&tan, &records, 0).is_ok()
            })
        })
        .collect();
    let ok = handles.into_iter().map(|h| h.join().unwrap()).filter(|b| *b).count();
    assert_eq!(ok, 1);
    assert_eq!(s.export_records().len(), 1);
    assert_eq!(s.stats_snapshot().infected_uploads, 1);
}

#[test]
fn authority_state_holds_no_token_material() {
    let s = server();
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    let secrets: Vec<_> = (0..20).map(|_| secret(&mut rng)).collect();
    upload(&s, &secrets.iter().map(|k| record(k, 3)).collect::<Vec<_>>());
    let state = format!("{:?}", s.authority().export_state());
    for k in &secrets {
        assert!(!state.contains(&k.to_hex()));
        assert!(!state.contains(&token_hash(k).to_hex()));
    }
    assert_eq!(s.authority().export_state().len(), 1);
}

#[test]
fn log_stores_one_record_per_line() {
    let dir = std::env::temp_dir().join(format!("tc-granularity-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("log");
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let batch: Vec<_> = (0..5).map(|i| record(&secret(&mut rng), i)).collect();
    {
        let s = TracingServer::with_log(Arc::new(HealthAuthority::new(1)), ServerConfig::default(), &path).unwrap();
        upload(&s, &batch);
        s.advance_epoch();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let mut stored = 0;
    for line in text.lines() {
        let raw = base64::engine::general_purpose::STANDARD.decode(line).unwrap();
        if let LogEntry::Record { epoch, record } = LogEntry::decode(&raw).unwrap() {
            assert_eq!(epoch, 0);
            assert_eq!(record.tag, RecordTag::Direct);
            assert!(batch.contains(&record));
            stored += 1;
        }
    }
    assert_eq!(stored, 5);
    assert_eq!(replay_log(&path).unwrap().len(), text.lines().count());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn loopback_and_tcp_give_identical_answers() {
    let make = || {
        let s = TracingServer::new(Arc::new(HealthAuthority::new(18)), ServerConfig::default());
        Arc::new(WireService::new(Arc::new(s), 18, Clock::Manual(AtomicU64::new(0))))
    };
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    let infected: Vec<_> = (0..4).map(|_| secret(&mut rng)).collect();
    let records: Vec<_> = infected.iter().map(|k| record(k, 9)).collect();
    let second = vec![record(&secret(&mut rng), 10)];

    let mut local = WireClient::new(Loopback::new(make()));
    let a: Vec<String> = (0..8).map(|step| run_step(&mut local, step, &infected, &records, &second)).collect();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let service = make();
    let server_thread = {
        let stop = stop.clone();
        std::thread::spawn(move || serve_tcp(listener, service, stop))
    };
    let b = {
        let mut remote = WireClient::new(TcpTransport::connect(addr).unwrap());
        let b: Vec<String> = (0..8).map(|step| run_step(&mut remote, step, &infected, &records, &second)).collect();
        assert_eq!((local.bytes_sent, local.bytes_received), (remote.bytes_sent, remote.bytes_received));
        b
    };
    stop.store(true, Ordering::SeqCst);
    server_thread.join().unwrap().unwrap();
    assert_eq!(a, b);
}

fn run_step<T: tracecorona::server::wire::Transport>(
    c: &mut WireClient<T>,
    step: u8,
    infected: &[TokenSecret],
    records: &[TokenUploadRecord],
    second: &[TokenUploadRecord],
) -> String {
    match step {
        0 => {
            let tan = c.issue_tan(b"x").unwrap();
            format!("{:?} {:?}", c.upload_infected(&tan, records.to_vec()), c.upload_infected(&tan, records.to_vec()))
        }
        1 => format!("{:?}", c.close_epoch()),
        2 => format!("{:?}", c.upload_second_level(infected[0], second.to_vec())),
        3 => format!("{:?}", c.upload_superspreader(infected[1..].to_vec(), second.to_vec())),
        4 => format!("{:?}", c.close_epoch()),
        5 => {
            let feed = c.fetch_feed(0).unwrap();
            let mut tags: BTreeMap<String, usize> = BTreeMap::new();
            for r in &feed.records {
                *tags.entry(format!("{:?}", r.tag)).or_default() += 1;
            }
            format!("{} {tags:?}", feed.feed_epoch)
        }
        6 => format!("{:?}", c.report(NotificationKind::SecondLevel)),
        _ => format!("{:?}", c.stats()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A client that always passes back the returned epoch sees every
    /// accepted record exactly once.
    #[test]
    fn feed_completeness(ops in proptest::collection::vec(0u8..3, 1..40), seed in any::<u64>()) {
        let s = server();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut accepted = Vec::new();
        let mut seen = Vec::new();
        let mut since = 0;
        for op in ops {
            match op {
                0 => {
                    let batch: Vec<_> = (0..rng.gen_range(1..4)).map(|i| record(&secret(&mut rng), i)).collect();
                    upload(&s, &batch);
                    accepted.extend(batch);
                }
                1 => { s.advance_epoch(); }
                _ => {
                    let feed = s.fetch_feed(since, &mut rng);
                    since = feed.feed_epoch;
                    seen.extend(feed.records);
                }
            }
        }
        s.advance_epoch();
        seen.extend(s.fetch_feed(since, &mut rng).records);
        accepted.sort_by_key(|r| r.hash);
        seen.sort_by_key(|r| r.hash);
        prop_assert_eq!(accepted, seen);
    }
}
