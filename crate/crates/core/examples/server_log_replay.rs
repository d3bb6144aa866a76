//! The server persists every accepted upload to an append-only log and
//! rebuilds the same feed and statistics after a restart.

mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tracecorona::authority::HealthAuthority;
use tracecorona::client::{Device, DeviceConfig};
use tracecorona::server::{replay_log, ServerConfig, TracingServer};

fn open(path: &std::path::Path) -> TracingServer {
    TracingServer::with_log(Arc::new(HealthAuthority::new(3)), ServerConfig::default(), path).unwrap()
}

fn main() {
    let dir = std::env::temp_dir().join(format!("tc-log-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("server.log");

    let mut alice = Device::new(DeviceConfig::default(), [1; 32]);
    let mut bob = Device::new(DeviceConfig::default(), [2; 32]);
    common::meet(&mut alice, &mut bob, 1_800, 2_700, -60, false).unwrap();

    let before = {
        let server = open(&path);
        let tan = server.authority().issue_tan(b"alice", 0);
        server.upload_infected(&tan.value, &alice.store().upload_records(), 0).unwrap();
        server.advance_epoch();
        (server.export_records(), server.stats_snapshot())
    };
    println!("log entries written: {}", replay_log(&path).unwrap().len());

    let restarted = open(&path);
    println!("records identical after restart: {}", restarted.export_records() == before.0);
    println!("stats identical after restart: {}", restarted.stats_snapshot() == before.1);
    let feed = restarted.fetch_feed(0, &mut ChaCha20Rng::seed_from_u64(0));
    println!("feed after restart: {} record(s)", feed.len());
    std::fs::remove_dir_all(&dir).unwrap();
}
