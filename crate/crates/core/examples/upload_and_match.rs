//! Alice and Bob meet, Alice tests positive and uploads through the wire
//! protocol. Bob matches the published feed; Carol, who met nobody, does not.

mod common;

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use tracecorona::authority::HealthAuthority;
use tracecorona::client::{Device, DeviceConfig};
use tracecorona::exposure::{match_feed, RiskConfig};
use tracecorona::server::wire::{Clock, Loopback, WireClient, WireService};
use tracecorona::server::{ServerConfig, TracingServer};

fn main() {
    let config = DeviceConfig::default();
    let mut alice = Device::new(config, [1; 32]);
    let mut bob = Device::new(config, [2; 32]);
    let mut carol = Device::new(config, [3; 32]);
    let mut dave = Device::new(config, [4; 32]);
    common::meet(&mut alice, &mut bob, 36_000, 36_900, -60, false).expect("alice meets bob");
    common::meet(&mut carol, &mut dave, 50_000, 50_900, -60, false).expect("carol meets dave");

    let server = TracingServer::new(Arc::new(HealthAuthority::new(7)), ServerConfig::default());
    let service = Arc::new(WireService::new(Arc::new(server), 7, Clock::Manual(AtomicU64::new(200_000))));
    let mut wire = WireClient::new(Loopback::new(service.clone()));

    // the health authority hands alice a TAN together with her positive result
    let tan = wire.issue_tan(b"lab result 4711").unwrap();
    let records = alice.store().upload_records();
    println!("alice uploads {} record(s): {:?}", records.len(), wire.upload_infected(&tan, records.clone()).unwrap());
    println!("replaying the TAN: {:?}", wire.upload_infected(&tan, records).unwrap());
    println!("closed epoch {}", wire.close_epoch().unwrap());
    println!("upload traffic: {} bytes sent", wire.bytes_sent);

    let feed = wire.fetch_feed(0).unwrap();
    let epsilon = config.policy.epsilon;
    for (name, device) in [("bob", &bob), ("carol", &carol)] {
        let hits = match_feed(device.store(), &feed, epsilon, &RiskConfig::default());
        println!("{name}: {} notification(s)", hits.len());
        for n in hits {
            println!(
                "  {:?} encounter at {} (remote {}), {} s at {} dBm, risk {:.2}",
                n.level, n.encounter_time, n.remote_time, n.duration, n.max_signal_strength, n.risk_score
            );
        }
    }
    println!("stats: {:?}", wire.stats().unwrap());
}
