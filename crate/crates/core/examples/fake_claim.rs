//! A second-level upload needs the secret of a token someone already
//! published. Guessing fails; only a real contact of an infected user gets in.

mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tracecorona::authority::HealthAuthority;
use tracecorona::client::{Device, DeviceConfig};
use tracecorona::crypto::TokenSecret;
use tracecorona::server::{ServerConfig, TracingServer};
use tracecorona::sim::{run_scenario, scenarios, AdversaryKind, Scheme};

fn main() {
    let mut alice = Device::new(DeviceConfig::default(), [1; 32]);
    let mut bob = Device::new(DeviceConfig::default(), [2; 32]);
    let (_, bob_token) = common::meet(&mut alice, &mut bob, 36_000, 36_900, -60, false).unwrap();

    let server = TracingServer::new(Arc::new(HealthAuthority::new(1)), ServerConfig::default());
    let tan = server.authority().issue_tan(b"alice", 0);
    server.upload_infected(&tan.value, &alice.store().upload_records(), 0).unwrap();

    let fake = vec![bob_token.to_upload_record()];
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let attempts = 10_000;
    let accepted = (0..attempts)
        .filter(|_| {
            let guess = TokenSecret::from_slice(&rng.gen::<[u8; 32]>()).unwrap();
            server.upload_second_level(&guess, &fake).is_ok()
        })
        .count();
    println!("random proofs accepted: {accepted}/{attempts}");
    println!("bob's real secret: {:?}", server.upload_second_level(&bob_token.secret, &fake));

    let base = scenarios::load("fake_claim").unwrap();
    for scheme in Scheme::ALL {
        let mut cfg = base.clone();
        cfg.scheme = scheme;
        let report = run_scenario(&cfg).unwrap();
        if let Some(a) = report.attack(AdversaryKind::FakeClaimer) {
            println!(
                "{scheme:<14} claims accepted {}/{} (colluding {})",
                a.successes, a.attempts, a.colluding_accepted
            );
        }
    }
}
