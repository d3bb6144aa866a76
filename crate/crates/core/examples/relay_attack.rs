//! Relay attacks against each scheme. A delayed one-way relay cannot finish a
//! key exchange; a live two-way tunnel can, but only while clocks agree and
//! only for a handful of victims per frame.

use tracecorona::sim::{run_scenario, scenarios, AdversaryKind, Scheme};

fn main() {
    for name in ["relay_r1", "relay_r2", "relay_r2_skewed"] {
        let base = scenarios::load(name).unwrap();
        println!("{name}");
        for scheme in Scheme::ALL {
            let mut cfg = base.clone();
            cfg.scheme = scheme;
            let r = run_scenario(&cfg).unwrap();
            let a = r
                .attacks
                .iter()
                .find(|a| matches!(a.kind, AdversaryKind::RelayOneway | AdversaryKind::RelayTwoway))
                .unwrap();
            println!(
                "  {scheme:<14} false notifications {:>3}  victims {}/{}  tunnelled tokens {:>3}  failed handshakes {:>3}  max victims/frame {}",
                r.false_notification_count,
                a.successes,
                a.attempts,
                a.tokens_established,
                a.incomplete_handshakes,
                a.max_victims_per_frame
            );
        }
    }
}
