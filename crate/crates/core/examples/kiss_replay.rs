//! Replaying identifiers derived from a freshly published daily key. The
//! decentralized scheme accepts them when it publishes the current day's key
//! and does not check the replay age; closing that gap stops the attack.

use tracecorona::sim::{run_scenario, scenarios, AdversaryKind};

fn main() {
    for name in ["kiss_replay", "kiss_replay_fixed"] {
        let cfg = scenarios::load(name).unwrap();
        let r = run_scenario(&cfg).unwrap();
        let a = r.attack(AdversaryKind::KissReplay).unwrap();
        println!("{name:<18} kiss_bug={:<5} replays accepted {}/{}", cfg.baseline.kiss_bug, a.successes, a.attempts);
        for n in r.notifications.iter().filter(|n| !n.genuine) {
            println!("  false alarm for {} on day {} via {}", n.device, n.day, n.attack.as_deref().unwrap_or("?"));
        }
    }
}
