//! A network of sensors logs every beacon it hears. Under TraceCORONA no
//! identifier outlives its frame, so tracks stop at the frame length; in the
//! decentralized scheme a published daily key links a whole day.

use tracecorona::sim::{run_scenario, scenarios, Scheme};

fn main() {
    let base = scenarios::load("eavesdropper").unwrap();
    for scheme in Scheme::ALL {
        let mut cfg = base.clone();
        cfg.scheme = scheme;
        let r = run_scenario(&cfg).unwrap();
        println!("{scheme}: longest track {} s", r.max_linkability_window_s);
        for e in &r.linkability {
            println!(
                "  {:<6} {:>3} sightings, {:>3} identifiers, track {:>6} s",
                e.device, e.observations, e.distinct_identifiers, e.max_track_s
            );
            for d in &e.linked_days {
                println!(
                    "      day {:>2}: {} identifiers linked from one key ({} seen), complete: {}",
                    d.day, d.linked_identifiers, d.observed_identifiers, d.equals_ground_truth
                );
            }
        }
    }
}
