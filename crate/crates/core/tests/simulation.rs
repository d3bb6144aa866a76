//! Bundled scenarios end to end.

use tracecorona::exposure::ExposureLevel;
use tracecorona::sim::{run_scenario, scenarios, AdversaryKind, ScenarioConfig, ScenarioReport, Scheme, SimTime};

fn load(name: &str, scheme: Scheme) -> ScenarioConfig {
    let mut cfg = scenarios::load(name).unwrap_or_else(|| panic!("bundled scenario {name}"));
    cfg.scheme = scheme;
    cfg
}

fn run(name: &str, scheme: Scheme) -> ScenarioReport {
    run_scenario(&load(name, scheme)).unwrap()
}

fn days_for(r: &ScenarioReport, device: &str, level: ExposureLevel) -> Vec<u64> {
    r.notifications_for(device).filter(|n| n.level == level).map(|n| n.day).collect()
}

#[test]
fn honest_pair_is_notified_in_every_scheme() {
    for scheme in Scheme::ALL {
        let r = run("honest_pair", scheme);
        assert_eq!(r.genuine_notification_count, 1, "{scheme}");
        assert_eq!(r.false_notification_count, 0, "{scheme}");
        let n = r.notifications_for("bob").next().unwrap();
        assert_eq!((n.day, n.latency_days), (8, Some(5)), "{scheme}");
    }
}

#[test]
fn drive_by_needs_dwell_only_under_tracecorona() {
    let r = run("drive_by", Scheme::Tracecorona);
    assert!(r.notifications.is_empty());
    assert_eq!(r.contacts.direct_tokens, 0);
    for scheme in [Scheme::Centralized, Scheme::Decentralized] {
        assert_eq!(run("drive_by", scheme).notifications.len(), 1, "{scheme}");
    }
}

#[test]
fn relay_r1_reports_differ_in_success_rate() {
    let d = run("relay_r1", Scheme::Decentralized);
    let t = run("relay_r1", Scheme::Tracecorona);
    assert!(d.attack_success_rate > 0.0);
    assert!(d.false_notification_count >= 1);
    assert_eq!(t.attack_success_rate, 0.0);
    assert_eq!(t.false_notification_count, 0);
    assert!(t.attack(AdversaryKind::RelayOneway).unwrap().incomplete_handshakes > 0);
    // bob's genuine contact with alice is untouched by the relay
    assert_eq!(t.genuine_notification_count, d.genuine_notification_count);
}

#[test]
fn two_way_relay_is_bounded_and_fails_under_skew() {
    let r = run("relay_r2", Scheme::Tracecorona);
    let a = r.attack(AdversaryKind::RelayTwoway).unwrap();
    assert!(r.false_notification_count > 0);
    assert!((1..=8).contains(&a.max_victims_per_frame));
    let skewed = run("relay_r2_skewed", Scheme::Tracecorona);
    assert_eq!(skewed.false_notification_count, 0);
    assert!(skewed.contacts.handshake_failures > 0);
}

#[test]
fn kiss_replay_depends_on_the_bug_flag() {
    let bug = run("kiss_replay", Scheme::Decentralized);
    let fixed = run("kiss_replay_fixed", Scheme::Decentralized);
    assert!(bug.attack(AdversaryKind::KissReplay).unwrap().successes >= 1);
    assert!(bug.false_notification_count >= 1);
    assert_eq!(fixed.attack(AdversaryKind::KissReplay).unwrap().successes, 0);
    assert_eq!(fixed.false_notification_count, 0);
}

#[test]
fn fake_claims() {
    let t = run("fake_claim", Scheme::Tracecorona);
    let a = t.attack(AdversaryKind::FakeClaimer).unwrap();
    assert_eq!((a.attempts, a.successes), (10_000, 0));
    assert_eq!(a.colluding_accepted, 1);
    let d = run("fake_claim", Scheme::Decentralized);
    let a = d.attack(AdversaryKind::FakeClaimer).unwrap();
    assert!(a.attempts > 0);
    assert_eq!(a.success_rate, 1.0);
}

#[test]
fn eavesdropper_tracks() {
    let t = run("eavesdropper", Scheme::Tracecorona);
    assert!(t.max_linkability_window_s <= 900);
    let d = run("eavesdropper", Scheme::Decentralized);
    assert!(d.max_linkability_window_s > 900);
    let alice = d.linkability.iter().find(|e| e.device == "alice").unwrap();
    assert!(!alice.linked_days.is_empty());
    for day in &alice.linked_days {
        assert_eq!(day.linked_identifiers, 144);
        assert!(day.equals_ground_truth);
    }
}

#[test]
fn early_warning_reaches_second_level_contacts_sooner() {
    let base = run("infection_chain", Scheme::Tracecorona);
    let early = run("infection_chain_early_warning", Scheme::Tracecorona);
    assert_eq!(days_for(&base, "bob", ExposureLevel::Direct), vec![8]);
    assert_eq!(days_for(&base, "carol", ExposureLevel::Direct), vec![12]);
    assert!(days_for(&base, "carol", ExposureLevel::SecondLevel).is_empty());
    assert_eq!(days_for(&early, "carol", ExposureLevel::SecondLevel), vec![8]);
    assert_eq!(days_for(&early, "carol", ExposureLevel::Direct), vec![12]);
}

#[test]
fn superspreader_contacts_are_flagged() {
    let r = run("superspreader", Scheme::Tracecorona);
    assert_eq!(r.notifications_for("assistant").count(), 3);
    for c in ["customer1", "customer2"] {
        let n: Vec<_> = r.notifications_for(c).collect();
        assert_eq!(n.len(), 1, "{c}");
        assert!(n[0].superspreader_flag);
        assert_eq!(n[0].level, ExposureLevel::Direct);
    }
    assert_eq!(r.server_stats.as_ref().unwrap().superspreader_flags, 1);
}

#[test]
fn s1_server_statistics_equal_ground_truth() {
    let r = run("s1_neighbourhood", Scheme::Tracecorona);
    let stats = r.server_stats.clone().unwrap();
    assert_eq!(stats, r.ground_truth);
    assert_eq!(stats.infected_uploads, 4);
    assert_eq!(stats.second_level_uploads, 1);
    assert_eq!(stats.superspreader_flags, 1);
}

#[test]
fn every_notification_has_exactly_one_match_event() {
    for name in scenarios::names() {
        let r = run(name, Scheme::Tracecorona);
        let mut events: Vec<_> = r.match_events.iter().map(|e| (&e.device, e.time, &e.matched)).collect();
        let mut notes: Vec<_> = r.notifications.iter().map(|n| (&n.device, n.time, &n.matched)).collect();
        events.sort();
        notes.sort();
        assert_eq!(events, notes, "{name}");
    }
}

#[test]
fn baseline_notifications_are_backed_by_match_events() {
    for scheme in [Scheme::Centralized, Scheme::Decentralized] {
        for name in scenarios::names() {
            let r = run(name, scheme);
            for n in &r.notifications {
                assert!(
                    r.match_events.iter().any(|e| e.device == n.device && e.matched == n.matched),
                    "{name} [{scheme}]: orphan notification for {}",
                    n.device
                );
            }
        }
    }
}

#[test]
fn redacted_time_range_never_reaches_the_server() {
    let mut cfg = load("honest_pair", Scheme::Tracecorona);
    let alice = cfg.devices.iter_mut().find(|d| d.id == "alice").unwrap();
    alice.redact.exclude_ranges = vec![(SimTime::day_hm(4, 9, 55), SimTime::day_hm(4, 10, 25))];
    let r = run_scenario(&cfg).unwrap();
    assert!(r.notifications_for("bob").next().is_none());
    assert_eq!(r.server_stats.unwrap().records_published, 0);

    let mut cfg = load("honest_pair", Scheme::Tracecorona);
    let alice = cfg.devices.iter_mut().find(|d| d.id == "alice").unwrap();
    alice.redact.exclude_ranges = vec![(SimTime::day_hm(4, 11, 0), SimTime::day_hm(4, 12, 0))];
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r.notifications_for("bob").count(), 1);
}

#[test]
fn same_seed_same_report() {
    for name in scenarios::names() {
        let cfg = load(name, Scheme::Tracecorona);
        let a = run_scenario(&cfg).unwrap().to_json();
        let b = run_scenario(&cfg).unwrap().to_json();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn reports_roundtrip_through_json() {
    for scheme in Scheme::ALL {
        let r = run("s1_neighbourhood", scheme);
        assert_eq!(ScenarioReport::from_json(&r.to_json()).unwrap(), r);
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let mut cfg = load("honest_pair", Scheme::Tracecorona);
    cfg.protocol.epsilon = cfg.protocol.frame_period;
    assert_eq!(run_scenario(&cfg).unwrap_err().path, "protocol.epsilon");
    let mut cfg = load("relay_r2", Scheme::Tracecorona);
    cfg.adversaries[0].fanout_limit = 9;
    assert!(run_scenario(&cfg).unwrap_err().path.ends_with("fanout_limit"));
}
