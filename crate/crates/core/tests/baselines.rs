//! Privacy and relay properties of the comparison schemes.

use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tracecorona::baseline::centralized::CENTRALIZED_SLOT_SECS;
use tracecorona::baseline::decentralized::DECENTRALIZED_SLOT_SECS;
use tracecorona::baseline::{
    decentralized_match, CentralizedClient, CentralizedServer, DecentralizedClient, DecentralizedConfig,
    DecentralizedServer, Registration, TempIdVariant,
};
use tracecorona::crypto::UserId;
use tracecorona::time::DAY_SECS;

fn variant(bluetrace: bool) -> TempIdVariant {
    if bluetrace {
        TempIdVariant::BlueTrace
    } else {
        TempIdVariant::Generic
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Once every user uploads, the server holds the exact contact graph.
    #[test]
    fn centralized_server_reconstructs_contact_graph(seed in any::<u64>(), users in 2usize..12, bluetrace in any::<bool>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut server = CentralizedServer::new(variant(bluetrace), seed);
        let mut clients: Vec<CentralizedClient> = (0..users)
            .map(|_| CentralizedClient::new(server.register(Registration::Anonymous)))
            .collect();
        let mut truth = BTreeSet::new();
        for _ in 0..rng.gen_range(0..3 * users) {
            let (a, b) = (rng.gen_range(0..users), rng.gen_range(0..users));
            if a == b {
                continue;
            }
            let t = rng.gen_range(0..5 * DAY_SECS);
            let id_a = clients[a].tempid_at(&mut server, t);
            let id_b = clients[b].tempid_at(&mut server, t);
            clients[b].observe(id_a, t + 3);
            clients[a].observe(id_b, t + 3);
            let (ua, ub) = (clients[a].user_id, clients[b].user_id);
            truth.insert(if ua < ub { (ua, ub) } else { (ub, ua) });
        }
        for c in &clients {
            server.centralized_match(&c.user_id, &c.observations_since(0));
        }
        prop_assert_eq!(server.contact_graph(), &truth);
    }
}

#[test]
fn relayed_tempid_flags_the_relayed_user() {
    let mut server = CentralizedServer::new(TempIdVariant::Generic, 3);
    let mut far_away = CentralizedClient::new(server.register(Registration::Anonymous));
    let infected: UserId = server.register(Registration::Anonymous);
    let t = 4 * DAY_SECS + 10 * 3_600;
    // captured in one city, replayed ten minutes later in another
    let id = far_away.tempid_at(&mut server, t);
    let flagged = server.centralized_match(&infected, &[(id, t + 600)]);
    assert_eq!(flagged, vec![far_away.user_id]);
    // outside the slot tolerance the identifier no longer resolves
    let late = server.centralized_match(&infected, &[(id, t + 3 * CENTRALIZED_SLOT_SECS)]);
    assert!(late.is_empty());
}

#[test]
fn published_tek_links_every_identifier_of_its_day() {
    let device = DecentralizedClient::new([21; 32]);
    let day = 6;
    let broadcast: HashSet<_> =
        (0..144).map(|slot| device.tempid_at(day * DAY_SECS + slot * DECENTRALIZED_SLOT_SECS + 17)).collect();
    assert_eq!(broadcast.len(), 144);
    let mut server = DecentralizedServer::default();
    server.publish(&device.keys_for_upload((day + 1) * DAY_SECS, false), (day + 1) * DAY_SECS);
    let key = server.published().iter().find(|p| p.key.day == day).unwrap().key;
    let linked: HashSet<_> = key.tempids().into_iter().collect();
    assert_eq!(linked, broadcast);
}

#[test]
fn decentralized_accepts_delayed_relay_within_window() {
    let infected = DecentralizedClient::new([22; 32]);
    let t = 3 * DAY_SECS + 9 * 3_600;
    let mut server = DecentralizedServer::default();
    server.publish(&infected.keys_for_upload(t + 2 * DAY_SECS, false), t + 2 * DAY_SECS);
    let cfg = DecentralizedConfig::default();
    let relayed = [(infected.tempid_at(t), t + 600)];
    assert_eq!(decentralized_match(server.published(), &relayed, &cfg).len(), 1);
    let stale = [(infected.tempid_at(t), t + 3 * 3_600)];
    assert!(decentralized_match(server.published(), &stale, &cfg).is_empty());
}

#[test]
fn kiss_bug_accepts_same_day_replay_only_when_enabled() {
    let infected = DecentralizedClient::new([23; 32]);
    let day = 8;
    let morning = day * DAY_SECS + 7 * 3_600;
    let publish = day * DAY_SECS + 20 * 3_600;
    let mut server = DecentralizedServer::default();
    server.publish(&infected.keys_for_upload(publish, true), publish);
    let replay = [(infected.tempid_at(morning), publish + 2 * 3_600)];
    let buggy = DecentralizedConfig { kiss_bug: true, ..Default::default() };
    assert_eq!(decentralized_match(server.published(), &replay, &buggy).len(), 1);
    assert!(decentralized_match(server.published(), &replay, &DecentralizedConfig::default()).is_empty());
}
