//! Encounter protocol properties driven through the public device API.

use std::collections::BTreeSet;

use proptest::prelude::*;
use tracecorona::client::{ChannelGrant, Device, DeviceConfig, HandshakeOutcome, MAX_CONCURRENT_CHANNELS};
use tracecorona::crypto::EphemeralId;

const FRAME: u64 = 900;

/// Two devices in range over true time `[from, to]`; `b` runs `off` seconds
/// ahead. Beacons follow the advertising duty cycle. Whenever either side
/// asks for a handshake, both complete it at the same true instant.
fn encounter(a: &mut Device, b: &mut Device, from: u64, to: u64, off: i64) -> usize {
    let local_b = |t: u64| t.checked_add_signed(off).unwrap();
    let mut handshakes = 0;
    for t in from..=to {
        let tb = local_b(t);
        let ask_a = b.advertising().is_on(tb).then(|| b.beacon(tb)).and_then(|m| a.on_beacon(&m, -60, t));
        let ask_b = a.advertising().is_on(t).then(|| a.beacon(t)).and_then(|m| b.on_beacon(&m, -60, tb));
        if ask_a.is_some() || ask_b.is_some() {
            let (oa, ob) = (a.offer(t), b.offer(tb));
            let ra = a.complete_handshake(&ob, t);
            let rb = b.complete_handshake(&oa, tb);
            if ra.is_ok() && rb.is_ok() {
                handshakes += 1;
            }
        }
    }
    handshakes
}

fn pair(config: DeviceConfig, sa: u8, sb: u8) -> (Device, Device) {
    (Device::new(config, [sa; 32]), Device::new(config, [sb; 32]))
}

fn token_set(d: &Device) -> BTreeSet<(Vec<u8>, u64, u64)> {
    d.store().iter().map(|t| (t.secret.as_bytes().to_vec(), t.start_time, t.frame_index)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tokens_are_symmetric(frame in 10u64..10_000, off in -30i64..=30, extra in 0u64..400, sa in 0u8..100) {
        let (mut a, mut b) = pair(DeviceConfig::default(), sa, sa + 100);
        let from = frame * FRAME + 40;
        encounter(&mut a, &mut b, from, from + 320 + extra, off);
        prop_assert_eq!(a.store().len(), 1);
        prop_assert_eq!(b.store().len(), 1);
        let ta = a.store().iter().next().unwrap();
        let tb = b.store().iter().next().unwrap();
        prop_assert_eq!(ta.secret, tb.secret);
        prop_assert!(ta.start_time.abs_diff(tb.start_time) <= off.unsigned_abs());
        prop_assert!(ta.duration >= 300);
        prop_assert!(ta.start_time >= frame * FRAME && ta.start_time < (frame + 1) * FRAME);
    }

    #[test]
    fn no_token_without_dwell(start in 0u64..1_000_000, dwell in 0u64..300, sa in 0u8..100) {
        let (mut a, mut b) = pair(DeviceConfig::default(), sa, sa + 100);
        let n = encounter(&mut a, &mut b, start, start + dwell.saturating_sub(1), 0);
        prop_assert_eq!(n, 0);
        prop_assert!(a.store().is_empty() && b.store().is_empty());
    }

    #[test]
    fn deferred_derivation_gives_same_tokens(frame in 10u64..10_000, len in 300u64..2_000, sa in 0u8..100) {
        let eager = DeviceConfig::default();
        let lazy = DeviceConfig { deferred_derivation: true, ..eager };
        let (mut a1, mut b1) = pair(eager, sa, sa + 100);
        let (mut a2, mut b2) = pair(lazy, sa, sa + 100);
        let from = frame * FRAME;
        encounter(&mut a1, &mut b1, from, from + len, 0);
        encounter(&mut a2, &mut b2, from, from + len, 0);
        prop_assert!(a2.store().is_empty());
        a2.charge(from + len);
        b2.charge(from + len);
        prop_assert_eq!(token_set(&a1), token_set(&a2));
        prop_assert_eq!(token_set(&b1), token_set(&b2));
    }

    #[test]
    fn channel_pool_never_exceeds_cap(peers in 1usize..40, releases in proptest::collection::vec(any::<bool>(), 0..60)) {
        let mut d = Device::new(DeviceConfig::default(), [1; 32]);
        let ids: Vec<EphemeralId> = (0..peers).map(|i| EphemeralId::from_slice(&[i as u8 + 1; 16]).unwrap()).collect();
        for id in &ids {
            let g = d.open_channel(*id, 5);
            prop_assert!(matches!(g, ChannelGrant::Open | ChannelGrant::Queued(_)));
            prop_assert!(d.channels().open_count() <= MAX_CONCURRENT_CHANNELS);
        }
        prop_assert_eq!(d.channels().queued(), peers.saturating_sub(MAX_CONCURRENT_CHANNELS));
        for (id, release) in ids.iter().zip(&releases) {
            if *release {
                d.close_channel(id, 6);
            }
            prop_assert!(d.channels().open_count() <= MAX_CONCURRENT_CHANNELS);
        }
        prop_assert!(d.channels().peak() <= MAX_CONCURRENT_CHANNELS);
    }
}

#[test]
fn twenty_minutes_across_a_boundary_gives_two_tokens() {
    let (mut a, mut b) = pair(DeviceConfig::default(), 3, 4);
    let from = 40 * FRAME;
    encounter(&mut a, &mut b, from, from + 1_200, 0);
    let frames: Vec<u64> = a.store().iter().map(|t| t.frame_index).collect();
    assert_eq!(frames, vec![40, 41]);
    assert_eq!(token_set(&a), token_set(&b));
}

#[test]
fn offsets_beyond_the_frame_break_the_exchange() {
    let (mut a, mut b) = pair(DeviceConfig::default(), 5, 6);
    let from = 40 * FRAME + 500;
    // b is a whole frame ahead: every offer carries the wrong frame index
    encounter(&mut a, &mut b, from, from + 350, FRAME as i64);
    assert!(a.store().is_empty() && b.store().is_empty());
}

#[test]
fn established_outcome_carries_the_stored_token() {
    let (mut a, mut b) = pair(DeviceConfig::default(), 7, 8);
    let t = 40 * FRAME;
    let ob = b.offer(t);
    let HandshakeOutcome::Established(tok) = a.complete_handshake(&ob, t).unwrap() else {
        panic!("eager device derives immediately");
    };
    assert_eq!(a.store().find_by_hash(&tok.hash()), Some(&tok));
}
