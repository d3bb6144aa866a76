//! What an eavesdropping sensor network can link.

use std::collections::{BTreeMap, HashMap};

/// One beacon captured by a sensor. `device` is simulator ground truth used
/// only to score the adversary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorObservation {
    pub sensor: String,
    pub time: u64,
    pub identifier: [u8; 16],
    pub device: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Track {
    pub observations: u64,
    pub distinct_identifiers: u64,
    pub max_track_s: u64,
}

/// Longest linkable chain per device. Two observations link when they carry
/// the same identifier or identifiers from the same entry of `key_groups`
/// (identifiers resolvable from one piece of published key material).
pub fn eavesdropper_linkability(
    observations: &[SensorObservation],
    key_groups: &[Vec<[u8; 16]>],
) -> BTreeMap<usize, Track> {
    let mut group_of: HashMap<[u8; 16], usize> = HashMap::new();
    for (g, ids) in key_groups.iter().enumerate() {
        for id in ids {
            group_of.entry(*id).or_insert(g);
        }
    }
    let mut singles: HashMap<[u8; 16], usize> = HashMap::new();
    let mut spans: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
    let mut tracks: BTreeMap<usize, Track> = BTreeMap::new();
    let mut ids: BTreeMap<usize, std::collections::BTreeSet<[u8; 16]>> = BTreeMap::new();
    for obs in observations {
        let next = key_groups.len() + singles.len();
        let cluster = match group_of.get(&obs.identifier) {
            Some(g) => *g,
            None => *singles.entry(obs.identifier).or_insert(next),
        };
        let span = spans.entry((obs.device, cluster)).or_insert((obs.time, obs.time));
        span.0 = span.0.min(obs.time);
        span.1 = span.1.max(obs.time);
        tracks.entry(obs.device).or_default().observations += 1;
        ids.entry(obs.device).or_default().insert(obs.identifier);
    }
    for ((device, _), (lo, hi)) in spans {
        let t = tracks.entry(device).or_default();
        t.max_track_s = t.max_track_s.max(hi - lo);
    }
    for (device, set) in ids {
        tracks.entry(device).or_default().distinct_identifiers = set.len() as u64;
    }
    tracks
}
