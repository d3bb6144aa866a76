//! Helpers shared by the examples.

use tracecorona::client::{Device, EncounterToken, HandshakeOutcome};

/// Beacons both ways once a second until each side has a token for the
/// current frame. `verbose` prints the handshake.
pub fn meet(
    a: &mut Device,
    b: &mut Device,
    from: u64,
    to: u64,
    rssi: i16,
    verbose: bool,
) -> Option<(EncounterToken, EncounterToken)> {
    let (mut ta, mut tb) = (None, None);
    for t in from..to {
        let (beacon_a, beacon_b) = (a.beacon(t), b.beacon(t));
        if let Some(req) = a.on_beacon(&beacon_b, rssi, t) {
            let offer = b.offer(t);
            if let Ok(HandshakeOutcome::Established(tok)) = a.complete_handshake(&offer, t) {
                if verbose {
                    println!(
                        "t={t:>6}  handshake with {} (initiator: {})",
                        req.peer_ephemeral_id.to_hex(),
                        req.initiator
                    );
                }
                ta = Some(tok);
            }
        }
        if b.on_beacon(&beacon_a, rssi, t).is_some() {
            let offer = a.offer(t);
            if let Ok(HandshakeOutcome::Established(tok)) = b.complete_handshake(&offer, t) {
                tb = Some(tok);
            }
        }
        if ta.is_some() && tb.is_some() {
            break;
        }
    }
    Some((ta?, tb?))
}
