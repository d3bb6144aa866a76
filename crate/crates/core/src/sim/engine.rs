use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::config::{AdversaryKind, RegistrationMode, ScenarioConfig, Scheme};
use super::linkability::{eavesdropper_linkability, SensorObservation};
use super::report::{
    AttackOutcome, ContactStats, LinkabilityEntry, LinkedDay, MatchEvent, NotificationEntry, ScenarioReport,
    REPORT_VERSION,
};
use crate::authority::HealthAuthority;
use crate::baseline::{
    CentralizedClient, CentralizedServer, DecentralizedClient, DecentralizedDailyKey, DecentralizedServer,
    Registration, TempIdVariant,
};
use crate::client::{BeaconMessage, ChannelGrant, Device, DeviceConfig, HandshakeOffer, HandshakeOutcome, APP_UUID};
use crate::crypto::{derive_tempid_decentralized, EphemeralId, TempId, TokenHash, UserId};
use crate::error::ConfigError;
use crate::exposure::{detect_superspreader_candidate, match_feed, ExposureLevel, ExposureNotification};
use crate::server::wire::{Clock, Loopback, WireClient, WireService};
use crate::server::{NotificationKind, RecordTag, ServerConfig, ServerStats, TracingServer};
use crate::time::{day_of, overlaps, DutyCycle, TimeFramePolicy, DAY_SECS};

const DECENTRAL_SLOT: u64 = 600;
/// `u32 length || opcode || u32 count` framing assumed for baseline uploads.
const BASELINE_FRAME_OVERHEAD: u64 = 9;

fn stream(seed: u64, name: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"tc-sim-stream");
    h.update(seed.to_be_bytes());
    h.update(name.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn device_seed(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"tc-sim-device");
    h.update(seed.to_be_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Via {
    Direct,
    Relay { adv: usize, latency: u64 },
}

#[derive(Debug, Clone)]
enum Rx {
    Device(usize),
    Sensor { sensor: String },
}

#[derive(Debug, Clone)]
enum Event {
    Sighting { sender: usize, rx: Rx, rssi: i16, via: Via },
    KissBroadcast { adv: usize, receiver: usize },
    CompleteHandshake { device: usize, offer: HandshakeOffer, adv: usize, last: bool, pair: (usize, usize, u64) },
    TestResult { device: usize },
    FeedClose,
    FeedFetch,
    Maintenance,
    FakeClaim { adv: usize },
    KissStart { adv: usize },
}

impl Event {
    fn class(&self) -> u8 {
        match self {
            Event::Sighting { .. } | Event::KissBroadcast { .. } => 0,
            Event::CompleteHandshake { .. } => 1,
            Event::TestResult { .. } => 2,
            Event::FeedClose => 3,
            Event::FeedFetch => 4,
            Event::Maintenance => 5,
            Event::FakeClaim { .. } | Event::KissStart { .. } => 6,
        }
    }
}

enum Node {
    Trace(Box<Device>),
    Decentral(DecentralizedClient),
    Central(CentralizedClient),
}

struct SimDevice {
    id: String,
    offset: i64,
    adv: DutyCycle,
    scan: DutyCycle,
    node: Node,
    wire: Option<WireClient<Loopback>>,
    feed_epoch: u64,
    keys_seen: usize,
    obs_seen: usize,
    /// `(hash, tag)` of every record this device uploaded, so it is not
    /// notified about its own uploads. With synchronized clocks both ends of
    /// a token upload byte-identical records, so the tag is what tells a
    /// peer's later upload apart.
    own_records: HashSet<(TokenHash, RecordTag)>,
    notified: BTreeSet<String>,
    direct_hits: Vec<ExposureNotification>,
    second_level_sent: bool,
    superspreader_sent: bool,
}

impl SimDevice {
    fn local(&self, t: u64) -> u64 {
        (t as i64 + self.offset) as u64
    }

    fn trace(&mut self) -> &mut Device {
        match &mut self.node {
            Node::Trace(d) => d,
            _ => unreachable!("not an encounter-token device"),
        }
    }
}

struct Pending {
    genuine: bool,
    attack: Option<usize>,
}

pub(crate) struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    policy: TimeFramePolicy,
    start: u64,
    end: u64,
    devices: Vec<SimDevice>,
    queue: BinaryHeap<Reverse<(u64, u8, usize)>>,
    slab: Vec<Option<Event>>,
    channel_rng: ChaCha20Rng,
    adversary_rng: ChaCha20Rng,
    labels: Vec<String>,
    attacks: Vec<AttackOutcome>,

    server: Option<Arc<TracingServer>>,
    service: Option<Arc<WireService>>,
    record_source: HashMap<(TokenHash, RecordTag), usize>,
    token_via: HashMap<(usize, u64, EphemeralId), Via>,
    fanout: BTreeMap<(usize, usize, u64), BTreeSet<usize>>,
    inflight: BTreeSet<(usize, usize, u64)>,

    dserver: DecentralizedServer,
    pending_keys: Vec<(DecentralizedDailyKey, usize)>,
    key_owner: HashMap<DecentralizedDailyKey, usize>,
    kiss_ids: Vec<Option<TempId>>,
    cserver: Option<CentralizedServer>,
    user_index: HashMap<UserId, usize>,
    pending_central: BTreeMap<(usize, usize), Pending>,
    obs_via: HashMap<(usize, TempId, u64), Via>,

    sensor_log: Vec<SensorObservation>,
    notifications: Vec<NotificationEntry>,
    match_events: Vec<MatchEvent>,
    contacts: ContactStats,
    truth: ServerStats,
    baseline_up: u64,
    baseline_down: u64,
}

fn radio_hits(send: DutyCycle, recv: DutyCycle, from: u64, to: u64, shift: u64) -> Vec<u64> {
    let shifted: Vec<(u64, u64)> = send.windows(from, to).into_iter().map(|(a, b)| (a + shift, b + shift)).collect();
    overlaps(&shifted, &recv.windows(from + shift, to + shift)).into_iter().map(|w| w.0).collect()
}

fn true_phase(local_phase: u64, offset: i64, period: u64) -> u64 {
    (local_phase as i64 - offset).rem_euclid(period as i64) as u64
}

impl<'a> Sim<'a> {
    pub(crate) fn new(cfg: &'a ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let start = cfg.start_unix;
        let policy = cfg.protocol.policy();
        let mut phase_rng = stream(cfg.seed, "phases");
        let mut cserver = (cfg.scheme == Scheme::Centralized).then(|| {
            let variant = if cfg.baseline.bluetrace { TempIdVariant::BlueTrace } else { TempIdVariant::Generic };
            CentralizedServer::new(variant, stream(cfg.seed, "registry").gen())
        });
        let server = (cfg.scheme == Scheme::Tracecorona).then(|| {
            let authority = Arc::new(HealthAuthority::new(stream(cfg.seed, "authority").gen()));
            Arc::new(TracingServer::new(
                authority,
                ServerConfig { superspreader_threshold: cfg.protocol.superspreader_threshold, ..Default::default() },
            ))
        });
        let service = server.as_ref().map(|s| {
            Arc::new(WireService::new(
                s.clone(),
                stream(cfg.seed, "shuffle").gen(),
                Clock::Manual(AtomicU64::new(start)),
            ))
        });
        let mut user_index = HashMap::new();
        let mut devices = Vec::with_capacity(cfg.devices.len());
        for (i, spec) in cfg.devices.iter().enumerate() {
            let adv_local = spec.advertise_phase.unwrap_or_else(|| phase_rng.gen_range(0..60));
            let scan_local = spec.scan_phase.unwrap_or_else(|| phase_rng.gen_range(0..50));
            let seed = device_seed(cfg.seed, &spec.id);
            let node = match cfg.scheme {
                Scheme::Tracecorona => Node::Trace(Box::new(Device::new(
                    DeviceConfig {
                        policy,
                        retention_days: cfg.protocol.retention_days,
                        continuity_gap: cfg.protocol.continuity_gap,
                        deferred_derivation: cfg.protocol.deferred_derivation,
                        advertise_phase: adv_local,
                        scan_phase: scan_local,
                    },
                    seed,
                ))),
                Scheme::Decentralized => {
                    let mut c = DecentralizedClient::new(seed);
                    c.retention_days = cfg.protocol.retention_days;
                    Node::Decentral(c)
                }
                Scheme::Centralized => {
                    let server = cserver.as_mut().expect("centralized server");
                    let reg = match cfg.baseline.registration {
                        RegistrationMode::Anonymous => Registration::Anonymous,
                        RegistrationMode::PhoneNumber => Registration::PhoneNumber(format!("+00 {:06}", i)),
                    };
                    let user = server.register(reg);
                    user_index.insert(user, i);
                    Node::Central(CentralizedClient::new(user))
                }
            };
            devices.push(SimDevice {
                id: spec.id.clone(),
                offset: spec.clock_offset_s,
                adv: DutyCycle::advertising(true_phase(adv_local, spec.clock_offset_s, 60)),
                scan: DutyCycle::scanning(true_phase(scan_local, spec.clock_offset_s, 50)),
                node,
                wire: service.as_ref().map(|s| WireClient::new(Loopback::new(s.clone()))),
                feed_epoch: 0,
                keys_seen: 0,
                obs_seen: 0,
                own_records: HashSet::new(),
                notified: BTreeSet::new(),
                direct_hits: Vec::new(),
                second_level_sent: false,
                superspreader_sent: false,
            });
        }
        let labels: Vec<String> = cfg.adversaries.iter().enumerate().map(|(i, a)| a.label(i)).collect();
        let attacks = cfg.adversaries.iter().zip(&labels).map(|(a, l)| AttackOutcome::new(l.clone(), a.kind)).collect();
        let mut sim = Sim {
            cfg,
            policy,
            start,
            end: start + cfg.duration_s(),
            devices,
            queue: BinaryHeap::new(),
            slab: Vec::new(),
            channel_rng: stream(cfg.seed, "channel"),
            adversary_rng: stream(cfg.seed, "adversary"),
            labels,
            attacks,
            server,
            service,
            record_source: HashMap::new(),
            token_via: HashMap::new(),
            fanout: BTreeMap::new(),
            inflight: BTreeSet::new(),
            dserver: DecentralizedServer::default(),
            pending_keys: Vec::new(),
            key_owner: HashMap::new(),
            kiss_ids: vec![None; cfg.adversaries.len()],
            cserver,
            user_index,
            pending_central: BTreeMap::new(),
            obs_via: HashMap::new(),
            sensor_log: Vec::new(),
            notifications: Vec::new(),
            match_events: Vec::new(),
            contacts: ContactStats::default(),
            truth: ServerStats::default(),
            baseline_up: 0,
            baseline_down: 0,
        };
        sim.schedule_all();
        Ok(sim)
    }

    fn push(&mut self, t: u64, event: Event) {
        let key = (t, event.class(), self.slab.len());
        self.slab.push(Some(event));
        self.queue.push(Reverse(key));
    }

    fn schedule_all(&mut self) {
        let cfg = self.cfg;
        let s0 = self.start;
        for c in &cfg.colocations {
            let a = cfg.device_index(&c.a).expect("validated");
            let b = cfg.device_index(&c.b).expect("validated");
            let (from, to) = (s0 + c.start.0, s0 + c.end.0);
            for (snd, rcv) in [(a, b), (b, a)] {
                for t in radio_hits(self.devices[snd].adv, self.devices[rcv].scan, from, to, 0) {
                    let rssi = c.rssi.at(t - from);
                    self.push(t, Event::Sighting { sender: snd, rx: Rx::Device(rcv), rssi, via: Via::Direct });
                }
            }
        }
        for (k, a) in cfg.adversaries.iter().enumerate() {
            let (from, to) = (s0 + a.start.0, s0 + a.end.0);
            match a.kind {
                AdversaryKind::RelayOneway | AdversaryKind::RelayTwoway => {
                    let both = a.kind == AdversaryKind::RelayTwoway || a.mirror;
                    let via = Via::Relay { adv: k, latency: a.latency_s };
                    for c in &a.capture {
                        for v in &a.emit {
                            let c = cfg.device_index(c).expect("validated");
                            let v = cfg.device_index(v).expect("validated");
                            let mut dirs = vec![(c, v)];
                            if both {
                                dirs.push((v, c));
                            }
                            for (snd, rcv) in dirs {
                                let hits =
                                    radio_hits(self.devices[snd].adv, self.devices[rcv].scan, from, to, a.latency_s);
                                for t in hits {
                                    self.push(
                                        t,
                                        Event::Sighting { sender: snd, rx: Rx::Device(rcv), rssi: a.rssi, via },
                                    );
                                }
                            }
                        }
                    }
                }
                AdversaryKind::Eavesdropper => {
                    for p in &a.passes {
                        let d = cfg.device_index(&p.device).expect("validated");
                        for (t, _) in self.devices[d].adv.windows(s0 + p.start.0, s0 + p.end.0) {
                            self.push(
                                t,
                                Event::Sighting {
                                    sender: d,
                                    rx: Rx::Sensor { sensor: p.sensor.clone() },
                                    rssi: a.rssi,
                                    via: Via::Relay { adv: k, latency: 0 },
                                },
                            );
                        }
                    }
                }
                AdversaryKind::FakeClaimer => self.push(from, Event::FakeClaim { adv: k }),
                AdversaryKind::KissReplay => self.push(from, Event::KissStart { adv: k }),
            }
        }
        for (i, d) in cfg.devices.iter().enumerate() {
            if let Some(day) = d.infected_day {
                let t = s0 + cfg.disease.result_day(day) * DAY_SECS + cfg.disease.result_hour * 3_600;
                if t < self.end {
                    self.push(t, Event::TestResult { device: i });
                }
            }
        }
        let f = cfg.feed;
        let mut t = s0 + f.publish_offset_s;
        while t < self.end {
            self.push(t, Event::FeedClose);
            if t + f.fetch_delay_s < self.end {
                self.push(t + f.fetch_delay_s, Event::FeedFetch);
            }
            t += f.cadence_s;
        }
        for day in 0..cfg.duration_days {
            self.push(s0 + day * DAY_SECS + 3 * 3_600, Event::Maintenance);
        }
    }

    fn rel_day(&self, t: u64) -> u64 {
        (t - self.start) / DAY_SECS
    }

    pub(crate) fn run(mut self) -> ScenarioReport {
        while let Some(Reverse((t, _, idx))) = self.queue.pop() {
            let event = self.slab[idx].take().expect("event fired once");
            self.dispatch(t, event);
        }
        self.finish()
    }

    fn dispatch(&mut self, t: u64, event: Event) {
        if let Some(s) = &self.service {
            s.set_now(t);
        }
        match event {
            Event::Sighting { sender, rx, rssi, via } => self.on_sighting(t, sender, rx, rssi, via),
            Event::KissBroadcast { adv, receiver } => self.on_kiss_broadcast(t, adv, receiver),
            Event::CompleteHandshake { device, offer, adv, last, pair } => {
                self.on_tunnel_complete(t, device, offer, adv, last, pair)
            }
            Event::TestResult { device } => self.on_test_result(t, device),
            Event::FeedClose => self.on_feed_close(t),
            Event::FeedFetch => self.on_feed_fetch(t),
            Event::Maintenance => self.on_maintenance(t),
            Event::FakeClaim { adv } => self.on_fake_claim(t, adv),
            Event::KissStart { adv } => self.on_kiss_start(t, adv),
        }
    }

    fn identifier(&mut self, sender: usize, at: u64) -> [u8; 16] {
        let local = self.devices[sender].local(at);
        let frame = self.policy.frame_index(local);
        let cserver = &mut self.cserver;
        match &mut self.devices[sender].node {
            Node::Trace(d) => d.ephemeral_id_for_frame(frame).0,
            Node::Decentral(c) => c.tempid_at(local).0,
            Node::Central(c) => c.tempid_at(cserver.as_mut().expect("server"), local).0,
        }
    }

    fn on_sighting(&mut self, t: u64, sender: usize, rx: Rx, rssi: i16, via: Via) {
        self.contacts.sightings += 1;
        if self.channel_rng.gen::<f64>() < self.cfg.channel.loss {
            self.contacts.dropped_sightings += 1;
            return;
        }
        let captured_at = match via {
            Via::Direct => t,
            Via::Relay { latency, .. } => t - latency,
        };
        let id = self.identifier(sender, captured_at);
        let r = match rx {
            Rx::Sensor { sensor } => {
                self.sensor_log.push(SensorObservation { sensor, time: t, identifier: id, device: sender });
                return;
            }
            Rx::Device(r) => r,
        };
        let local_r = self.devices[r].local(t);
        match &mut self.devices[r].node {
            Node::Trace(device) => {
                let beacon =
                    BeaconMessage { uuid: APP_UUID, ephemeral_id: EphemeralId(id), carries_pubkey_offer: true };
                if device.on_beacon(&beacon, rssi, local_r).is_some() {
                    self.request_handshake(t, r, sender, via);
                }
            }
            Node::Decentral(c) => {
                c.observe(TempId(id), local_r);
                self.note_observation(r, TempId(id), local_r, via);
            }
            Node::Central(c) => {
                c.observe(TempId(id), local_r);
                self.note_observation(r, TempId(id), local_r, via);
            }
        }
    }

    fn note_observation(&mut self, r: usize, id: TempId, local: u64, via: Via) {
        let e = self.obs_via.entry((r, id, local)).or_insert(via);
        if via == Via::Direct {
            *e = Via::Direct;
        }
    }

    fn request_handshake(&mut self, t: u64, r: usize, s: usize, via: Via) {
        match via {
            Via::Direct => self.direct_handshake(t, r, s),
            Via::Relay { adv, .. } => {
                if self.cfg.adversaries[adv].kind == AdversaryKind::RelayTwoway {
                    self.tunnel_handshake(t, r, s, adv);
                } else {
                    self.attacks[adv].incomplete_handshakes += 1;
                }
            }
        }
    }

    fn open_pair(&mut self, t: u64, a: usize, b: usize, ei_a: EphemeralId, ei_b: EphemeralId) -> bool {
        let la = self.devices[a].local(t);
        let lb = self.devices[b].local(t);
        let ga = self.devices[a].trace().open_channel(ei_b, la);
        let gb = self.devices[b].trace().open_channel(ei_a, lb);
        let ok = |g: ChannelGrant| matches!(g, ChannelGrant::Open | ChannelGrant::AlreadyOpen);
        if ok(ga) && ok(gb) {
            let peak = self.devices[a].trace().channels().peak().max(self.devices[b].trace().channels().peak());
            self.contacts.peak_open_channels = self.contacts.peak_open_channels.max(peak as u64);
            return true;
        }
        self.devices[a].trace().close_channel(&ei_b, la);
        self.devices[b].trace().close_channel(&ei_a, lb);
        false
    }

    fn record_outcome(
        &mut self,
        device: usize,
        result: Result<HandshakeOutcome, crate::error::ProtocolError>,
        peer: EphemeralId,
        frame: u64,
        via: Via,
    ) -> bool {
        match result {
            Ok(outcome) => {
                self.token_via.insert((device, frame, peer), via);
                matches!(outcome, HandshakeOutcome::Established(_) | HandshakeOutcome::Deferred)
            }
            Err(_) => {
                self.contacts.handshake_failures += 1;
                false
            }
        }
    }

    fn direct_handshake(&mut self, t: u64, r: usize, s: usize) {
        let lr = self.devices[r].local(t);
        let ls = self.devices[s].local(t);
        let offer_r = self.devices[r].trace().offer(lr);
        let offer_s = self.devices[s].trace().offer(ls);
        if !self.open_pair(t, r, s, offer_r.ephemeral_id, offer_s.ephemeral_id) {
            return;
        }
        let res_r = self.devices[r].trace().complete_handshake(&offer_s, lr);
        let res_s = self.devices[s].trace().complete_handshake(&offer_r, ls);
        let ok_r = self.record_outcome(r, res_r, offer_s.ephemeral_id, offer_r.frame_index, Via::Direct);
        let ok_s = self.record_outcome(s, res_s, offer_r.ephemeral_id, offer_s.frame_index, Via::Direct);
        if ok_r && ok_s {
            self.contacts.direct_tokens += 1;
        }
        self.devices[r].trace().close_channel(&offer_s.ephemeral_id, lr);
        self.devices[s].trace().close_channel(&offer_r.ephemeral_id, ls);
    }

    fn tunnel_handshake(&mut self, t: u64, r: usize, s: usize, adv: usize) {
        let spec = &self.cfg.adversaries[adv];
        let on_capture = |i: usize| spec.capture.iter().any(|c| *c == self.devices[i].id);
        let (src, victim) = if on_capture(s) { (s, r) } else { (r, s) };
        let frame = self.policy.frame_index(self.devices[src].local(t));
        let pair = (r.min(s), r.max(s), frame);
        if self.inflight.contains(&pair) {
            return;
        }
        let limit = spec.fanout_limit;
        let latency = spec.latency_s;
        let victims = self.fanout.entry((adv, src, frame)).or_default();
        if !victims.contains(&victim) && victims.len() >= limit {
            self.attacks[adv].incomplete_handshakes += 1;
            return;
        }
        let lr = self.devices[r].local(t);
        let ls = self.devices[s].local(t);
        let offer_r = self.devices[r].trace().offer(lr);
        let offer_s = self.devices[s].trace().offer(ls);
        if !self.open_pair(t, r, s, offer_r.ephemeral_id, offer_s.ephemeral_id) {
            self.attacks[adv].incomplete_handshakes += 1;
            return;
        }
        let victims = self.fanout.entry((adv, src, frame)).or_default();
        victims.insert(victim);
        let n = victims.len() as u64;
        let a = &mut self.attacks[adv];
        a.max_victims_per_frame = a.max_victims_per_frame.max(n);
        self.inflight.insert(pair);
        // the initiator's offer reaches the responder after one relay hop and
        // the answer comes back after a second one
        let ((init, init_offer), (resp, resp_offer)) = if offer_r.ephemeral_id < offer_s.ephemeral_id {
            ((r, offer_r), (s, offer_s))
        } else {
            ((s, offer_s), (r, offer_r))
        };
        self.push(t + latency, Event::CompleteHandshake { device: resp, offer: init_offer, adv, last: false, pair });
        self.push(t + 2 * latency, Event::CompleteHandshake { device: init, offer: resp_offer, adv, last: true, pair });
    }

    fn on_tunnel_complete(
        &mut self,
        t: u64,
        device: usize,
        offer: HandshakeOffer,
        adv: usize,
        last: bool,
        pair: (usize, usize, u64),
    ) {
        let local = self.devices[device].local(t);
        let own_frame = self.policy.frame_index(local);
        let result = self.devices[device].trace().complete_handshake(&offer, local);
        let via = Via::Relay { adv, latency: self.cfg.adversaries[adv].latency_s };
        if self.record_outcome(device, result, offer.ephemeral_id, own_frame, via) {
            self.attacks[adv].tokens_established += 1;
            self.contacts.relayed_tokens += 1;
        }
        self.devices[device].trace().close_channel(&offer.ephemeral_id, local);
        if last {
            self.inflight.remove(&pair);
        }
    }

    fn on_kiss_start(&mut self, t: u64, adv: usize) {
        if self.cfg.scheme != Scheme::Decentralized {
            return;
        }
        let spec = &self.cfg.adversaries[adv];
        let published = self.dserver.published();
        let today = day_of(t);
        let Some(pk) = published.iter().rev().find(|p| p.published_day == today).or(published.last()) else {
            return;
        };
        let target = t.saturating_sub(spec.replay_age_s) / DECENTRAL_SLOT;
        let first = pk.key.day * 144;
        let t_k = target.clamp(first, first + 143);
        self.kiss_ids[adv] = Some(derive_tempid_decentralized(&pk.key.tek, t_k));
        let end = self.start + spec.end.0;
        let victims: Vec<usize> = spec.emit.iter().map(|id| self.cfg.device_index(id).expect("validated")).collect();
        self.attacks[adv].attempts = victims.len() as u64;
        for v in victims {
            for (w, _) in self.devices[v].scan.windows(t, end) {
                self.push(w, Event::KissBroadcast { adv, receiver: v });
            }
        }
    }

    fn on_kiss_broadcast(&mut self, t: u64, adv: usize, r: usize) {
        self.contacts.sightings += 1;
        if self.channel_rng.gen::<f64>() < self.cfg.channel.loss {
            self.contacts.dropped_sightings += 1;
            return;
        }
        let id = self.kiss_ids[adv].expect("replay identifier chosen");
        let local = self.devices[r].local(t);
        if let Node::Decentral(c) = &mut self.devices[r].node {
            c.observe(id, local);
            self.note_observation(r, id, local, Via::Relay { adv, latency: 0 });
        }
    }

    fn charge_and_purge(&mut self, t: u64, i: usize) {
        let local = self.devices[i].local(t);
        let deferred = self.cfg.protocol.deferred_derivation;
        if let Node::Trace(d) = &mut self.devices[i].node {
            if deferred {
                d.charge(local);
            }
            d.purge_expired(local);
        }
    }

    fn on_maintenance(&mut self, t: u64) {
        for i in 0..self.devices.len() {
            self.charge_and_purge(t, i);
        }
    }

    fn on_test_result(&mut self, t: u64, i: usize) {
        match self.cfg.scheme {
            Scheme::Tracecorona => self.upload_tokens(t, i),
            Scheme::Decentralized => {
                let local = self.devices[i].local(t);
                let include_today = self.cfg.baseline.publish_current_day_tek;
                let Node::Decentral(c) = &self.devices[i].node else { unreachable!() };
                let keys = c.keys_for_upload(local, include_today);
                self.baseline_up += BASELINE_FRAME_OVERHEAD + 24 * keys.len() as u64;
                for k in keys {
                    self.key_owner.insert(k, i);
                    self.pending_keys.push((k, i));
                }
            }
            Scheme::Centralized => self.central_upload(t, i),
        }
    }

    fn upload_tokens(&mut self, t: u64, i: usize) {
        self.charge_and_purge(t, i);
        let spec = &self.cfg.devices[i];
        let off = self.devices[i].offset;
        let s0 = self.start;
        let view = self.devices[i].trace().store().redact(|tok| {
            if spec.redact.min_duration_s.is_some_and(|m| tok.duration < m) {
                return true;
            }
            let true_t = (tok.start_time as i64 - off) as u64;
            spec.redact.exclude_ranges.iter().any(|(a, b)| (s0 + a.0..=s0 + b.0).contains(&true_t))
        });
        let records = view.upload_records();
        if records.is_empty() {
            return;
        }
        let server = self.server.clone().expect("tracing server");
        let tan = server.authority().issue_tan(spec.id.as_bytes(), t);
        let hashes: Vec<TokenHash> = records.iter().map(|r| r.hash).collect();
        let n = records.len() as u64;
        let wire = self.devices[i].wire.as_mut().expect("wire client");
        if let Ok(Ok(_)) = wire.upload_infected(&tan.value, records) {
            for h in &hashes {
                self.record_source.insert((*h, RecordTag::Direct), i);
            }
            let own = hashes.iter().map(|h| (*h, RecordTag::Direct));
            self.devices[i].own_records.extend(own);
            self.devices[i].trace().mark_uploaded(&hashes);
            self.truth.infected_uploads += 1;
            self.truth.records_published += n;
        }
    }

    fn central_upload(&mut self, t: u64, i: usize) {
        let local = self.devices[i].local(t);
        let since = local.saturating_sub(self.cfg.protocol.retention_days * DAY_SECS);
        let Node::Central(c) = &self.devices[i].node else { unreachable!() };
        let uploader = c.user_id;
        let obs = c.observations_since(since);
        self.baseline_up += BASELINE_FRAME_OVERHEAD + 24 * obs.len() as u64;
        let server = self.cserver.as_mut().expect("centralized server");
        for (id, at) in obs {
            let via = self.obs_via.get(&(i, id, at)).copied().unwrap_or(Via::Direct);
            for user in server.centralized_match(&uploader, &[(id, at)]) {
                let Some(&u) = self.user_index.get(&user) else {
                    continue;
                };
                self.match_events.push(MatchEvent {
                    device: self.devices[u].id.clone(),
                    time: t - self.start,
                    matched: format!("upload:{}", self.devices[i].id),
                    tag: RecordTag::Direct,
                });
                let p = self.pending_central.entry((u, i)).or_insert(Pending { genuine: false, attack: None });
                match via {
                    Via::Direct => p.genuine = true,
                    Via::Relay { adv, .. } => {
                        p.attack.get_or_insert(adv);
                    }
                }
            }
        }
    }

    fn on_feed_close(&mut self, t: u64) {
        match self.cfg.scheme {
            Scheme::Tracecorona => {
                self.server.as_ref().expect("server").advance_epoch();
            }
            Scheme::Decentralized => {
                let keys: Vec<DecentralizedDailyKey> = self.pending_keys.drain(..).map(|(k, _)| k).collect();
                self.dserver.publish(&keys, t);
            }
            Scheme::Centralized => {}
        }
    }

    fn latency(&self, source: usize, day: u64) -> Option<u64> {
        let d = self.cfg.devices[source].infected_day?;
        Some(day.saturating_sub(self.cfg.disease.contagious_day(d)))
    }

    #[allow(clippy::too_many_arguments)]
    fn notify(
        &mut self,
        t: u64,
        device: usize,
        level: ExposureLevel,
        superspreader_flag: bool,
        genuine: bool,
        source: Option<usize>,
        attack: Option<usize>,
        matched: String,
        risk_score: f64,
    ) {
        let day = self.rel_day(t);
        self.notifications.push(NotificationEntry {
            device: self.devices[device].id.clone(),
            day,
            time: t - self.start,
            level,
            superspreader_flag,
            genuine,
            source: source.map(|s| self.devices[s].id.clone()),
            attack: attack.map(|a| self.labels[a].clone()),
            latency_days: source.and_then(|s| self.latency(s, day)),
            matched,
            risk_score,
        });
    }

    fn on_feed_fetch(&mut self, t: u64) {
        match self.cfg.scheme {
            Scheme::Tracecorona => {
                for i in 0..self.devices.len() {
                    self.trace_fetch(t, i);
                }
                self.truth.active_users = self.truth.active_users.max(self.devices.len() as u64);
            }
            Scheme::Decentralized => {
                for i in 0..self.devices.len() {
                    self.decentral_fetch(t, i);
                }
            }
            Scheme::Centralized => {
                let pending = std::mem::take(&mut self.pending_central);
                for ((u, src), p) in pending {
                    let key = format!("upload:{}", self.devices[src].id);
                    if !self.devices[u].notified.insert(key.clone()) {
                        continue;
                    }
                    self.baseline_down += BASELINE_FRAME_OVERHEAD;
                    self.notify(
                        t,
                        u,
                        ExposureLevel::Direct,
                        false,
                        p.genuine,
                        Some(src),
                        if p.genuine { None } else { p.attack },
                        key,
                        0.0,
                    );
                }
            }
        }
    }

    fn decentral_fetch(&mut self, t: u64, i: usize) {
        let cfg = self.cfg.baseline.decentralized();
        let published = self.dserver.published().to_vec();
        let new = published.len() - self.devices[i].keys_seen;
        self.devices[i].keys_seen = published.len();
        self.baseline_down += BASELINE_FRAME_OVERHEAD + 32 * new as u64;
        let dev = &mut self.devices[i];
        let Node::Decentral(c) = &dev.node else { unreachable!() };
        let observed = c.observations().len();
        if new == 0 && observed == dev.obs_seen {
            return;
        }
        dev.obs_seen = observed;
        let matches = c.check(&published, &cfg);
        let mut by_key: BTreeMap<(TempId, u64), Vec<(TempId, u64)>> = BTreeMap::new();
        for m in &matches {
            let pk = published
                .iter()
                .find(|p| p.key.day == m.key_day && p.key.tempids()[m.slot as usize] == m.tempid)
                .expect("match comes from a published key");
            by_key.entry((TempId(pk.key.tek.0), pk.key.day)).or_default().push((m.tempid, m.observed_at));
        }
        for ((tek, day), hits) in by_key {
            let key = DecentralizedDailyKey { tek: crate::crypto::Tek(tek.0), day };
            let owner = self.key_owner.get(&key).copied();
            if owner == Some(i) {
                continue;
            }
            let label = format!("tek:{}:{}", key.tek.to_hex(), day);
            if !self.devices[i].notified.insert(label.clone()) {
                continue;
            }
            let vias: Vec<Via> =
                hits.iter().map(|(id, at)| self.obs_via.get(&(i, *id, *at)).copied().unwrap_or(Via::Direct)).collect();
            let genuine = vias.contains(&Via::Direct);
            let attack = vias.iter().find_map(|v| match v {
                Via::Relay { adv, .. } => Some(*adv),
                Via::Direct => None,
            });
            for (_, at) in &hits {
                self.match_events.push(MatchEvent {
                    device: self.devices[i].id.clone(),
                    time: *at,
                    matched: label.clone(),
                    tag: RecordTag::Direct,
                });
            }
            self.notify(
                t,
                i,
                ExposureLevel::Direct,
                false,
                genuine,
                owner,
                if genuine { None } else { attack },
                label,
                0.0,
            );
        }
    }

    fn trace_fetch(&mut self, t: u64, i: usize) {
        self.charge_and_purge(t, i);
        let since = self.devices[i].feed_epoch;
        let Ok(mut feed) = self.devices[i].wire.as_mut().expect("wire").fetch_feed(since) else {
            return;
        };
        self.devices[i].feed_epoch = feed.feed_epoch;
        let own = &self.devices[i].own_records;
        feed.records.retain(|r| !own.contains(&(r.hash, r.tag)));
        let device = self.devices[i].trace();
        let hits = match_feed(device.store(), &feed, self.cfg.protocol.epsilon, &self.cfg.risk);
        let tags: HashMap<TokenHash, Vec<RecordTag>> = feed.records.iter().fold(HashMap::new(), |mut m, r| {
            m.entry(r.hash).or_default().push(r.tag);
            m
        });
        for n in &hits {
            let tag = match (n.level, n.superspreader_flag) {
                (ExposureLevel::SecondLevel, _) => RecordTag::SecondLevel,
                (ExposureLevel::Direct, true) => RecordTag::PossibleSuperspreader,
                (ExposureLevel::Direct, false) => RecordTag::Direct,
            };
            debug_assert!(tags.get(&n.matched_hash).is_some_and(|v| v.contains(&tag)));
            let token =
                self.devices[i].trace().store().find_by_hash(&n.matched_hash).cloned().expect("matched token is local");
            let via = self.token_via.get(&(i, token.frame_index, token.peer_hint)).copied().unwrap_or(Via::Direct);
            let source = self.record_source.get(&(n.matched_hash, tag)).copied();
            let (genuine, attack) = match via {
                Via::Direct => (true, None),
                Via::Relay { adv, .. } => (false, Some(adv)),
            };
            self.match_events.push(MatchEvent {
                device: self.devices[i].id.clone(),
                time: t - self.start,
                matched: n.matched_hash.to_hex(),
                tag,
            });
            let kind = match n.level {
                ExposureLevel::Direct => NotificationKind::Direct,
                ExposureLevel::SecondLevel => NotificationKind::SecondLevel,
            };
            let wire = self.devices[i].wire.as_mut().expect("wire");
            if wire.report(kind).is_ok() {
                match kind {
                    NotificationKind::Direct => self.truth.direct_notifications_reported += 1,
                    NotificationKind::SecondLevel => self.truth.second_level_notifications_reported += 1,
                }
            }
            self.notify(
                t,
                i,
                n.level,
                n.superspreader_flag,
                genuine,
                source,
                attack,
                n.matched_hash.to_hex(),
                n.risk_score,
            );
            if n.level == ExposureLevel::Direct && !n.superspreader_flag {
                self.devices[i].direct_hits.push(n.clone());
            }
        }
        // a flag carries more than a second-level warning, so it goes first
        if self.cfg.protocol.superspreader_detection {
            self.superspreader_upload(i);
        }
        if self.cfg.protocol.second_level_early_warning {
            self.second_level_upload(i, &hits);
        }
    }

    fn second_level_upload(&mut self, i: usize, hits: &[ExposureNotification]) {
        if self.devices[i].second_level_sent {
            return;
        }
        // forward everything met after the earliest confirmed exposure
        let Some(first) = hits
            .iter()
            .filter(|n| n.level == ExposureLevel::Direct && !n.superspreader_flag)
            .min_by_key(|n| n.encounter_time)
        else {
            return;
        };
        let matched: HashSet<TokenHash> =
            hits.iter().chain(&self.devices[i].direct_hits).map(|n| n.matched_hash).collect();
        let device = self.devices[i].trace();
        let proof = device.store().find_by_hash(&first.matched_hash).expect("matched token is local").secret;
        let view = device.store().redact(|tok| {
            tok.start_time < first.encounter_time || matched.contains(&tok.hash()) || device.has_uploaded(&tok.hash())
        });
        let records = view.upload_records();
        if records.is_empty() {
            return;
        }
        let hashes: Vec<TokenHash> = records.iter().map(|r| r.hash).collect();
        let n = records.len() as u64;
        let wire = self.devices[i].wire.as_mut().expect("wire");
        if let Ok(Ok(_)) = wire.upload_second_level(proof, records) {
            self.devices[i].second_level_sent = true;
            for h in &hashes {
                self.record_source.insert((*h, RecordTag::SecondLevel), i);
            }
            let own = hashes.iter().map(|h| (*h, RecordTag::SecondLevel));
            self.devices[i].own_records.extend(own);
            self.devices[i].trace().mark_uploaded(&hashes);
            self.truth.second_level_uploads += 1;
            self.truth.second_level_records += n;
            self.truth.records_published += n;
        }
    }

    fn superspreader_upload(&mut self, i: usize) {
        if self.devices[i].superspreader_sent {
            return;
        }
        let threshold = self.cfg.protocol.superspreader_threshold;
        let hits = self.devices[i].direct_hits.clone();
        let device = self.devices[i].trace();
        let Some(proofs) = detect_superspreader_candidate(device.store(), &hits, threshold) else {
            return;
        };
        let matched: BTreeSet<TokenHash> = hits.iter().map(|h| h.matched_hash).collect();
        let view = device.store().redact(|tok| matched.contains(&tok.hash()) || device.has_uploaded(&tok.hash()));
        let records = view.upload_records();
        if records.is_empty() {
            return;
        }
        let hashes: Vec<TokenHash> = records.iter().map(|r| r.hash).collect();
        let n = records.len() as u64;
        let wire = self.devices[i].wire.as_mut().expect("wire");
        if let Ok(Ok(_)) = wire.upload_superspreader(proofs, records) {
            self.devices[i].superspreader_sent = true;
            for h in &hashes {
                self.record_source.insert((*h, RecordTag::PossibleSuperspreader), i);
            }
            let own = hashes.iter().map(|h| (*h, RecordTag::PossibleSuperspreader));
            self.devices[i].own_records.extend(own);
            self.devices[i].trace().mark_uploaded(&hashes);
            self.truth.superspreader_flags += 1;
            self.truth.records_published += n;
        }
    }

    fn on_fake_claim(&mut self, _t: u64, adv: usize) {
        let spec = &self.cfg.adversaries[adv];
        match self.cfg.scheme {
            Scheme::Tracecorona => {
                let server = self.server.clone().expect("server");
                let mut accepted = 0;
                for _ in 0..spec.attempts {
                    let proof = crate::crypto::TokenSecret(self.adversary_rng.gen());
                    let junk = crate::crypto::TokenSecret(self.adversary_rng.gen());
                    let record = crate::server::TokenUploadRecord::new(
                        crate::crypto::token_hash(&junk),
                        crate::crypto::encrypt_metadata(&junk, 0),
                    );
                    if server.upload_second_level(&proof, &[record]).is_ok() {
                        accepted += 1;
                    }
                }
                let mut colluding = 0;
                if let Some(c) = &spec.collude_with {
                    let c = self.cfg.device_index(c).expect("validated");
                    let hits = self.devices[c].direct_hits.clone();
                    for h in hits {
                        let Some(tok) = self.devices[c].trace().store().find_by_hash(&h.matched_hash) else {
                            continue;
                        };
                        let secret = tok.secret;
                        let junk = crate::crypto::TokenSecret(self.adversary_rng.gen());
                        let record = crate::server::TokenUploadRecord::new(
                            crate::crypto::token_hash(&junk),
                            crate::crypto::encrypt_metadata(&junk, 0),
                        );
                        if server.upload_second_level(&secret, &[record]).is_ok() {
                            colluding += 1;
                            self.truth.second_level_uploads += 1;
                            self.truth.second_level_records += 1;
                            self.truth.records_published += 1;
                        }
                    }
                }
                let a = &mut self.attacks[adv];
                a.attempts = spec.attempts;
                a.successes = accepted;
                a.colluding_accepted = colluding;
            }
            Scheme::Decentralized => {
                // Exposure is decided on the claimant's own phone; nobody can
                // check a claim against a published identifier.
                let available = self.dserver.published().len() as u64 * 144;
                let claims = spec.attempts.min(available);
                let a = &mut self.attacks[adv];
                a.attempts = claims;
                a.successes = claims;
            }
            Scheme::Centralized => {
                // Matching happens on the server; a client has no claim to make
                // and uploads require a TAN.
                self.attacks[adv].attempts = spec.attempts;
            }
        }
    }

    fn finish(mut self) -> ScenarioReport {
        let cfg = self.cfg;
        // attack successes: distinct victims with a fabricated notification
        for (k, spec) in cfg.adversaries.iter().enumerate() {
            let label = &self.labels[k];
            let victims: BTreeSet<&str> = self
                .notifications
                .iter()
                .filter(|n| n.attack.as_deref() == Some(label.as_str()))
                .map(|n| n.device.as_str())
                .collect();
            let a = &mut self.attacks[k];
            match spec.kind {
                AdversaryKind::RelayOneway | AdversaryKind::RelayTwoway => {
                    let both = spec.kind == AdversaryKind::RelayTwoway || spec.mirror;
                    a.attempts = spec.emit.len() as u64 + if both { spec.capture.len() as u64 } else { 0 };
                    a.successes = victims.len() as u64;
                }
                AdversaryKind::KissReplay => a.successes = victims.len() as u64,
                AdversaryKind::Eavesdropper | AdversaryKind::FakeClaimer => {}
            }
        }
        // linkability
        let key_groups: Vec<Vec<[u8; 16]>> =
            self.dserver.published().iter().map(|p| p.key.tempids().into_iter().map(|t| t.0).collect()).collect();
        let tracks = eavesdropper_linkability(&self.sensor_log, &key_groups);
        let mut watched: BTreeSet<usize> = BTreeSet::new();
        for (k, spec) in cfg.adversaries.iter().enumerate() {
            if spec.kind != AdversaryKind::Eavesdropper {
                continue;
            }
            let mut tracked = 0;
            for p in &spec.passes {
                let d = cfg.device_index(&p.device).expect("validated");
                if watched.insert(d) && tracks.get(&d).is_some_and(|t| t.max_track_s > cfg.protocol.frame_period) {
                    tracked += 1;
                }
            }
            let a = &mut self.attacks[k];
            a.attempts = spec.passes.iter().map(|p| p.device.as_str()).collect::<BTreeSet<_>>().len() as u64;
            a.successes = tracked;
        }
        let mut linkability = Vec::new();
        for &d in &watched {
            let track = tracks.get(&d).copied().unwrap_or_default();
            let observed: BTreeSet<[u8; 16]> =
                self.sensor_log.iter().filter(|o| o.device == d).map(|o| o.identifier).collect();
            let mut linked_days = Vec::new();
            if let Node::Decentral(c) = &self.devices[d].node {
                for p in self.dserver.published() {
                    if self.key_owner.get(&p.key) != Some(&d) {
                        continue;
                    }
                    let linked: BTreeSet<[u8; 16]> = p.key.tempids().into_iter().map(|t| t.0).collect();
                    let truth: BTreeSet<[u8; 16]> = c.daily_key(p.key.day).tempids().into_iter().map(|t| t.0).collect();
                    linked_days.push(LinkedDay {
                        day: p.key.day as i64 - (self.start / DAY_SECS) as i64,
                        linked_identifiers: linked.len() as u64,
                        equals_ground_truth: linked == truth,
                        observed_identifiers: observed.intersection(&linked).count() as u64,
                    });
                }
            }
            linkability.push(LinkabilityEntry {
                device: self.devices[d].id.clone(),
                observations: track.observations,
                distinct_identifiers: track.distinct_identifiers,
                max_track_s: track.max_track_s,
                linked_days,
            });
        }
        for a in &mut self.attacks {
            a.finish();
        }
        let (attempts, successes) = self
            .attacks
            .iter()
            .filter(|a| a.kind != AdversaryKind::Eavesdropper)
            .fold((0, 0), |acc, a| (acc.0 + a.attempts, acc.1 + a.successes));
        let attack_success_rate = if attempts == 0 { 0.0 } else { successes as f64 / attempts as f64 };
        let (mut up, mut down) = (self.baseline_up, self.baseline_down);
        for d in &self.devices {
            if let Some(w) = &d.wire {
                up += w.bytes_sent;
                down += w.bytes_received;
            }
        }
        self.notifications.sort_by(|a, b| (a.time, &a.device, &a.matched).cmp(&(b.time, &b.device, &b.matched)));
        let false_count = self.notifications.iter().filter(|n| !n.genuine).count() as u64;
        ScenarioReport {
            version: REPORT_VERSION,
            name: cfg.name.clone(),
            scheme: cfg.scheme,
            seed: cfg.seed,
            duration_days: cfg.duration_days,
            genuine_notification_count: self.notifications.len() as u64 - false_count,
            false_notification_count: false_count,
            notifications: self.notifications,
            attack_success_rate,
            attacks: self.attacks,
            max_linkability_window_s: linkability.iter().map(|l| l.max_track_s).max().unwrap_or(0),
            linkability,
            payload_bytes_uploaded: up,
            payload_bytes_downloaded: down,
            contacts: self.contacts,
            server_stats: self.server.as_ref().map(|s| s.stats_snapshot()),
            ground_truth: self.truth,
            match_events: self.match_events,
        }
    }
}
