//! Length-prefixed binary protocol for the tracing server.
//!
//! Every message is `u32 BE length || opcode || body`, where the length
//! covers opcode and body. Responses echo the request opcode with the high
//! bit set; `0xFF` carries an error string.
//!
//! A record is `hash (16) || u32 BE ciphertext length || ciphertext || tag`.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{
    NotificationKind, PublishedFeed, RecordTag, RejectReason, ServerStats, TokenUploadRecord, TracingServer,
    UploadResult,
};
use crate::crypto::{TokenHash, TokenSecret, TOKEN_HASH_LEN, TOKEN_LEN};
use crate::error::WireError;

pub const MAX_FRAME: usize = 64 << 20;

pub mod opcode {
    pub const UPLOAD_INFECTED: u8 = 0x01;
    pub const UPLOAD_SECOND_LEVEL: u8 = 0x02;
    pub const UPLOAD_SUPERSPREADER: u8 = 0x03;
    pub const FETCH_FEED: u8 = 0x04;
    pub const ISSUE_TAN: u8 = 0x05;
    pub const STATS: u8 = 0x06;
    pub const CLOSE_EPOCH: u8 = 0x07;
    pub const REPORT: u8 = 0x08;
    pub const RESPONSE: u8 = 0x80;
    pub const ERROR: u8 = 0xFF;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    UploadInfected { tan: String, records: Vec<TokenUploadRecord> },
    UploadSecondLevel { proof: TokenSecret, records: Vec<TokenUploadRecord> },
    UploadSuperspreader { proofs: Vec<TokenSecret>, records: Vec<TokenUploadRecord> },
    FetchFeed { since_epoch: u64 },
    IssueTan { context: Vec<u8> },
    Stats,
    CloseEpoch,
    Report(NotificationKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Upload(UploadResult),
    Feed(PublishedFeed),
    Tan(String),
    Stats(ServerStats),
    Epoch(u64),
    Ack,
    Error(String),
}

pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n > self.buf.len() {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes)
        }
    }
}

pub fn encode_record(out: &mut Vec<u8>, record: &TokenUploadRecord) {
    out.extend_from_slice(&record.hash.0);
    out.extend_from_slice(&(record.ciphertext.len() as u32).to_be_bytes());
    out.extend_from_slice(&record.ciphertext);
    out.push(record.tag.to_byte());
}

pub fn decode_record(r: &mut Reader<'_>) -> Result<TokenUploadRecord, WireError> {
    let hash = TokenHash(r.take(TOKEN_HASH_LEN)?.try_into().unwrap());
    let n = r.len()?;
    let ciphertext = r.take(n)?.to_vec();
    let tag_byte = r.u8()?;
    let tag = RecordTag::from_byte(tag_byte).ok_or(WireError::UnknownTag(tag_byte))?;
    Ok(TokenUploadRecord { hash, ciphertext, tag })
}

fn encode_records(out: &mut Vec<u8>, records: &[TokenUploadRecord]) {
    out.extend_from_slice(&(records.len() as u32).to_be_bytes());
    for r in records {
        encode_record(out, r);
    }
}

fn decode_records(r: &mut Reader<'_>) -> Result<Vec<TokenUploadRecord>, WireError> {
    let n = r.u32()? as usize;
    // each record takes at least 21 bytes
    if n > r.buf.len() / 21 {
        return Err(WireError::Truncated);
    }
    (0..n).map(|_| decode_record(r)).collect()
}

fn secret(r: &mut Reader<'_>) -> Result<TokenSecret, WireError> {
    Ok(TokenSecret(r.take(TOKEN_LEN)?.try_into().unwrap()))
}

fn frame(op: u8, body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 5);
    out.extend_from_slice(&(body.len() as u32 + 1).to_be_bytes());
    out.push(op);
    out.extend_from_slice(&body);
    out
}

fn kind_byte(kind: NotificationKind) -> u8 {
    match kind {
        NotificationKind::Direct => 0,
        NotificationKind::SecondLevel => 1,
    }
}

impl Request {
    pub fn opcode(&self) -> u8 {
        use opcode::*;
        match self {
            Request::UploadInfected { .. } => UPLOAD_INFECTED,
            Request::UploadSecondLevel { .. } => UPLOAD_SECOND_LEVEL,
            Request::UploadSuperspreader { .. } => UPLOAD_SUPERSPREADER,
            Request::FetchFeed { .. } => FETCH_FEED,
            Request::IssueTan { .. } => ISSUE_TAN,
            Request::Stats => STATS,
            Request::CloseEpoch => CLOSE_EPOCH,
            Request::Report(_) => REPORT,
        }
    }

    /// Full framed encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Request::UploadInfected { tan, records } => {
                b.push(tan.len() as u8);
                b.extend_from_slice(tan.as_bytes());
                encode_records(&mut b, records);
            }
            Request::UploadSecondLevel { proof, records } => {
                b.extend_from_slice(&proof.0);
                encode_records(&mut b, records);
            }
            Request::UploadSuperspreader { proofs, records } => {
                b.extend_from_slice(&(proofs.len() as u32).to_be_bytes());
                for p in proofs {
                    b.extend_from_slice(&p.0);
                }
                encode_records(&mut b, records);
            }
            Request::FetchFeed { since_epoch } => b.extend_from_slice(&since_epoch.to_be_bytes()),
            Request::IssueTan { context } => {
                b.extend_from_slice(&(context.len() as u32).to_be_bytes());
                b.extend_from_slice(context);
            }
            Request::Stats | Request::CloseEpoch => {}
            Request::Report(kind) => b.push(kind_byte(*kind)),
        }
        frame(self.opcode(), b)
    }

    /// Decodes an unframed `opcode || body`.
    pub fn decode(msg: &[u8]) -> Result<Self, WireError> {
        use opcode::*;
        let mut r = Reader::new(msg);
        let op = r.u8()?;
        let req = match op {
            UPLOAD_INFECTED => {
                let n = r.u8()? as usize;
                let tan = std::str::from_utf8(r.take(n)?).map_err(|_| WireError::Malformed("tan"))?.to_owned();
                Request::UploadInfected { tan, records: decode_records(&mut r)? }
            }
            UPLOAD_SECOND_LEVEL => {
                Request::UploadSecondLevel { proof: secret(&mut r)?, records: decode_records(&mut r)? }
            }
            UPLOAD_SUPERSPREADER => {
                let n = r.u32()? as usize;
                if n > r.buf.len() / TOKEN_LEN {
                    return Err(WireError::Truncated);
                }
                let proofs = (0..n).map(|_| secret(&mut r)).collect::<Result<_, _>>()?;
                Request::UploadSuperspreader { proofs, records: decode_records(&mut r)? }
            }
            FETCH_FEED => Request::FetchFeed { since_epoch: r.u64()? },
            ISSUE_TAN => {
                let n = r.len()?;
                Request::IssueTan { context: r.take(n)?.to_vec() }
            }
            STATS => Request::Stats,
            CLOSE_EPOCH => Request::CloseEpoch,
            REPORT => Request::Report(match r.u8()? {
                0 => NotificationKind::Direct,
                1 => NotificationKind::SecondLevel,
                _ => return Err(WireError::Malformed("notification kind")),
            }),
            other => return Err(WireError::UnknownOpcode(other)),
        };
        r.finish()?;
        Ok(req)
    }
}

const STATS_FIELDS: usize = 8;

fn stats_fields(s: &ServerStats) -> [u64; STATS_FIELDS] {
    [
        s.active_users,
        s.infected_uploads,
        s.records_published,
        s.second_level_uploads,
        s.second_level_records,
        s.superspreader_flags,
        s.direct_notifications_reported,
        s.second_level_notifications_reported,
    ]
}

impl Response {
    /// Full framed encoding as a reply to `request_op`.
    pub fn encode(&self, request_op: u8) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Response::Upload(Ok(n)) => {
                b.push(0);
                b.extend_from_slice(&(*n as u32).to_be_bytes());
            }
            Response::Upload(Err(reason)) => {
                b.push(1);
                b.push(reason.to_byte());
            }
            Response::Feed(feed) => {
                b.extend_from_slice(&feed.feed_epoch.to_be_bytes());
                encode_records(&mut b, &feed.records);
            }
            Response::Tan(t) => {
                b.push(t.len() as u8);
                b.extend_from_slice(t.as_bytes());
            }
            Response::Stats(s) => {
                for v in stats_fields(s) {
                    b.extend_from_slice(&v.to_be_bytes());
                }
            }
            Response::Epoch(e) => b.extend_from_slice(&e.to_be_bytes()),
            Response::Ack => {}
            Response::Error(msg) => {
                b.extend_from_slice(msg.as_bytes());
                return frame(opcode::ERROR, b);
            }
        }
        frame(opcode::RESPONSE | request_op, b)
    }

    /// Decodes an unframed response to a request with opcode `request_op`.
    pub fn decode(msg: &[u8], request_op: u8) -> Result<Self, WireError> {
        use opcode::*;
        let mut r = Reader::new(msg);
        let op = r.u8()?;
        if op == ERROR {
            return Ok(Response::Error(String::from_utf8_lossy(r.buf).into_owned()));
        }
        if op != RESPONSE | request_op {
            return Err(WireError::UnknownOpcode(op));
        }
        let resp = match request_op {
            UPLOAD_INFECTED | UPLOAD_SECOND_LEVEL | UPLOAD_SUPERSPREADER => match r.u8()? {
                0 => Response::Upload(Ok(r.u32()? as usize)),
                1 => {
                    let b = r.u8()?;
                    Response::Upload(Err(RejectReason::from_byte(b).ok_or(WireError::Malformed("reject reason"))?))
                }
                _ => return Err(WireError::Malformed("upload status")),
            },
            FETCH_FEED => {
                let feed_epoch = r.u64()?;
                Response::Feed(PublishedFeed { records: decode_records(&mut r)?, feed_epoch })
            }
            ISSUE_TAN => {
                let n = r.u8()? as usize;
                Response::Tan(std::str::from_utf8(r.take(n)?).map_err(|_| WireError::Malformed("tan"))?.to_owned())
            }
            STATS => {
                let mut v = [0u64; STATS_FIELDS];
                for x in v.iter_mut() {
                    *x = r.u64()?;
                }
                Response::Stats(ServerStats {
                    active_users: v[0],
                    infected_uploads: v[1],
                    records_published: v[2],
                    second_level_uploads: v[3],
                    second_level_records: v[4],
                    superspreader_flags: v[5],
                    direct_notifications_reported: v[6],
                    second_level_notifications_reported: v[7],
                })
            }
            CLOSE_EPOCH => Response::Epoch(r.u64()?),
            REPORT => Response::Ack,
            other => return Err(WireError::UnknownOpcode(other)),
        };
        r.finish()?;
        Ok(resp)
    }
}

/// Source of "now" for TAN expiry checks.
pub enum Clock {
    System,
    Manual(AtomicU64),
}

impl Clock {
    pub fn now(&self) -> u64 {
        match self {
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or_default(),
            Clock::Manual(t) => t.load(Ordering::SeqCst),
        }
    }
}

/// A tracing server behind the wire protocol, owning the shuffle stream used
/// for remote feed downloads.
pub struct WireService {
    server: Arc<TracingServer>,
    shuffle: Mutex<ChaCha20Rng>,
    clock: Clock,
}

impl WireService {
    pub fn new(server: Arc<TracingServer>, shuffle_seed: u64, clock: Clock) -> Self {
        Self { server, shuffle: Mutex::new(ChaCha20Rng::seed_from_u64(shuffle_seed)), clock }
    }

    pub fn server(&self) -> &Arc<TracingServer> {
        &self.server
    }

    /// Sets the manual clock; no effect on a system clock.
    pub fn set_now(&self, now: u64) {
        if let Clock::Manual(t) = &self.clock {
            t.store(now, Ordering::SeqCst);
        }
    }

    pub fn handle(&self, request: Request) -> Response {
        let sp = &self.server;
        match request {
            Request::UploadInfected { tan, records } => {
                Response::Upload(sp.upload_infected(&tan, &records, self.clock.now()))
            }
            Request::UploadSecondLevel { proof, records } => Response::Upload(sp.upload_second_level(&proof, &records)),
            Request::UploadSuperspreader { proofs, records } => {
                Response::Upload(sp.upload_superspreader_proof(&proofs, &records))
            }
            Request::FetchFeed { since_epoch } => {
                let mut rng = self.shuffle.lock().expect("shuffle lock");
                Response::Feed(sp.fetch_feed(since_epoch, &mut *rng))
            }
            Request::IssueTan { context } => Response::Tan(sp.authority().issue_tan(&context, self.clock.now()).value),
            Request::Stats => Response::Stats(sp.stats_snapshot()),
            Request::CloseEpoch => Response::Epoch(sp.advance_epoch()),
            Request::Report(kind) => {
                sp.report_notification(kind);
                Response::Ack
            }
        }
    }

    /// Handles one unframed message and returns the framed reply.
    pub fn handle_bytes(&self, msg: &[u8]) -> Vec<u8> {
        let op = msg.first().copied().unwrap_or(0);
        match Request::decode(msg) {
            Ok(req) => self.handle(req).encode(op),
            Err(e) => Response::Error(e.to_string()).encode(op),
        }
    }
}

pub trait Transport {
    /// Sends one framed request and returns the unframed reply.
    fn exchange(&mut self, framed: &[u8]) -> Result<Vec<u8>, WireError>;
}

/// In-process transport that still goes through the byte encoding.
pub struct Loopback {
    service: Arc<WireService>,
}

impl Loopback {
    pub fn new(service: Arc<WireService>) -> Self {
        Self { service }
    }
}

fn unframe(framed: &[u8]) -> Result<&[u8], WireError> {
    let mut r = Reader::new(framed);
    let n = r.u32()? as usize;
    if n > MAX_FRAME {
        return Err(WireError::TooLarge(n));
    }
    let body = r.take(n)?;
    r.finish()?;
    Ok(body)
}

impl Transport for Loopback {
    fn exchange(&mut self, framed: &[u8]) -> Result<Vec<u8>, WireError> {
        let reply = self.service.handle_bytes(unframe(framed)?);
        Ok(unframe(&reply)?.to_vec())
    }
}

fn read_frame(stream: &mut impl Read) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(WireError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    stream.read_exact(&mut body)?;
    Ok(Some(body))
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, framed: &[u8]) -> Result<Vec<u8>, WireError> {
        self.stream.write_all(framed)?;
        read_frame(&mut self.stream)?.ok_or(WireError::Truncated)
    }
}

/// Serves connections until `shutdown` is set, one thread per connection.
pub fn serve_tcp(listener: TcpListener, service: Arc<WireService>, shutdown: Arc<AtomicBool>) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                let service = service.clone();
                workers.push(std::thread::spawn(move || {
                    while let Ok(Some(msg)) = read_frame(&mut stream) {
                        if stream.write_all(&service.handle_bytes(&msg)).is_err() {
                            break;
                        }
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e),
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// Typed client over any transport, counting framed bytes in each direction.
pub struct WireClient<T: Transport> {
    transport: T,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl<T: Transport> WireClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport, bytes_sent: 0, bytes_received: 0 }
    }

    pub fn call(&mut self, request: &Request) -> Result<Response, WireError> {
        let framed = request.encode();
        let reply = self.transport.exchange(&framed)?;
        self.bytes_sent += framed.len() as u64;
        self.bytes_received += reply.len() as u64 + 4;
        match Response::decode(&reply, request.opcode())? {
            Response::Error(msg) => Err(WireError::Remote(msg)),
            other => Ok(other),
        }
    }

    fn upload(&mut self, request: &Request) -> Result<UploadResult, WireError> {
        match self.call(request)? {
            Response::Upload(r) => Ok(r),
            _ => Err(WireError::Malformed("unexpected response")),
        }
    }

    pub fn upload_infected(&mut self, tan: &str, records: Vec<TokenUploadRecord>) -> Result<UploadResult, WireError> {
        self.upload(&Request::UploadInfected { tan: tan.to_owned(), records })
    }

    pub fn upload_second_level(
        &mut self,
        proof: TokenSecret,
        records: Vec<TokenUploadRecord>,
    ) -> Result<UploadResult, WireError> {
        self.upload(&Request::UploadSecondLevel { proof, records })
    }

    pub fn upload_superspreader(
        &mut self,
        proofs: Vec<TokenSecret>,
        records: Vec<TokenUploadRecord>,
    ) -> Result<UploadResult, WireError> {
        self.upload(&Request::UploadSuperspreader { proofs, records })
    }

    pub fn fetch_feed(&mut self, since_epoch: u64) -> Result<PublishedFeed, WireError> {
        match self.call(&Request::FetchFeed { since_epoch })? {
            Response::Feed(f) => Ok(f),
            _ => Err(WireError::Malformed("unexpected response")),
        }
    }

    pub fn issue_tan(&mut self, context: &[u8]) -> Result<String, WireError> {
        match self.call(&Request::IssueTan { context: context.to_vec() })? {
            Response::Tan(t) => Ok(t),
            _ => Err(WireError::Malformed("unexpected response")),
        }
    }

    pub fn stats(&mut self) -> Result<ServerStats, WireError> {
        match self.call(&Request::Stats)? {
            Response::Stats(s) => Ok(s),
            _ => Err(WireError::Malformed("unexpected response")),
        }
    }

    pub fn close_epoch(&mut self) -> Result<u64, WireError> {
        match self.call(&Request::CloseEpoch)? {
            Response::Epoch(e) => Ok(e),
            _ => Err(WireError::Malformed("unexpected response")),
        }
    }

    pub fn report(&mut self, kind: NotificationKind) -> Result<(), WireError> {
        match self.call(&Request::Report(kind))? {
            Response::Ack => Ok(()),
            _ => Err(WireError::Malformed("unexpected response")),
        }
    }
}
