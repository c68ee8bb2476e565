//! Enrollment and authentication over TCP.
//!
//! Each frame is a big-endian `u32` byte length followed by one UTF-8 line.
//! Requests are four space-separated fields, `-` marking an empty one:
//!
//! ```text
//! enroll <id> digests <m concatenated digest hex>
//! enroll <id> bits <packed bit hex>
//! auth   -    digests <hex>
//! revoke <id> -       -
//! status -    -       -
//! ```
//!
//! Responses are `<STATUS> <id|null> <count> [detail]` with status `OK`,
//! `REJECT` or `ERROR`. Auth responses carry `lookups=<L> counts=<id:c,...>`
//! so a client can rebuild the full [`MatchResult`].
//!
//! In digest-only mode (the default) bit-string payloads are refused by both
//! the server and the client, so unhashed biometric data never crosses the
//! socket.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;

use crate::bits::BitString;
use crate::crypto::{Digest, DIGEST_LEN};
use crate::engine::{MatchResult, Outcome, ShardedStore, SubstringHasher};
use crate::error::{Error, Result};
use crate::population::IdentityId;

pub const MAX_FRAME: usize = 32 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WirePayload {
    Digests(Vec<Digest>),
    Bits(BitString),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WireRequest {
    Enroll {
        id: IdentityId,
        payload: WirePayload,
    },
    Auth {
        payload: WirePayload,
    },
    Revoke {
        id: IdentityId,
    },
    Status,
}

fn digests_hex(digests: &[Digest]) -> String {
    let mut out = String::with_capacity(digests.len() * DIGEST_LEN * 2);
    for d in digests {
        out.push_str(&d.to_hex());
    }
    out
}

fn payload_fields(p: &WirePayload) -> (&'static str, String) {
    match p {
        WirePayload::Digests(d) => ("digests", digests_hex(d)),
        WirePayload::Bits(b) => ("bits", b.to_hex()),
    }
}

impl WireRequest {
    pub fn encode(&self) -> String {
        match self {
            WireRequest::Enroll { id, payload } => {
                let (kind, hex) = payload_fields(payload);
                format!("enroll {id} {kind} {hex}")
            }
            WireRequest::Auth { payload } => {
                let (kind, hex) = payload_fields(payload);
                format!("auth - {kind} {hex}")
            }
            WireRequest::Revoke { id } => format!("revoke {id} - -"),
            WireRequest::Status => "status - - -".to_string(),
        }
    }

    /// Parses a request line. Bit payloads are decoded against `n` bits.
    pub fn decode(line: &str, n: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(' ').collect();
        let [op, id, kind, payload] = fields[..] else {
            return Err(Error::Protocol(format!(
                "expected 4 fields, got {}",
                fields.len()
            )));
        };
        let id = || -> Result<IdentityId> {
            id.parse::<u32>()
                .map(IdentityId)
                .map_err(|_| Error::Protocol(format!("bad identity {id:?}")))
        };
        let payload = || -> Result<WirePayload> {
            match kind {
                "digests" => {
                    if payload.len() % (DIGEST_LEN * 2) != 0 {
                        return Err(Error::Protocol(
                            "digest hex length not a multiple of 64".into(),
                        ));
                    }
                    let digests = (0..payload.len())
                        .step_by(DIGEST_LEN * 2)
                        .map(|i| {
                            payload
                                .get(i..i + DIGEST_LEN * 2)
                                .ok_or_else(|| Error::Protocol("non-ASCII digest hex".into()))
                                .and_then(Digest::from_hex)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(WirePayload::Digests(digests))
                }
                "bits" => Ok(WirePayload::Bits(BitString::from_hex(payload, n)?)),
                other => Err(Error::Protocol(format!("unknown payload kind {other:?}"))),
            }
        };
        match op {
            "enroll" => Ok(WireRequest::Enroll {
                id: id()?,
                payload: payload()?,
            }),
            "auth" => Ok(WireRequest::Auth {
                payload: payload()?,
            }),
            "revoke" => Ok(WireRequest::Revoke { id: id()? }),
            "status" => Ok(WireRequest::Status),
            other => Err(Error::Protocol(format!("unknown op {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WireStatus {
    Ok,
    Reject,
    Error,
}

impl fmt::Display for WireStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WireStatus::Ok => "OK",
            WireStatus::Reject => "REJECT",
            WireStatus::Error => "ERROR",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireResponse {
    pub status: WireStatus,
    pub id: Option<IdentityId>,
    pub count: u32,
    pub detail: String,
}

impl WireResponse {
    fn error(e: &Error) -> Self {
        Self {
            status: WireStatus::Error,
            id: None,
            count: 0,
            detail: e.to_string().replace('\n', " "),
        }
    }

    fn from_match(r: &MatchResult) -> Self {
        let mut counts: Vec<_> = r.counts.iter().collect();
        counts.sort_unstable();
        let counts = counts
            .iter()
            .map(|(id, c)| format!("{id}:{c}"))
            .collect::<Vec<_>>()
            .join(",");
        let detail = format!("lookups={} counts={counts}", r.lookups);
        match r.outcome {
            Outcome::Matched { id, count } => Self {
                status: WireStatus::Ok,
                id: Some(id),
                count,
                detail,
            },
            Outcome::Rejected => Self {
                status: WireStatus::Reject,
                id: None,
                count: r.best_count(),
                detail,
            },
        }
    }

    pub fn encode(&self) -> String {
        let id = self
            .id
            .map_or_else(|| "null".to_string(), |id| id.to_string());
        if self.detail.is_empty() {
            format!("{} {id} {}", self.status, self.count)
        } else {
            format!("{} {id} {} {}", self.status, self.count, self.detail)
        }
    }

    pub fn decode(line: &str) -> Result<Self> {
        let mut parts = line.splitn(4, ' ');
        let bad = || Error::Protocol(format!("malformed response {line:?}"));
        let status = match parts.next().ok_or_else(bad)? {
            "OK" => WireStatus::Ok,
            "REJECT" => WireStatus::Reject,
            "ERROR" => WireStatus::Error,
            _ => return Err(bad()),
        };
        let id = match parts.next().ok_or_else(bad)? {
            "null" => None,
            s => Some(IdentityId(s.parse().map_err(|_| bad())?)),
        };
        let count = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Self {
            status,
            id,
            count,
            detail: parts.next().unwrap_or("").to_string(),
        })
    }

    fn field(&self, key: &str) -> Option<&str> {
        self.detail
            .split(' ')
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }

    /// Rebuilds the engine result from an auth response.
    pub fn to_match_result(&self) -> Result<MatchResult> {
        let bad = || Error::Protocol(format!("not an auth response: {:?}", self.encode()));
        let outcome = match (self.status, self.id) {
            (WireStatus::Ok, Some(id)) => Outcome::Matched {
                id,
                count: self.count,
            },
            (WireStatus::Reject, None) => Outcome::Rejected,
            (WireStatus::Error, _) => return Err(Error::Protocol(self.detail.clone())),
            _ => return Err(bad()),
        };
        let lookups = self
            .field("lookups")
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        let mut counts = HashMap::new();
        for pair in self
            .field("counts")
            .ok_or_else(bad)?
            .split(',')
            .filter(|s| !s.is_empty())
        {
            let (id, c) = pair.split_once(':').ok_or_else(bad)?;
            counts.insert(
                IdentityId(id.parse().map_err(|_| bad())?),
                c.parse().map_err(|_| bad())?,
            );
        }
        Ok(MatchResult {
            outcome,
            counts,
            lookups,
        })
    }
}

pub fn write_frame<W: Write>(w: &mut W, text: &str) -> io::Result<()> {
    let len = u32::try_from(text.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(text.as_bytes())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R, max_len: usize) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > max_len {
        return Err(Error::Protocol(format!(
            "frame of {len} bytes exceeds limit {max_len}"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub tau: usize,
    pub digest_only: bool,
    pub max_frame: usize,
    /// Save the store here after every successful enroll or revoke.
    pub persist_path: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            tau: 1,
            digest_only: true,
            max_frame: MAX_FRAME,
            persist_path: None,
        }
    }
}

struct Shared {
    store: Arc<ShardedStore>,
    hasher: SubstringHasher,
    cfg: ServiceConfig,
    persist: Mutex<()>,
}

impl Shared {
    fn digests(&self, payload: WirePayload) -> Result<Vec<Digest>> {
        match payload {
            WirePayload::Digests(d) => {
                let m = self.hasher.plan().m();
                if d.len() != m {
                    return Err(Error::Protocol(format!(
                        "expected {m} digests, got {}",
                        d.len()
                    )));
                }
                Ok(d)
            }
            WirePayload::Bits(_) if self.cfg.digest_only => Err(Error::Protocol(
                "server is digest-only; hash on the scanner".into(),
            )),
            WirePayload::Bits(b) => self.hasher.derive(&b),
        }
    }

    fn persist(&self) -> Result<()> {
        if let Some(path) = &self.cfg.persist_path {
            let _guard = self.persist.lock();
            self.store.save(path)?;
        }
        Ok(())
    }

    fn handle(&self, req: WireRequest) -> Result<WireResponse> {
        let ok = |id: Option<IdentityId>, count: u32, detail: String| WireResponse {
            status: WireStatus::Ok,
            id,
            count,
            detail,
        };
        match req {
            WireRequest::Enroll { id, payload } => {
                let digests = self.digests(payload)?;
                self.store.enroll_digests(id, &digests)?;
                self.persist()?;
                Ok(ok(Some(id), digests.len() as u32, String::new()))
            }
            WireRequest::Auth { payload } => {
                let digests = self.digests(payload)?;
                Ok(WireResponse::from_match(
                    &self.store.authenticate_digests(&digests, self.cfg.tau),
                ))
            }
            WireRequest::Revoke { id } => {
                self.store.revoke(id)?;
                self.persist()?;
                Ok(ok(Some(id), 0, String::new()))
            }
            WireRequest::Status => {
                let plan = self.hasher.plan();
                Ok(ok(
                    None,
                    0,
                    format!(
                        "enrolled={} shards={} m={} k={}",
                        self.store.enrolled_count(),
                        self.store.shard_count(),
                        plan.m(),
                        plan.k()
                    ),
                ))
            }
        }
    }

    fn respond(&self, frame: &[u8]) -> WireResponse {
        std::str::from_utf8(frame)
            .map_err(|_| Error::Protocol("request is not UTF-8".into()))
            .and_then(|line| WireRequest::decode(line, self.hasher.plan().n()))
            .and_then(|req| self.handle(req))
            .unwrap_or_else(|e| WireResponse::error(&e))
    }

    fn connection(&self, stream: TcpStream) {
        let Ok(read_half) = stream.try_clone() else {
            return;
        };
        let mut reader = BufReader::new(read_half);
        let mut writer = BufWriter::new(stream);
        loop {
            let reply = match read_frame(&mut reader, self.cfg.max_frame) {
                Ok(None) => return,
                Ok(Some(frame)) => self.respond(&frame),
                Err(Error::Io(_)) => return,
                Err(e) => {
                    // Oversized frame: the rest of the stream cannot be resynchronized.
                    let _ = write_frame(&mut writer, &WireResponse::error(&e).encode());
                    return;
                }
            };
            if write_frame(&mut writer, &reply.encode()).is_err() {
                return;
            }
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_accepting();
        }
    }
}

/// Binds and starts serving on a background thread, one thread per
/// connection.
pub fn serve(
    addr: impl ToSocketAddrs,
    store: Arc<ShardedStore>,
    hasher: SubstringHasher,
    cfg: ServiceConfig,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Shared {
        store,
        hasher,
        cfg,
        persist: Mutex::new(()),
    });
    let stop_flag = Arc::clone(&stop);
    let thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&shared);
            thread::spawn(move || shared.connection(stream));
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceStatus {
    pub enrolled: usize,
    pub shards: usize,
    pub m: usize,
    pub k: usize,
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    digest_only: bool,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            digest_only: true,
        })
    }

    /// Allows bit-string payloads to leave this client.
    pub fn allow_bits(mut self) -> Self {
        self.digest_only = false;
        self
    }

    pub fn send_raw(&mut self, line: &str) -> Result<WireResponse> {
        write_frame(&mut self.writer, line)?;
        let frame = read_frame(&mut self.reader, MAX_FRAME)?
            .ok_or_else(|| Error::Protocol("server closed the connection".into()))?;
        let text = String::from_utf8(frame)
            .map_err(|_| Error::Protocol("response is not UTF-8".into()))?;
        WireResponse::decode(&text)
    }

    pub fn request(&mut self, req: &WireRequest) -> Result<WireResponse> {
        let carries_bits = matches!(
            req,
            WireRequest::Enroll {
                payload: WirePayload::Bits(_),
                ..
            } | WireRequest::Auth {
                payload: WirePayload::Bits(_)
            }
        );
        if carries_bits && self.digest_only {
            return Err(Error::Protocol(
                "client is digest-only; refusing to send a bit string".into(),
            ));
        }
        self.send_raw(&req.encode())
    }

    fn expect_ok(resp: WireResponse) -> Result<WireResponse> {
        match resp.status {
            WireStatus::Error => Err(Error::Protocol(resp.detail)),
            _ => Ok(resp),
        }
    }

    pub fn enroll_digests(&mut self, id: IdentityId, digests: &[Digest]) -> Result<()> {
        Self::expect_ok(self.request(&WireRequest::Enroll {
            id,
            payload: WirePayload::Digests(digests.to_vec()),
        })?)
        .map(drop)
    }

    pub fn authenticate_digests(&mut self, digests: &[Digest]) -> Result<MatchResult> {
        self.request(&WireRequest::Auth {
            payload: WirePayload::Digests(digests.to_vec()),
        })?
        .to_match_result()
    }

    pub fn revoke(&mut self, id: IdentityId) -> Result<()> {
        Self::expect_ok(self.request(&WireRequest::Revoke { id })?).map(drop)
    }

    pub fn status(&mut self) -> Result<ServiceStatus> {
        let resp = Self::expect_ok(self.request(&WireRequest::Status)?)?;
        let get = |key: &str| -> Result<usize> {
            resp.field(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Protocol(format!("status lacks {key}")))
        };
        Ok(ServiceStatus {
            enrolled: get("enrolled")?,
            shards: get("shards")?,
            m: get("m")?,
            k: get("k")?,
        })
    }
}
