//! Framed two-party sessions over an in-process channel or a TCP socket.
//!
//! A frame is a 16-byte header, the payload and a CRC-32 of both:
//!
//! ```text
//! "SOSR" | version u8 | protocol u8 | round u8 | type u8 | len u32 | seq u32 | payload | crc32
//! ```
//!
//! [`run_session`] runs Alice on a scoped thread and Bob on the caller's
//! thread. Bob's closure decides when the session is over; dropping his
//! endpoint disconnects the link, which ends Alice's serve loop.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Instant;

use base64::Engine;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, FramingError, Result};
use crate::rng_hash::Seed;

pub const MAGIC: [u8; 4] = *b"SOSR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const CRC_LEN: usize = 4;
/// Largest payload accepted from the wire.
pub const MAX_PAYLOAD: usize = 1 << 30;
/// Round label of the encoding request/response exchange that follows a
/// parent table.
pub const ROUND_1B: u8 = 0x1B;

macro_rules! wire_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident = $val:expr),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        #[repr(u8)]
        #[allow(non_camel_case_types)]
        pub enum $name { $($variant = $val),* }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => stringify!($variant)),* }
            }

            pub fn from_u8(v: u8) -> Option<$name> {
                match v { $($val => Some($name::$variant),)* _ => None }
            }
        }
    };
}

wire_enum! {
    /// Protocol carried by a session.
    ProtocolId {
        SET_RECON = 1,
        SSR_NAIVE = 2,
        SSR_IBLT2 = 3,
        SSR_CASCADE = 4,
        SSR_MULTI = 5,
        GRAPH_ORACLE = 6,
        GRAPH_DEGORDER = 7,
        GRAPH_DEGNBR = 8,
        FOREST = 9,
    }
}

wire_enum! {
    /// Message types shared by all protocols.
    MsgType {
        ESTIMATOR = 1,
        IBLT = 2,
        EVALS = 3,
        VERIFY = 4,
        PARENT_IBLT = 5,
        ENC_REQUEST = 6,
        ENC_RESPONSE = 7,
        HASH_IBLT = 8,
        EST_LIST = 9,
        CHILD_IBLT = 10,
        CHILD_EVALS = 11,
        RETRY = 12,
        CHILD_DATA = 13,
        STAR_IBLT = 14,
        GRAPH_FP = 15,
        DONE = 16,
    }
}

/// One decoded frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub protocol: u8,
    pub round: u8,
    pub msg_type: u8,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + CRC_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[VERSION, self.protocol, self.round, self.msg_type]);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// bytes consumed. `Truncated` means more input is needed.
    pub fn decode(bytes: &[u8]) -> std::result::Result<(Frame, usize), FramingError> {
        if bytes.len() < HEADER_LEN {
            if !MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
                return Err(FramingError::BadMagic);
            }
            return Err(FramingError::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(FramingError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(FramingError::VersionMismatch(bytes[4]));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(FramingError::Oversized(len));
        }
        let total = HEADER_LEN + len + CRC_LEN;
        if bytes.len() < total {
            return Err(FramingError::Truncated);
        }
        let crc = u32::from_le_bytes(bytes[total - CRC_LEN..total].try_into().unwrap());
        if crc32fast::hash(&bytes[..total - CRC_LEN]) != crc {
            return Err(FramingError::CrcMismatch);
        }
        let frame = Frame {
            protocol: bytes[5],
            round: bytes[6],
            msg_type: bytes[7],
            seq: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
            payload: bytes[HEADER_LEN..HEADER_LEN + len].to_vec(),
        };
        Ok((frame, total))
    }

    pub fn msg_type(&self) -> Option<MsgType> {
        MsgType::from_u8(self.msg_type)
    }
}

/// Reassembles frames from arbitrarily fragmented input.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// The next complete frame, `Ok(None)` if more bytes are needed.
    pub fn next_frame(&mut self) -> std::result::Result<Option<Frame>, FramingError> {
        match Frame::decode(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Err(FramingError::Truncated) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// A reliable byte stream between the two parties.
pub trait Link: Send {
    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()>;
    /// Blocks until at least one byte arrives; `PeerDisconnected` at EOF.
    fn read_bytes(&mut self) -> Result<Vec<u8>>;
}

/// In-process link over channels, optionally splitting each write into
/// random fragments.
pub struct ChannelLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    fragment: Option<ChaCha20Rng>,
}

impl ChannelLink {
    pub fn pair() -> (ChannelLink, ChannelLink) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        (ChannelLink { tx: tx_a, rx: rx_a, fragment: None }, ChannelLink { tx: tx_b, rx: rx_b, fragment: None })
    }

    /// A pair whose writes are cut at random boundaries drawn from `seed`.
    pub fn fragmented_pair(seed: &Seed) -> (ChannelLink, ChannelLink) {
        let (mut a, mut b) = ChannelLink::pair();
        a.fragment = Some(seed.derive("fragment", 0).rng());
        b.fragment = Some(seed.derive("fragment", 1).rng());
        (a, b)
    }
}

impl Link for ChannelLink {
    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        match &mut self.fragment {
            None => self.tx.send(bytes.to_vec()).map_err(|_| Error::PeerDisconnected),
            Some(rng) => {
                let mut rest = bytes;
                while !rest.is_empty() {
                    let cut = rng.gen_range(1..=rest.len().min(23));
                    self.tx.send(rest[..cut].to_vec()).map_err(|_| Error::PeerDisconnected)?;
                    rest = &rest[cut..];
                }
                Ok(())
            }
        }
    }

    fn read_bytes(&mut self) -> Result<Vec<u8>> {
        self.rx.recv().map_err(|_| Error::PeerDisconnected)
    }
}

/// TCP stream link.
pub struct SocketLink {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl SocketLink {
    pub fn new(stream: TcpStream) -> Result<SocketLink> {
        stream.set_nodelay(true)?;
        Ok(SocketLink { stream, buf: vec![0; 1 << 16] })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<SocketLink> {
        SocketLink::new(TcpStream::connect(addr)?)
    }

    /// Accepts one connection.
    pub fn accept(listener: &TcpListener) -> Result<SocketLink> {
        let (stream, _) = listener.accept()?;
        SocketLink::new(stream)
    }
}

impl Link for SocketLink {
    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.stream.write_all(bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => Error::PeerDisconnected,
            _ => Error::Io(e),
        })
    }

    fn read_bytes(&mut self) -> Result<Vec<u8>> {
        loop {
            match self.stream.read(&mut self.buf) {
                Ok(0) => return Err(Error::PeerDisconnected),
                Ok(n) => return Ok(self.buf[..n].to_vec()),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) if e.kind() == std::io::ErrorKind::ConnectionReset => return Err(Error::PeerDisconnected),
                Err(e) => return Err(Error::Io(e)),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Role {
    Alice,
    Bob,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

/// One frame as seen by an endpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub direction: Direction,
    pub micros: u64,
    pub frame: Frame,
}

/// Ordered frames of a session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<FrameRecord>,
}

/// Byte and round totals of a transcript.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub frames: usize,
    /// Wire bytes including header and CRC.
    pub bytes_ab: u64,
    pub bytes_ba: u64,
    /// Payload bytes only.
    pub payload_ab: u64,
    pub payload_ba: u64,
    /// Messages counted without the encoding-exchange frames.
    pub rounds_paper: usize,
    /// Messages counted over every frame.
    pub rounds_actual: usize,
    pub payload_by_type: BTreeMap<String, u64>,
    pub payload_by_round: BTreeMap<u8, u64>,
    pub frames_by_type: BTreeMap<String, usize>,
}

impl Summary {
    pub fn payload_total(&self) -> u64 {
        self.payload_ab + self.payload_ba
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_ab + self.bytes_ba
    }
}

fn count_rounds<'a>(dirs: impl Iterator<Item = &'a Direction>) -> usize {
    let mut rounds = 0;
    let mut last = None;
    for d in dirs {
        if last != Some(d) {
            rounds += 1;
            last = Some(d);
        }
    }
    rounds
}

fn type_name(t: u8) -> String {
    MsgType::from_u8(t).map_or_else(|| format!("0x{t:02x}"), |m| m.name().to_string())
}

impl Transcript {
    pub fn summary(&self) -> Summary {
        let mut s = Summary { frames: self.records.len(), ..Summary::default() };
        for r in &self.records {
            let (wire, payload) = (r.frame.wire_len() as u64, r.frame.payload.len() as u64);
            match r.direction {
                Direction::AliceToBob => {
                    s.bytes_ab += wire;
                    s.payload_ab += payload;
                }
                Direction::BobToAlice => {
                    s.bytes_ba += wire;
                    s.payload_ba += payload;
                }
            }
            *s.payload_by_type.entry(type_name(r.frame.msg_type)).or_default() += payload;
            *s.frames_by_type.entry(type_name(r.frame.msg_type)).or_default() += 1;
            *s.payload_by_round.entry(r.frame.round).or_default() += payload;
        }
        s.rounds_actual = count_rounds(self.records.iter().map(|r| &r.direction));
        s.rounds_paper = count_rounds(self.records.iter().filter(|r| r.frame.round != ROUND_1B).map(|r| &r.direction));
        s
    }

    /// Payload bytes in order, for comparing runs across backends.
    pub fn payloads(&self) -> Vec<(Direction, u8, u8, &[u8])> {
        self.records.iter().map(|r| (r.direction, r.frame.round, r.frame.msg_type, r.frame.payload.as_slice())).collect()
    }

    pub fn frames_of(&self, ty: MsgType) -> impl Iterator<Item = &FrameRecord> {
        self.records.iter().filter(move |r| r.frame.msg_type == ty as u8)
    }

    /// One JSON object per frame, then a summary line.
    pub fn to_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            direction: Direction,
            micros: u64,
            protocol: u8,
            round: u8,
            msg_type: String,
            seq: u32,
            len: usize,
            payload: &'a str,
        }
        let mut out = String::new();
        for r in &self.records {
            let payload = base64::engine::general_purpose::STANDARD.encode(&r.frame.payload);
            let line = Line {
                direction: r.direction,
                micros: r.micros,
                protocol: r.frame.protocol,
                round: r.frame.round,
                msg_type: type_name(r.frame.msg_type),
                seq: r.frame.seq,
                len: r.frame.payload.len(),
                payload: &payload,
            };
            out.push_str(&serde_json::to_string(&line).expect("transcript line serializes"));
            out.push('\n');
        }
        let summary = serde_json::json!({ "summary": self.summary() });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// One party's side of a session.
pub struct Endpoint {
    role: Role,
    protocol: ProtocolId,
    link: Box<dyn Link>,
    reader: FrameReader,
    seq: u32,
    start: Instant,
    log: Transcript,
}

impl Endpoint {
    pub fn new(role: Role, protocol: ProtocolId, link: Box<dyn Link>) -> Endpoint {
        Endpoint { role, protocol, link, reader: FrameReader::default(), seq: 0, start: Instant::now(), log: Transcript::default() }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn protocol(&self) -> ProtocolId {
        self.protocol
    }

    fn outgoing(&self) -> Direction {
        match self.role {
            Role::Alice => Direction::AliceToBob,
            Role::Bob => Direction::BobToAlice,
        }
    }

    fn incoming(&self) -> Direction {
        match self.role {
            Role::Alice => Direction::BobToAlice,
            Role::Bob => Direction::AliceToBob,
        }
    }

    fn micros(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }

    pub fn send(&mut self, round: u8, ty: MsgType, payload: Vec<u8>) -> Result<()> {
        if payload.len() > MAX_PAYLOAD {
            return Err(FramingError::Oversized(payload.len()).into());
        }
        let frame = Frame { protocol: self.protocol as u8, round, msg_type: ty as u8, seq: self.seq, payload };
        self.seq += 1;
        self.link.write_bytes(&frame.encode())?;
        let record = FrameRecord { direction: self.outgoing(), micros: self.micros(), frame };
        self.log.records.push(record);
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Frame> {
        loop {
            if let Some(frame) = self.reader.next_frame()? {
                if frame.protocol != self.protocol as u8 {
                    return Err(Error::ProtocolViolation(format!("frame for protocol {} in a {} session", frame.protocol, self.protocol.name())));
                }
                let record = FrameRecord { direction: self.incoming(), micros: self.micros(), frame: frame.clone() };
                self.log.records.push(record);
                return Ok(frame);
            }
            let bytes = self.link.read_bytes()?;
            self.reader.push(&bytes);
        }
    }

    /// Receives a frame and checks its type.
    pub fn expect(&mut self, ty: MsgType) -> Result<Frame> {
        let frame = self.recv()?;
        if frame.msg_type != ty as u8 {
            return Err(Error::ProtocolViolation(format!("expected {}, got {}", ty.name(), type_name(frame.msg_type))));
        }
        Ok(frame)
    }

    /// Frames sent and received so far, in this endpoint's order.
    pub fn transcript(&self) -> &Transcript {
        &self.log
    }

    pub fn into_transcript(self) -> Transcript {
        self.log
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Backend {
    InProc,
    Socket,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Backend, String> {
        match s {
            "inproc" => Ok(Backend::InProc),
            "socket" => Ok(Backend::Socket),
            other => Err(format!("unknown backend {other:?}, expected inproc or socket")),
        }
    }
}

/// Connected link pair for `backend`.
pub fn link_pair(backend: Backend) -> Result<(Box<dyn Link>, Box<dyn Link>)> {
    match backend {
        Backend::InProc => {
            let (a, b) = ChannelLink::pair();
            Ok((Box::new(a), Box::new(b)))
        }
        Backend::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let bob = SocketLink::connect(addr)?;
            let alice = SocketLink::accept(&listener)?;
            Ok((Box::new(alice), Box::new(bob)))
        }
    }
}

/// Runs both parties over `backend` and returns Bob's result with the
/// session transcript as Bob saw it.
pub fn run_session<RA, RB>(
    backend: Backend,
    protocol: ProtocolId,
    alice: impl FnOnce(&mut Endpoint) -> Result<RA> + Send,
    bob: impl FnOnce(&mut Endpoint) -> Result<RB>,
) -> Result<(RB, Transcript)>
where
    RA: Send,
{
    let (la, lb) = link_pair(backend)?;
    run_session_over(la, lb, protocol, alice, bob)
}

/// [`run_session`] over caller-supplied links.
pub fn run_session_over<RA, RB>(
    alice_link: Box<dyn Link>,
    bob_link: Box<dyn Link>,
    protocol: ProtocolId,
    alice: impl FnOnce(&mut Endpoint) -> Result<RA> + Send,
    bob: impl FnOnce(&mut Endpoint) -> Result<RB>,
) -> Result<(RB, Transcript)>
where
    RA: Send,
{
    std::thread::scope(|scope| {
        let handle = scope.spawn(move || {
            let mut ep = Endpoint::new(Role::Alice, protocol, alice_link);
            alice(&mut ep)
        });
        let mut ep = Endpoint::new(Role::Bob, protocol, bob_link);
        let bob_result = bob(&mut ep);
        let transcript = ep.into_transcript();
        let alice_result = handle.join().expect("alice thread panicked");
        match (bob_result, alice_result) {
            (Ok(r), _) => Ok((r, transcript)),
            (Err(Error::PeerDisconnected), Err(e)) if !matches!(e, Error::PeerDisconnected) => Err(e),
            (Err(e), _) => Err(e),
        }
    })
}

/// Treats a disconnect as the normal end of a serve loop.
pub fn until_disconnect(r: Result<()>) -> Result<()> {
    match r {
        Err(Error::PeerDisconnected) => Ok(()),
        other => other,
    }
}

/// Little-endian cursor for payload parsing.
pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Cursor<'a> {
        Cursor { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::MalformedBytes(format!("payload truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A `u32` length prefix followed by that many bytes.
    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::MalformedBytes(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}

/// Appends a `u32` length prefix and `data`.
pub fn put_blob(out: &mut Vec<u8>, data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
}

/// Packs `u64` words little-endian.
pub fn words_to_bytes(words: &[u64]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn bytes_to_words(bytes: &[u8]) -> Result<Vec<u64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::MalformedBytes("word list length not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
}
