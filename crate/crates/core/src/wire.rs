//! Length-prefixed framing and the byte channels the parties and clients talk over.
//!
//! A frame is `u32 length (big-endian) ‖ u8 type ‖ payload`, where `length`
//! counts the type byte plus the payload and never exceeds 64 MiB.

use std::io::{BufReader, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::sharing::Mode;

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on the length field (type byte + payload).
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;
pub const MAX_PAYLOAD: usize = MAX_FRAME_LEN - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    IngestBatch = 2,
    IngestAck = 3,
    QuerySubmit = 4,
    ResultShare = 5,
    OpenBatch = 6,
    Sync = 7,
    Commit = 8,
    Reveal = 9,
    Abort = 10,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<MessageType> {
        use MessageType::*;
        Some(match b {
            1 => Hello,
            2 => IngestBatch,
            3 => IngestAck,
            4 => QuerySubmit,
            5 => ResultShare,
            6 => OpenBatch,
            7 => Sync,
            8 => Commit,
            9 => Reveal,
            10 => Abort,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame length {0} exceeds the 64 MiB cap")]
    Oversize(usize),
    #[error("need {0} more bytes")]
    NeedMoreBytes(usize),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("zero-length frame")]
    Empty,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("channel closed by peer")]
    Closed,
    #[error("handshake failed: {field} mismatch")]
    Handshake { field: &'static str },
    #[error("cannot connect to {addr}: {reason}")]
    Connect { addr: String, reason: String },
    #[error("peer aborted: {0}")]
    Aborted(Abort),
    #[error("unexpected {got:?}, expected {expected:?}")]
    Unexpected {
        got: MessageType,
        expected: MessageType,
    },
    #[error("malformed {0:?} payload")]
    Malformed(MessageType),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_frame(msg_type: MessageType, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(payload.len() + 1));
    }
    let mut out = Vec::with_capacity(5 + payload.len());
    out.extend_from_slice(&((payload.len() + 1) as u32).to_be_bytes());
    out.push(msg_type as u8);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(MessageType, Vec<u8>, usize), FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::NeedMoreBytes(4 - bytes.len()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(len));
    }
    if len == 0 {
        return Err(FrameError::Empty);
    }
    if bytes.len() < 4 + len {
        return Err(FrameError::NeedMoreBytes(4 + len - bytes.len()));
    }
    let t = MessageType::from_byte(bytes[4]).ok_or(FrameError::UnknownType(bytes[4]))?;
    Ok((t, bytes[5..4 + len].to_vec(), 4 + len))
}

/// An ordered, reliable, framed channel.
pub trait Transport: Send {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), NetError>;
    fn recv(&mut self) -> Result<(MessageType, Vec<u8>), NetError>;
    /// Limit on how long `recv` waits for the start of a frame; `None` blocks forever.
    fn set_timeout(&mut self, timeout: Option<Duration>);

    /// Receives a frame and insists on its type; an ABORT surfaces as [`NetError::Aborted`].
    fn expect(&mut self, expected: MessageType) -> Result<Vec<u8>, NetError> {
        let (got, payload) = self.recv()?;
        if got == expected {
            return Ok(payload);
        }
        if got == MessageType::Abort {
            return Err(NetError::Aborted(Abort::decode(&payload)?));
        }
        Err(NetError::Unexpected { got, expected })
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), NetError> {
        (**self).send(msg_type, payload)
    }

    fn recv(&mut self) -> Result<(MessageType, Vec<u8>), NetError> {
        (**self).recv()
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        (**self).set_timeout(timeout)
    }
}

/// In-process transport: each end owns a queue; payloads move without copying.
pub struct Loopback {
    tx: Sender<(MessageType, Vec<u8>)>,
    rx: Receiver<(MessageType, Vec<u8>)>,
    timeout: Option<Duration>,
}

impl Loopback {
    pub fn pair() -> (Loopback, Loopback) {
        let (tx_a, rx_a) = unbounded();
        let (tx_b, rx_b) = unbounded();
        (
            Loopback {
                tx: tx_a,
                rx: rx_b,
                timeout: None,
            },
            Loopback {
                tx: tx_b,
                rx: rx_a,
                timeout: None,
            },
        )
    }

    /// Sends an owned payload without copying it.
    pub fn send_owned(&mut self, msg_type: MessageType, payload: Vec<u8>) -> Result<(), NetError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::Oversize(payload.len() + 1).into());
        }
        self.tx.send((msg_type, payload)).map_err(|_| NetError::Closed)
    }
}

impl Transport for Loopback {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), NetError> {
        self.send_owned(msg_type, payload.to_vec())
    }

    fn recv(&mut self) -> Result<(MessageType, Vec<u8>), NetError> {
        match self.timeout {
            None => self.rx.recv().map_err(|_| NetError::Closed),
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => NetError::Timeout,
                RecvTimeoutError::Disconnected => NetError::Closed,
            }),
        }
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }
}

/// Framed TCP channel. Writes go through a dedicated thread so two peers that
/// send large frames to each other at the same time cannot deadlock.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: Option<Sender<Vec<u8>>>,
    write_error: Arc<Mutex<Option<String>>>,
    writer_thread: Option<std::thread::JoinHandle<()>>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> std::io::Result<TcpTransport> {
        stream.set_nodelay(true)?;
        let mut wstream = stream.try_clone()?;
        let (tx, rx) = unbounded::<Vec<u8>>();
        let write_error = Arc::new(Mutex::new(None));
        let err = write_error.clone();
        let handle = std::thread::spawn(move || {
            for frame in rx {
                if let Err(e) = wstream.write_all(&frame) {
                    *err.lock().unwrap() = Some(e.to_string());
                    return;
                }
            }
            let _ = wstream.flush();
        });
        Ok(TcpTransport {
            reader: BufReader::with_capacity(1 << 16, stream),
            writer: Some(tx),
            write_error,
            writer_thread: Some(handle),
        })
    }

    /// Connects, retrying refused connections until `patience` elapses.
    pub fn connect(addr: &str, patience: Duration) -> Result<TcpTransport, NetError> {
        let deadline = Instant::now() + patience;
        let conn_err = |reason: String| NetError::Connect {
            addr: addr.to_string(),
            reason,
        };
        loop {
            let addrs: Vec<_> = addr
                .to_socket_addrs()
                .map_err(|e| conn_err(e.to_string()))?
                .collect();
            let mut last = String::from("no addresses");
            for a in &addrs {
                match TcpStream::connect_timeout(a, Duration::from_secs(5)) {
                    Ok(s) => return TcpTransport::new(s).map_err(NetError::Io),
                    Err(e) => last = e.to_string(),
                }
            }
            if Instant::now() >= deadline {
                return Err(conn_err(last));
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    pub fn accept(listener: &TcpListener) -> Result<TcpTransport, NetError> {
        let (s, _) = listener.accept()?;
        Ok(TcpTransport::new(s)?)
    }

    pub fn peer_addr(&self) -> Option<std::net::SocketAddr> {
        self.reader.get_ref().peer_addr().ok()
    }

    fn read_full(&mut self, buf: &mut [u8]) -> Result<(), NetError> {
        self.reader.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset => NetError::Closed,
            // mid-frame stall: the stream can no longer be resynchronized
            ErrorKind::WouldBlock | ErrorKind::TimedOut => NetError::Closed,
            _ => NetError::Io(e),
        })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), NetError> {
        if let Some(e) = self.write_error.lock().unwrap().clone() {
            return Err(NetError::Io(std::io::Error::new(ErrorKind::BrokenPipe, e)));
        }
        let frame = encode_frame(msg_type, payload)?;
        self.writer
            .as_ref()
            .ok_or(NetError::Closed)?
            .send(frame)
            .map_err(|_| NetError::Closed)
    }

    fn recv(&mut self) -> Result<(MessageType, Vec<u8>), NetError> {
        let mut first = [0u8; 1];
        loop {
            match self.reader.read(&mut first) {
                Ok(0) => return Err(NetError::Closed),
                Ok(_) => break,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(NetError::Timeout)
                }
                Err(e) if e.kind() == ErrorKind::ConnectionReset => return Err(NetError::Closed),
                Err(e) => return Err(NetError::Io(e)),
            }
        }
        let mut rest = [0u8; 4];
        rest[0] = first[0];
        self.read_full(&mut rest[1..])?;
        let len = u32::from_be_bytes(rest) as usize;
        if len > MAX_FRAME_LEN {
            return Err(FrameError::Oversize(len).into());
        }
        if len == 0 {
            return Err(FrameError::Empty.into());
        }
        let mut body = vec![0u8; len];
        self.read_full(&mut body)?;
        let t = MessageType::from_byte(body[0]).ok_or(FrameError::UnknownType(body[0]))?;
        body.remove(0);
        Ok((t, body))
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        let _ = self.reader.get_ref().set_read_timeout(timeout);
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        // let queued frames drain before the socket closes
        self.writer.take();
        if let Some(h) = self.writer_thread.take() {
            let _ = h.join();
        }
    }
}

/// Direction of a recorded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Sent,
    Received,
}

/// Shape of one frame: what an observer of message sizes can see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub msg_type: MessageType,
    pub payload_len: usize,
}

#[derive(Debug, Default, Clone)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    /// Raw payloads, kept only when capture is enabled.
    pub payloads: Vec<Vec<u8>>,
    /// Total bytes in both directions including the 5-byte frame headers.
    pub wire_bytes: u64,
}

impl Transcript {
    pub fn count(&self, direction: Direction, msg_type: MessageType) -> usize {
        self.entries
            .iter()
            .filter(|e| e.direction == direction && e.msg_type == msg_type)
            .count()
    }
}

/// Wraps a transport and records the shape (and optionally contents) of every frame.
pub struct Recorded<T> {
    inner: T,
    log: Arc<Mutex<Transcript>>,
    capture: bool,
}

impl<T: Transport> Recorded<T> {
    pub fn new(inner: T, capture: bool) -> (Recorded<T>, Arc<Mutex<Transcript>>) {
        let log = Arc::new(Mutex::new(Transcript::default()));
        (
            Recorded {
                inner,
                log: log.clone(),
                capture,
            },
            log,
        )
    }

    fn note(&self, direction: Direction, msg_type: MessageType, payload: &[u8]) {
        let mut log = self.log.lock().unwrap();
        log.entries.push(TranscriptEntry {
            direction,
            msg_type,
            payload_len: payload.len(),
        });
        log.wire_bytes += 5 + payload.len() as u64;
        if self.capture {
            log.payloads.push(payload.to_vec());
        }
    }
}

impl<T: Transport> Transport for Recorded<T> {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), NetError> {
        self.note(Direction::Sent, msg_type, payload);
        self.inner.send(msg_type, payload)
    }

    fn recv(&mut self) -> Result<(MessageType, Vec<u8>), NetError> {
        let (t, p) = self.inner.recv()?;
        self.note(Direction::Received, t, &p);
        Ok((t, p))
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.inner.set_timeout(timeout)
    }
}

/// Why a session or request was aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortReason {
    Quota = 1,
    Preproc = 2,
    Desync = 3,
    Mac = 4,
    Network = 5,
    Validation = 6,
    Handshake = 7,
    Protocol = 8,
}

impl AbortReason {
    pub fn from_byte(b: u8) -> Option<AbortReason> {
        use AbortReason::*;
        Some(match b {
            1 => Quota,
            2 => Preproc,
            3 => Desync,
            4 => Mac,
            5 => Network,
            6 => Validation,
            7 => Handshake,
            8 => Protocol,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::Quota => "quota",
            AbortReason::Preproc => "preproc",
            AbortReason::Desync => "desync",
            AbortReason::Mac => "mac",
            AbortReason::Network => "network",
            AbortReason::Validation => "validation",
            AbortReason::Handshake => "handshake",
            AbortReason::Protocol => "protocol",
        }
    }
}

/// ABORT payload: `u8 reason ‖ 16-byte request id ‖ utf-8 detail`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abort {
    pub reason: AbortReason,
    pub request_id: [u8; 16],
    pub detail: String,
}

impl Abort {
    pub fn new(reason: AbortReason, request_id: [u8; 16], detail: impl Into<String>) -> Abort {
        Abort {
            reason,
            request_id,
            detail: detail.into(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.detail.len());
        out.push(self.reason as u8);
        out.extend_from_slice(&self.request_id);
        out.extend_from_slice(self.detail.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Abort, NetError> {
        if bytes.len() < 17 {
            return Err(NetError::Malformed(MessageType::Abort));
        }
        let reason = AbortReason::from_byte(bytes[0]).ok_or(NetError::Malformed(MessageType::Abort))?;
        Ok(Abort {
            reason,
            request_id: bytes[1..17].try_into().unwrap(),
            detail: String::from_utf8_lossy(&bytes[17..]).into_owned(),
        })
    }
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ABORT(reason={})", self.reason.as_str())?;
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Party = 0,
    Client = 1,
}

/// HELLO payload: `u16 version ‖ 16-byte session ‖ u8 role ‖ u8 id ‖ 16-byte modulus ‖ u16 N ‖ u16 T ‖ u8 mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub version: u16,
    pub session_id: [u8; 16],
    pub role: Role,
    pub id: u8,
    pub modulus: u128,
    pub n_bits: u16,
    pub n_treatments: u16,
    pub mode: Mode,
}

pub const HELLO_LEN: usize = 2 + 16 + 1 + 1 + 16 + 2 + 2 + 1;

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HELLO_LEN);
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&self.session_id);
        out.push(self.role as u8);
        out.push(self.id);
        out.extend_from_slice(&self.modulus.to_le_bytes());
        out.extend_from_slice(&self.n_bits.to_be_bytes());
        out.extend_from_slice(&self.n_treatments.to_be_bytes());
        out.push(self.mode.to_byte());
        out
    }

    pub fn decode(b: &[u8]) -> Result<Hello, NetError> {
        let bad = || NetError::Malformed(MessageType::Hello);
        if b.len() != HELLO_LEN {
            return Err(bad());
        }
        let role = match b[18] {
            0 => Role::Party,
            1 => Role::Client,
            _ => return Err(bad()),
        };
        Ok(Hello {
            version: u16::from_be_bytes([b[0], b[1]]),
            session_id: b[2..18].try_into().unwrap(),
            role,
            id: b[19],
            modulus: u128::from_le_bytes(b[20..36].try_into().unwrap()),
            n_bits: u16::from_be_bytes([b[36], b[37]]),
            n_treatments: u16::from_be_bytes([b[38], b[39]]),
            mode: Mode::from_byte(b[40]).ok_or_else(bad)?,
        })
    }

    /// Names the first field on which two endpoints disagree.
    pub fn mismatch(&self, other: &Hello) -> Option<&'static str> {
        if self.version != other.version {
            return Some("version");
        }
        if self.role == Role::Party && other.role == Role::Party && self.session_id != other.session_id {
            return Some("session");
        }
        if self.modulus != other.modulus {
            return Some("modulus");
        }
        if self.n_bits != other.n_bits {
            return Some("N");
        }
        if self.n_treatments != other.n_treatments {
            return Some("T");
        }
        if self.mode != other.mode {
            return Some("mode");
        }
        None
    }
}

/// Sends our HELLO, reads the peer's and checks compatibility; on mismatch the
/// peer is told via ABORT before the error is returned.
pub fn handshake<T: Transport + ?Sized>(t: &mut T, mine: &Hello) -> Result<Hello, NetError> {
    t.send(MessageType::Hello, &mine.encode())?;
    let theirs = Hello::decode(&t.expect(MessageType::Hello)?)?;
    if let Some(field) = mine.mismatch(&theirs) {
        let abort = Abort::new(AbortReason::Handshake, [0; 16], format!("{field} mismatch"));
        let _ = t.send(MessageType::Abort, &abort.encode());
        return Err(NetError::Handshake { field });
    }
    Ok(theirs)
}

/// Server side of the handshake: reads the HELLO first, then answers.
pub fn accept_handshake<T: Transport + ?Sized>(t: &mut T, mine: &Hello) -> Result<Hello, NetError> {
    let theirs = Hello::decode(&t.expect(MessageType::Hello)?)?;
    if let Some(field) = mine.mismatch(&theirs) {
        let abort = Abort::new(AbortReason::Handshake, [0; 16], format!("{field} mismatch"));
        let _ = t.send(MessageType::Abort, &abort.encode());
        return Err(NetError::Handshake { field });
    }
    t.send(MessageType::Hello, &mine.encode())?;
    Ok(theirs)
}

/// Big-endian cursor over a payload.
pub struct PayloadReader<'a> {
    buf: &'a [u8],
    msg_type: MessageType,
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8], msg_type: MessageType) -> Self {
        PayloadReader { buf, msg_type }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.buf.len() < n {
            return Err(NetError::Malformed(self.msg_type));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn id16(&mut self) -> Result<[u8; 16], NetError> {
        Ok(self.take(16)?.try_into().unwrap())
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub fn finish(&self) -> Result<(), NetError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(NetError::Malformed(self.msg_type))
        }
    }
}
