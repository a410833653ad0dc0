//! Two-party message channel with length-prefixed framing and exact byte accounting.
//!
//! Every message is framed as `4-byte LE payload length | 1-byte tag length |
//! tag | payload`. The meter counts full frame bytes and, per tag, the payload
//! bytes, so protocol code can assert exact per-element traffic.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

/// Fixed framing overhead before the tag: payload length + tag length.
pub const FRAME_HEADER_BYTES: usize = 5;

pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(60);

fn encode_frame(tag: &str, payload: &[u8]) -> Vec<u8> {
    assert!(tag.len() <= u8::MAX as usize, "tag too long");
    let mut frame = Vec::with_capacity(FRAME_HEADER_BYTES + tag.len() + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.push(tag.len() as u8);
    frame.extend_from_slice(tag.as_bytes());
    frame.extend_from_slice(payload);
    frame
}

/// Per-tag traffic counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStats {
    pub messages: u64,
    pub payload_bytes: u64,
    pub frame_bytes: u64,
}

/// Monotone counters for one channel endpoint.
#[derive(Clone, Debug, Default)]
pub struct ByteMeter {
    pub sent_bytes: u64,
    pub received_bytes: u64,
    pub round_trips: u64,
    sent_since_recv: bool,
    sent_by_tag: BTreeMap<String, TagStats>,
    received_by_tag: BTreeMap<String, TagStats>,
}

impl ByteMeter {
    fn on_send(&mut self, tag: &str, payload_len: usize) {
        let frame_len = (FRAME_HEADER_BYTES + tag.len() + payload_len) as u64;
        self.sent_bytes += frame_len;
        self.sent_since_recv = true;
        let stats = self.sent_by_tag.entry(tag.to_string()).or_default();
        stats.messages += 1;
        stats.payload_bytes += payload_len as u64;
        stats.frame_bytes += frame_len;
    }

    fn on_recv(&mut self, tag: &str, payload_len: usize) {
        let frame_len = (FRAME_HEADER_BYTES + tag.len() + payload_len) as u64;
        self.received_bytes += frame_len;
        if self.sent_since_recv {
            self.round_trips += 1;
            self.sent_since_recv = false;
        }
        let stats = self.received_by_tag.entry(tag.to_string()).or_default();
        stats.messages += 1;
        stats.payload_bytes += payload_len as u64;
        stats.frame_bytes += frame_len;
    }

    pub fn snapshot(&self) -> MeterReport {
        MeterReport {
            sent_bytes: self.sent_bytes,
            received_bytes: self.received_bytes,
            round_trips: self.round_trips,
            sent_by_tag: self.sent_by_tag.clone(),
            received_by_tag: self.received_by_tag.clone(),
        }
    }
}

/// Serializable meter snapshot; also usable as a delta between two points in time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterReport {
    pub sent_bytes: u64,
    pub received_bytes: u64,
    pub round_trips: u64,
    pub sent_by_tag: BTreeMap<String, TagStats>,
    pub received_by_tag: BTreeMap<String, TagStats>,
}

impl MeterReport {
    /// Traffic accumulated since an earlier snapshot of the same meter.
    pub fn delta_since(&self, earlier: &MeterReport) -> MeterReport {
        fn diff_tags(
            now: &BTreeMap<String, TagStats>,
            then: &BTreeMap<String, TagStats>,
        ) -> BTreeMap<String, TagStats> {
            let mut out = BTreeMap::new();
            for (tag, stats) in now {
                let base = then.get(tag).cloned().unwrap_or_default();
                let d = TagStats {
                    messages: stats.messages - base.messages,
                    payload_bytes: stats.payload_bytes - base.payload_bytes,
                    frame_bytes: stats.frame_bytes - base.frame_bytes,
                };
                if d.messages > 0 {
                    out.insert(tag.clone(), d);
                }
            }
            out
        }
        MeterReport {
            sent_bytes: self.sent_bytes - earlier.sent_bytes,
            received_bytes: self.received_bytes - earlier.received_bytes,
            round_trips: self.round_trips - earlier.round_trips,
            sent_by_tag: diff_tags(&self.sent_by_tag, &earlier.sent_by_tag),
            received_by_tag: diff_tags(&self.received_by_tag, &earlier.received_by_tag),
        }
    }

    pub fn sent_payload_for(&self, tag: &str) -> u64 {
        self.sent_by_tag.get(tag).map_or(0, |s| s.payload_bytes)
    }

    pub fn received_payload_for(&self, tag: &str) -> u64 {
        self.received_by_tag.get(tag).map_or(0, |s| s.payload_bytes)
    }

    /// Payload bytes summed over every tag sharing a prefix (protocols tag
    /// sub-steps as `<op>.<step>`).
    pub fn sent_payload_for_prefix(&self, prefix: &str) -> u64 {
        self.sent_by_tag
            .iter()
            .filter(|(t, _)| t.starts_with(prefix))
            .map(|(_, s)| s.payload_bytes)
            .sum()
    }

    pub fn received_payload_for_prefix(&self, prefix: &str) -> u64 {
        self.received_by_tag
            .iter()
            .filter(|(t, _)| t.starts_with(prefix))
            .map(|(_, s)| s.payload_bytes)
            .sum()
    }
}

/// Ordered, exactly-once, metered two-party message channel.
pub trait Channel {
    fn party_id(&self) -> usize;
    fn send(&mut self, tag: &str, payload: &[u8]) -> Result<()>;
    fn recv(&mut self, expected_tag: &str) -> Result<Vec<u8>>;
    fn meter(&self) -> &ByteMeter;
}

/// Send our payload and receive the peer's, in a fixed party order so the
/// exchange cannot deadlock regardless of payload size or backend buffering.
pub fn exchange<C: Channel>(ch: &mut C, tag: &str, payload: &[u8]) -> Result<Vec<u8>> {
    if ch.party_id() == 0 {
        ch.send(tag, payload)?;
        ch.recv(tag)
    } else {
        let theirs = ch.recv(tag)?;
        ch.send(tag, payload)?;
        Ok(theirs)
    }
}

fn split_frame(frame: Vec<u8>) -> Result<(String, Vec<u8>)> {
    if frame.len() < FRAME_HEADER_BYTES {
        return Err(Error::Transport("truncated frame header".into()));
    }
    let payload_len = u32::from_le_bytes(frame[0..4].try_into().unwrap()) as usize;
    let tag_len = frame[4] as usize;
    if frame.len() != FRAME_HEADER_BYTES + tag_len + payload_len {
        return Err(Error::Transport("truncated frame body".into()));
    }
    let tag = String::from_utf8(frame[5..5 + tag_len].to_vec())
        .map_err(|_| Error::Transport("non-utf8 tag".into()))?;
    Ok((tag, frame[5 + tag_len..].to_vec()))
}

/// In-process channel endpoint backed by buffered queues of encoded frames.
pub struct InProcessChannel {
    party_id: usize,
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    meter: ByteMeter,
    timeout: Duration,
}

/// Create a connected endpoint pair; index 0 is party 0.
pub fn in_process_pair() -> (InProcessChannel, InProcessChannel) {
    let (tx0, rx1) = mpsc::channel();
    let (tx1, rx0) = mpsc::channel();
    (
        InProcessChannel {
            party_id: 0,
            tx: tx0,
            rx: rx0,
            meter: ByteMeter::default(),
            timeout: DEFAULT_RECV_TIMEOUT,
        },
        InProcessChannel {
            party_id: 1,
            tx: tx1,
            rx: rx1,
            meter: ByteMeter::default(),
            timeout: DEFAULT_RECV_TIMEOUT,
        },
    )
}

impl InProcessChannel {
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }
}

impl Channel for InProcessChannel {
    fn party_id(&self) -> usize {
        self.party_id
    }

    fn send(&mut self, tag: &str, payload: &[u8]) -> Result<()> {
        let frame = encode_frame(tag, payload);
        self.tx
            .send(frame)
            .map_err(|_| Error::Transport("peer closed".into()))?;
        self.meter.on_send(tag, payload.len());
        Ok(())
    }

    fn recv(&mut self, expected_tag: &str) -> Result<Vec<u8>> {
        let frame = self.rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => Error::Transport("receive timeout".into()),
            RecvTimeoutError::Disconnected => Error::Transport("peer closed".into()),
        })?;
        let (tag, payload) = split_frame(frame)?;
        self.meter.on_recv(&tag, payload.len());
        if tag != expected_tag {
            return Err(Error::TagMismatch {
                expected: expected_tag.to_string(),
                got: tag,
            });
        }
        Ok(payload)
    }

    fn meter(&self) -> &ByteMeter {
        &self.meter
    }
}

/// TCP-backed channel endpoint; frame format identical to the in-process backend.
pub struct TcpChannel {
    party_id: usize,
    stream: TcpStream,
    meter: ByteMeter,
}

impl TcpChannel {
    /// Bind, accept a single peer, and assume the given party id.
    pub fn listen<A: ToSocketAddrs>(addr: A, party_id: usize) -> Result<TcpChannel> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Transport(e.to_string()))?;
        let (stream, _) = listener
            .accept()
            .map_err(|e| Error::Transport(e.to_string()))?;
        stream.set_nodelay(true).ok();
        Ok(TcpChannel {
            party_id,
            stream,
            meter: ByteMeter::default(),
        })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A, party_id: usize) -> Result<TcpChannel> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(e.to_string()))?;
        stream.set_nodelay(true).ok();
        Ok(TcpChannel {
            party_id,
            stream,
            meter: ByteMeter::default(),
        })
    }

    pub fn set_timeout(&mut self, timeout: Duration) -> Result<()> {
        self.stream
            .set_read_timeout(Some(timeout))
            .map_err(|e| Error::Transport(e.to_string()))
    }
}

impl Channel for TcpChannel {
    fn party_id(&self) -> usize {
        self.party_id
    }

    fn send(&mut self, tag: &str, payload: &[u8]) -> Result<()> {
        let frame = encode_frame(tag, payload);
        self.stream
            .write_all(&frame)
            .map_err(|e| Error::Transport(e.to_string()))?;
        self.meter.on_send(tag, payload.len());
        Ok(())
    }

    fn recv(&mut self, expected_tag: &str) -> Result<Vec<u8>> {
        let mut header = [0u8; FRAME_HEADER_BYTES];
        self.stream
            .read_exact(&mut header)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let payload_len = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let tag_len = header[4] as usize;
        let mut rest = vec![0u8; tag_len + payload_len];
        self.stream
            .read_exact(&mut rest)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let tag = String::from_utf8(rest[..tag_len].to_vec())
            .map_err(|_| Error::Transport("non-utf8 tag".into()))?;
        let payload = rest[tag_len..].to_vec();
        self.meter.on_recv(&tag, payload.len());
        if tag != expected_tag {
            return Err(Error::TagMismatch {
                expected: expected_tag.to_string(),
                got: tag,
            });
        }
        Ok(payload)
    }

    fn meter(&self) -> &ByteMeter {
        &self.meter
    }
}

/// Snapshot of a channel's meter, ready for serialization.
pub fn meter_report<C: Channel>(ch: &C) -> MeterReport {
    ch.meter().snapshot()
}
