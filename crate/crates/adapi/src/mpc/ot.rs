//! 1-of-4 oblivious transfer over a shared prime-order group, the chunked
//! batch flow for 32-bit values, and the flow's exact per-step byte pricing.
//!
//! The sender publishes a session mask `S = g^rd`. For each transfer the
//! receiver sends one blinded point `B = g^k * S^choice`; the sender derives
//! the four candidate keys `K_j = (B * S^-j)^rd` and the receiver can compute
//! only `K_choice = S^k`. This is laboratory-grade discrete-log OT: group
//! parameters are chosen for wire-width fidelity, not hardened security.

use crate::error::{Error, Result};
use crate::group::{GroupElement, GroupParams};
use crate::mpc::{BeaverTriple, TripleKind};
use crate::prg::{fnv1a64, keystream};
use crate::ring::{Ring64, RingTensor};
use crate::sharing::ArithmeticShare;
use crate::transport::Channel;
use num_bigint::BigUint;
use num_traits::One;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Chunks per 32-bit element in the batch flow.
pub const CHUNKS_PER_ELEMENT: usize = 16;
/// Bits per chunk (so the choice index list has length 4).
pub const CHUNK_BITS: usize = 2;
/// Candidate messages per transfer.
pub const INDEX_LENGTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OtRole {
    Sender,
    Receiver,
}

/// Established transfer session: shared group, sender mask, chunking layout.
pub struct OtSession {
    pub role: OtRole,
    pub params: Arc<GroupParams>,
    pub mask: GroupElement,
    server_secret: Option<BigUint>,
    /// `[S^0, S^-1, S^-2, S^-3]`, sender side only.
    mask_inverse_powers: Option<Vec<GroupElement>>,
    pub chunk_count: usize,
    pub chunk_bits: usize,
    pub index_length: usize,
}

fn random_exponent<R: Rng>(params: &GroupParams, rng: &mut R) -> BigUint {
    let bytes = params.modulus.bits().div_ceil(8) as usize + 8;
    let raw: Vec<u8> = (0..bytes).map(|_| rng.gen()).collect();
    // order of the QR subgroup of a safe prime
    let q = (&params.modulus - 1u32) >> 1;
    BigUint::from_bytes_le(&raw) % q + BigUint::one()
}

impl OtSession {
    /// Sender side of session setup: draw `rd`, publish `S = g^rd`.
    pub fn establish_sender<C: Channel, R: Rng>(
        params: &Arc<GroupParams>,
        ch: &mut C,
        rng: &mut R,
        tag: &str,
    ) -> Result<OtSession> {
        let rd = random_exponent(params, rng);
        let g = params.generator_element();
        let mask = g.pow(&rd);
        ch.send(tag, &mask.to_wire())?;
        let inv = mask.inverse();
        let mut powers = vec![params.element(BigUint::one())];
        for _ in 1..INDEX_LENGTH {
            powers.push(powers.last().unwrap().mul(&inv));
        }
        Ok(OtSession {
            role: OtRole::Sender,
            params: Arc::clone(params),
            mask,
            server_secret: Some(rd),
            mask_inverse_powers: Some(powers),
            chunk_count: CHUNKS_PER_ELEMENT,
            chunk_bits: CHUNK_BITS,
            index_length: INDEX_LENGTH,
        })
    }

    /// Receiver side of session setup: accept the sender mask `S`.
    pub fn establish_receiver<C: Channel>(
        params: &Arc<GroupParams>,
        ch: &mut C,
        tag: &str,
    ) -> Result<OtSession> {
        let raw = ch.recv(tag)?;
        if raw.len() != params.element_bytes {
            return Err(Error::Protocol("session mask has wrong width".into()));
        }
        let mask = GroupElement::from_wire(params, &raw);
        Ok(OtSession {
            role: OtRole::Receiver,
            params: Arc::clone(params),
            mask,
            server_secret: None,
            mask_inverse_powers: None,
            chunk_count: CHUNKS_PER_ELEMENT,
            chunk_bits: CHUNK_BITS,
            index_length: INDEX_LENGTH,
        })
    }

    fn pad_for(&self, key: &GroupElement, nonce: u64, len: usize) -> Vec<u8> {
        keystream(fnv1a64(&key.residue.to_bytes_le()), nonce, len)
    }

    fn sender_keys(&self, blinded: &GroupElement) -> Vec<GroupElement> {
        let rd = self.server_secret.as_ref().expect("sender side");
        let powers = self.mask_inverse_powers.as_ref().expect("sender side");
        (0..self.index_length)
            .map(|j| blinded.mul(&powers[j]).pow(rd))
            .collect()
    }
}

fn xor_into(buf: &mut [u8], pad: &[u8]) {
    for (b, p) in buf.iter_mut().zip(pad) {
        *b ^= p;
    }
}

/// Sender half of a single checked 1-of-4 transfer. All four messages must
/// have equal length; a trailing digest lets the receiver detect a corrupted
/// key as a protocol error.
pub fn ot_1of4_send<C: Channel>(
    session: &OtSession,
    messages: &[Vec<u8>; 4],
    ch: &mut C,
    nonce: u64,
    tag: &str,
) -> Result<()> {
    let len = messages[0].len();
    if messages.iter().any(|m| m.len() != len) {
        return Err(Error::Protocol("transfer messages must be equal-length".into()));
    }
    let raw = ch.recv(tag)?;
    if raw.len() != session.params.element_bytes {
        return Err(Error::Protocol("blinded point has wrong width".into()));
    }
    let blinded = GroupElement::from_wire(&session.params, &raw);
    let keys = session.sender_keys(&blinded);
    let mut payload = Vec::with_capacity(4 * (len + 4));
    for (j, key) in keys.iter().enumerate() {
        let mut body = messages[j].clone();
        let digest = (fnv1a64(&body) as u32).to_le_bytes();
        body.extend_from_slice(&digest);
        let pad = session.pad_for(key, nonce ^ (j as u64) << 56, body.len());
        xor_into(&mut body, &pad);
        payload.extend_from_slice(&body);
    }
    ch.send(tag, &payload)
}

/// Receiver half of a single checked 1-of-4 transfer.
pub fn ot_1of4_receive<C: Channel>(
    session: &OtSession,
    choice: u8,
    message_len: usize,
    ch: &mut C,
    rng: &mut ChaCha20Rng,
    nonce: u64,
    tag: &str,
) -> Result<Vec<u8>> {
    assert!(choice < 4);
    let k = random_exponent(&session.params, rng);
    let g = session.params.generator_element();
    let blinded = g.pow(&k).mul(&session.mask.pow(&BigUint::from(choice)));
    ch.send(tag, &blinded.to_wire())?;

    let payload = ch.recv(tag)?;
    let slot = message_len + 4;
    if payload.len() != 4 * slot {
        return Err(Error::Protocol("transfer payload has wrong width".into()));
    }
    let key = session.mask.pow(&k);
    let mut body = payload[choice as usize * slot..(choice as usize + 1) * slot].to_vec();
    let pad = session.pad_for(&key, nonce ^ (choice as u64) << 56, body.len());
    xor_into(&mut body, &pad);
    let (msg, digest) = body.split_at(message_len);
    if digest != (fnv1a64(msg) as u32).to_le_bytes() {
        return Err(Error::Protocol("transfer decode failed: bad key".into()));
    }
    Ok(msg.to_vec())
}

/// Per-step payload byte counts of the chunked batch flow at 32-bit operand
/// width: the session mask, 16 blinded points per element, 4x16 encrypted
/// table entries per element, and a 4-byte finalize slot per element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtFlowBytes {
    pub setup: u64,
    pub choices: u64,
    pub tables: u64,
    pub finalize: u64,
}

impl OtFlowBytes {
    pub fn per_element_total() -> u64 {
        64 + 256 + 4
    }

    pub fn total(&self) -> u64 {
        self.setup + self.choices + self.tables + self.finalize
    }
}

pub fn ot_transcript_bytes(elements: u64) -> OtFlowBytes {
    OtFlowBytes {
        setup: 4,
        choices: 64 * elements,
        tables: 256 * elements,
        finalize: 4 * elements,
    }
}

/// Sender half of the chunked batch flow over 32-bit values.
///
/// `tables[e][u][j]` is the 4-byte entry handed over when the receiver's
/// chunk `u` of element `e` equals `j`. Wire sizes match
/// [`ot_transcript_bytes`] exactly (tags `<prefix>2`..`<prefix>4`; the session
/// setup `<prefix>1` is priced separately). The returned vector holds the
/// receiver's 4-byte finalize slots.
pub fn ot_batch_send<C: Channel>(
    session: &OtSession,
    tables: &[Vec<[u8; 4]>],
    ch: &mut C,
    tag_prefix: &str,
) -> Result<Vec<[u8; 4]>> {
    let n = tables.len();
    let chunks = session.chunk_count;
    let raw = ch.recv(&format!("{tag_prefix}2"))?;
    if raw.len() != n * chunks * 4 {
        return Err(Error::Protocol("batch choices have wrong width".into()));
    }
    let mut payload = Vec::with_capacity(n * chunks * 16);
    for (e, table) in tables.iter().enumerate() {
        if table.len() != INDEX_LENGTH * chunks {
            return Err(Error::Protocol("table must be 4 x chunk_count".into()));
        }
        for u in 0..chunks {
            let start = (e * chunks + u) * 4;
            let blinded = GroupElement::from_wire(&session.params, &raw[start..start + 4]);
            let keys = session.sender_keys(&blinded);
            for (j, key) in keys.iter().enumerate() {
                let mut body = table[j * chunks + u];
                let nonce = ((e as u64) << 16) | ((u as u64) << 8) | j as u64;
                xor_into(&mut body, &session.pad_for(key, nonce, 4));
                payload.extend_from_slice(&body);
            }
        }
    }
    ch.send(&format!("{tag_prefix}3"), &payload)?;
    let fin = ch.recv(&format!("{tag_prefix}4"))?;
    if fin.len() != n * 4 {
        return Err(Error::Protocol("finalize slots have wrong width".into()));
    }
    Ok(fin
        .chunks_exact(4)
        .map(|c| <[u8; 4]>::try_from(c).unwrap())
        .collect())
}

/// Receiver half of the chunked batch flow: one choice per 2-bit chunk of each
/// 32-bit value. Returns the decoded 4-byte entry per chunk per element, and
/// sends back one masked 4-byte finalize slot per element.
pub fn ot_batch_receive<C: Channel>(
    session: &OtSession,
    values: &[u32],
    ch: &mut C,
    rng: &mut ChaCha20Rng,
    tag_prefix: &str,
) -> Result<Vec<Vec<[u8; 4]>>> {
    let n = values.len();
    let chunks = session.chunk_count;
    let g = session.params.generator_element();
    let mut secrets = Vec::with_capacity(n * chunks);
    let mut payload = Vec::with_capacity(n * chunks * 4);
    for &v in values {
        for u in 0..chunks {
            let choice = ((v >> (u * CHUNK_BITS)) & 0b11) as u64;
            let k = random_exponent(&session.params, rng);
            let blinded = g.pow(&k).mul(&session.mask.pow(&BigUint::from(choice)));
            payload.extend_from_slice(&blinded.to_wire());
            secrets.push((k, choice));
        }
    }
    ch.send(&format!("{tag_prefix}2"), &payload)?;

    let tables = ch.recv(&format!("{tag_prefix}3"))?;
    if tables.len() != n * chunks * 16 {
        return Err(Error::Protocol("batch tables have wrong width".into()));
    }
    let mut decoded = Vec::with_capacity(n);
    let mut finalize = Vec::with_capacity(n * 4);
    for e in 0..n {
        let mut per_chunk = Vec::with_capacity(chunks);
        let mut fold = [0u8; 4];
        for u in 0..chunks {
            let (k, choice) = &secrets[e * chunks + u];
            let key = session.mask.pow(k);
            let slot = ((e * chunks + u) * 4 + *choice as usize) * 4;
            let mut body: [u8; 4] = tables[slot..slot + 4].try_into().unwrap();
            let nonce = ((e as u64) << 16) | ((u as u64) << 8) | choice;
            xor_into(&mut body, &session.pad_for(&key, nonce, 4));
            for i in 0..4 {
                fold[i] ^= body[i];
            }
            per_chunk.push(body);
        }
        // finalize slot: the chunk fold under a fresh receiver mask
        let mask: u32 = rng.gen();
        for (i, m) in mask.to_le_bytes().iter().enumerate() {
            fold[i] ^= m;
        }
        finalize.extend_from_slice(&fold);
        decoded.push(per_chunk);
    }
    ch.send(&format!("{tag_prefix}4"), &finalize)?;
    Ok(decoded)
}

/// Chunk width used by the transfer-based product protocol below.
const MUL_CHUNKS: usize = 32;

/// Sender half of a transfer-based product of additive inputs: for each 2-bit
/// chunk of the receiver's factor the sender offers `s + c * a * 4^chunk`.
/// Returns the sender's additive share of `a * b`.
fn ot_mul_send<C: Channel>(
    session: &OtSession,
    factors: &[Ring64],
    ch: &mut C,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<Vec<Ring64>> {
    let mut shares = Vec::with_capacity(factors.len());
    for (e, &a) in factors.iter().enumerate() {
        let mut acc = Ring64::ZERO;
        for chunk in 0..MUL_CHUNKS {
            let s = Ring64(rng.gen());
            let step = a * Ring64(1u64 << (2 * chunk));
            let mut messages: [Vec<u8>; 4] = Default::default();
            for (c, slot) in messages.iter_mut().enumerate() {
                let m = s + step * Ring64(c as u64);
                *slot = m.0.to_le_bytes().to_vec();
            }
            ot_1of4_send(session, &messages, ch, ((e * MUL_CHUNKS) + chunk) as u64, tag)?;
            acc = acc - s;
        }
        shares.push(acc);
    }
    Ok(shares)
}

/// Receiver half of the transfer-based product; returns the receiver's
/// additive share of `a * b` for each element of `factors`.
fn ot_mul_receive<C: Channel>(
    session: &OtSession,
    factors: &[Ring64],
    ch: &mut C,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<Vec<Ring64>> {
    let mut shares = Vec::with_capacity(factors.len());
    for (e, &b) in factors.iter().enumerate() {
        let mut acc = Ring64::ZERO;
        for chunk in 0..MUL_CHUNKS {
            let choice = ((b.0 >> (2 * chunk)) & 0b11) as u8;
            let msg = ot_1of4_receive(
                session,
                choice,
                8,
                ch,
                rng,
                ((e * MUL_CHUNKS) + chunk) as u64,
                tag,
            )?;
            acc += Ring64(u64::from_le_bytes(msg.try_into().unwrap()));
        }
        shares.push(acc);
    }
    Ok(shares)
}

/// Transfer-based generation of elementwise Beaver triples (no dealer).
///
/// Each party samples its own `a_p`, `b_p`; the cross terms `a_0*b_1` and
/// `a_1*b_0` are produced by two transfer-based products, one in each
/// direction. Only the elementwise kind is supported.
pub fn ot_elementwise_triples<C: Channel>(
    shape: &[usize],
    params: &Arc<GroupParams>,
    ch: &mut C,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<BeaverTriple> {
    let party = ch.party_id();
    let n: usize = shape.iter().product();
    let a: Vec<Ring64> = (0..n).map(|_| Ring64(rng.gen())).collect();
    let b: Vec<Ring64> = (0..n).map(|_| Ring64(rng.gen())).collect();

    // party 0 sends a0 against b1, then receives with b0 against a1
    let (cross1, cross2) = if party == 0 {
        let s = OtSession::establish_sender(params, ch, rng, &format!("{tag}1"))?;
        let c1 = ot_mul_send(&s, &a, ch, rng, tag)?;
        let r = OtSession::establish_receiver(params, ch, &format!("{tag}1r"))?;
        let c2 = ot_mul_receive(&r, &b, ch, rng, tag)?;
        (c1, c2)
    } else {
        let r = OtSession::establish_receiver(params, ch, &format!("{tag}1"))?;
        let c1 = ot_mul_receive(&r, &b, ch, rng, tag)?;
        let s = OtSession::establish_sender(params, ch, rng, &format!("{tag}1r"))?;
        let c2 = ot_mul_send(&s, &a, ch, rng, tag)?;
        (c1, c2)
    };

    let z: Vec<Ring64> = (0..n)
        .map(|i| a[i] * b[i] + cross1[i] + cross2[i])
        .collect();
    Ok(BeaverTriple::new(
        TripleKind::elementwise(shape),
        RingTensor::new(shape.to_vec(), a),
        RingTensor::new(shape.to_vec(), b),
        RingTensor::new(shape.to_vec(), z),
    ))
}

/// Reconstruction helper for triples produced by [`ot_elementwise_triples`].
pub fn triple_share(party_id: usize, triple: &BeaverTriple) -> (ArithmeticShare, ArithmeticShare, ArithmeticShare) {
    (
        ArithmeticShare {
            party_id,
            data: triple.a.clone(),
        },
        ArithmeticShare {
            party_id,
            data: triple.b.clone(),
        },
        ArithmeticShare {
            party_id,
            data: triple.z.clone(),
        },
    )
}
