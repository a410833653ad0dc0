//! Additive arithmetic sharing over Z_{2^64}, XOR binary sharing, and the
//! interactive conversions between them.

use crate::error::{Error, Result};
use crate::mpc::boolean::{self, BitWire};
use crate::mpc::{secure_mul, TripleKind, TripleSource};
use crate::ring::{Ring64, RingTensor};
use crate::transport::{exchange, Channel};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// One party's additive half of a ring tensor: reconstruction is ring addition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArithmeticShare {
    pub party_id: usize,
    pub data: RingTensor,
}

/// One party's XOR half of a bit-pattern tensor (64-bit words per element).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryShare {
    pub party_id: usize,
    pub words: Vec<u64>,
    pub shape: Vec<usize>,
}

/// Split a plaintext tensor into two additive halves: `(r, x - r)` with `r` fresh uniform.
pub fn share<R: Rng>(x: &RingTensor, rng: &mut R) -> (ArithmeticShare, ArithmeticShare) {
    let r = RingTensor::uniform(x.shape.clone(), rng);
    let other = x.sub(&r).expect("same shape");
    (
        ArithmeticShare {
            party_id: 0,
            data: r,
        },
        ArithmeticShare {
            party_id: 1,
            data: other,
        },
    )
}

/// Elementwise ring sum of the two halves.
pub fn reconstruct(a: &ArithmeticShare, b: &ArithmeticShare) -> Result<ArithmeticShare> {
    if a.party_id == b.party_id {
        return Err(Error::PartyMismatch(format!(
            "reconstruct needs opposite halves, got party {} twice",
            a.party_id
        )));
    }
    Ok(ArithmeticShare {
        party_id: a.party_id.min(b.party_id),
        data: a.data.add(&b.data)?,
    })
}

/// Plaintext view of a reconstruction (test/debug helper).
pub fn open(a: &ArithmeticShare, b: &ArithmeticShare) -> Result<RingTensor> {
    Ok(reconstruct(a, b)?.data)
}

/// Local fixed-point rescaling of one share: party 0 shifts its residue
/// down; party 1 negates, shifts, negates. The halves then recombine to the
/// plaintext shift with at most one trailing-bit carry, and shares of an
/// exact zero stay exactly zero.
pub fn truncate_share(t: &RingTensor, frac_bits: u32, party_id: usize) -> RingTensor {
    t.map(|r| {
        if party_id == 0 {
            Ring64(r.0 >> frac_bits)
        } else {
            -Ring64((-r).0 >> frac_bits)
        }
    })
}

/// Local affine combination `sum_i c_i * <x_i>`; communication-free.
pub fn linear_combine(shares: &[&ArithmeticShare], coeffs: &[Ring64]) -> Result<ArithmeticShare> {
    if shares.is_empty() || shares.len() != coeffs.len() {
        return Err(Error::Protocol(
            "linear_combine needs matching non-empty share/coefficient lists".into(),
        ));
    }
    let party = shares[0].party_id;
    let shape = shares[0].data.shape.clone();
    let mut acc = RingTensor::zeros(shape);
    for (s, &c) in shares.iter().zip(coeffs) {
        if s.party_id != party {
            return Err(Error::PartyMismatch(
                "linear_combine shares must belong to one party".into(),
            ));
        }
        acc = acc.add(&s.data.scale(c))?;
    }
    Ok(ArithmeticShare {
        party_id: party,
        data: acc,
    })
}

/// XOR the two binary halves back into plaintext words.
pub fn reconstruct_binary(a: &BinaryShare, b: &BinaryShare) -> Result<Vec<u64>> {
    if a.party_id == b.party_id {
        return Err(Error::PartyMismatch("need opposite binary halves".into()));
    }
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            expected: a.shape.clone(),
            got: b.shape.clone(),
        });
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| x ^ y).collect())
}

/// Interactive front half of the arithmetic-to-binary conversion: XOR-share
/// both arithmetic halves, then add them with a shared ripple-carry adder.
/// Returns the 64 sum wires (bit 63 is the sign).
pub(crate) fn arithmetic_to_sum_wires<C: Channel, T: TripleSource>(
    x: &ArithmeticShare,
    ch: &mut C,
    triples: &mut T,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<Vec<BitWire>> {
    let party = ch.party_id();
    if x.party_id != party {
        return Err(Error::PartyMismatch(
            "conversion input must belong to the channel's party".into(),
        ));
    }
    let n = x.data.len();
    // XOR-share my arithmetic half: peer receives the mask, I keep value ^ mask.
    let masks: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let mut payload = Vec::with_capacity(n * 8);
    for m in &masks {
        payload.extend_from_slice(&m.to_le_bytes());
    }
    let theirs = exchange(ch, tag, &payload)?;
    if theirs.len() != n * 8 {
        return Err(Error::Protocol("binary reshare payload size".into()));
    }
    let their_masks: Vec<u64> = theirs
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let my_masked: Vec<u64> = x
        .data
        .data
        .iter()
        .zip(&masks)
        .map(|(v, m)| v.0 ^ m)
        .collect();
    let zero = vec![0u64; n];
    // Wire shares of party 0's half and of party 1's half.
    let (half0, half1) = if party == 0 {
        (my_masked, their_masks)
    } else {
        (their_masks, my_masked)
    };
    let _ = zero;
    let w0 = boolean::words_to_wires(party, &half0);
    let w1 = boolean::words_to_wires(party, &half1);
    boolean::ripple_carry_add(&w0, &w1, ch, triples, tag)
}

/// Full arithmetic-to-binary share conversion.
pub fn a2b<C: Channel, T: TripleSource>(
    x: &ArithmeticShare,
    ch: &mut C,
    triples: &mut T,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<BinaryShare> {
    let wires = arithmetic_to_sum_wires(x, ch, triples, rng, tag)?;
    Ok(BinaryShare {
        party_id: ch.party_id(),
        words: boolean::wires_to_words(&wires),
        shape: x.data.shape.clone(),
    })
}

/// Convert one XOR-shared bit per element into an arithmetic sharing of {0,1}:
/// `b = b0 + b1 - 2 * b0 * b1` with the cross term from one Beaver product.
pub(crate) fn bit_to_arithmetic<C: Channel, T: TripleSource>(
    bit: &BitWire,
    shape: &[usize],
    ch: &mut C,
    triples: &mut T,
    tag: &str,
) -> Result<ArithmeticShare> {
    let party = ch.party_id();
    let as_ring = |bits: &[u8]| {
        RingTensor::new(
            shape.to_vec(),
            bits.iter().map(|&b| Ring64(b as u64)).collect(),
        )
    };
    let zeros = RingTensor::zeros(shape.to_vec());
    // <b0> = (bits, 0), <b1> = (0, bits): each party builds its own halves.
    let b0 = ArithmeticShare {
        party_id: party,
        data: if party == 0 {
            as_ring(&bit.bits)
        } else {
            zeros.clone()
        },
    };
    let b1 = ArithmeticShare {
        party_id: party,
        data: if party == 1 { as_ring(&bit.bits) } else { zeros },
    };
    let kind = TripleKind::elementwise(shape);
    let mut triple = triples.beaver(&kind)?;
    let cross = secure_mul::<C, T>(&b0, &b1, &mut triple, ch, tag)?;
    linear_combine(
        &[&b0, &b1, &cross],
        &[Ring64::ONE, Ring64::ONE, Ring64::from_signed(-2)],
    )
}

/// Single-bit binary-to-arithmetic conversion (words must be 0 or 1).
pub fn b2a<C: Channel, T: TripleSource>(
    b: &BinaryShare,
    ch: &mut C,
    triples: &mut T,
    tag: &str,
) -> Result<ArithmeticShare> {
    if b.words.iter().any(|&w| w > 1) {
        return Err(Error::Protocol(
            "b2a input must be a single-bit binary share".into(),
        ));
    }
    let wire = BitWire {
        party_id: b.party_id,
        bits: b.words.iter().map(|&w| w as u8).collect(),
    };
    bit_to_arithmetic(&wire, &b.shape, ch, triples, tag)
}
