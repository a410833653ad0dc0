//! XOR-shared bit vectors and the shared-AND circuits built on them.
//!
//! A `BitWire` holds one bit per tensor element, XOR-shared between the two
//! parties. Wire bytes are one byte per element on the wire, which keeps every
//! message size exactly linear in the element count.

use crate::error::{Error, Result};
use crate::mpc::TripleSource;
use crate::transport::{exchange, Channel};

/// One XOR-shared bit per element.
#[derive(Clone, Debug)]
pub struct BitWire {
    pub party_id: usize,
    pub bits: Vec<u8>,
}

impl BitWire {
    pub fn zeros(party_id: usize, len: usize) -> BitWire {
        BitWire {
            party_id,
            bits: vec![0u8; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Local XOR of two wires.
    pub fn xor(&self, other: &BitWire) -> BitWire {
        debug_assert_eq!(self.len(), other.len());
        BitWire {
            party_id: self.party_id,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    /// Logical complement: party 0 flips its share.
    pub fn not(&self) -> BitWire {
        if self.party_id == 0 {
            BitWire {
                party_id: 0,
                bits: self.bits.iter().map(|b| b ^ 1).collect(),
            }
        } else {
            self.clone()
        }
    }
}

/// Party-local halves of XOR-shared AND triples: (a ^ a') & (b ^ b') = c ^ c'.
#[derive(Clone, Debug)]
pub struct BooleanTripleVec {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
    pub c: Vec<u8>,
}

impl BooleanTripleVec {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Evaluate AND gates over several equally-sized wire pairs in one round.
///
/// The parties mask operands with triple shares, exchange the masked values
/// (`d || e`, two bytes per gate), and finish locally.
pub fn and_layer<C: Channel, T: TripleSource>(
    pairs: &[(&BitWire, &BitWire)],
    ch: &mut C,
    triples: &mut T,
    tag: &str,
) -> Result<Vec<BitWire>> {
    let party = ch.party_id();
    let gate_count: usize = pairs.iter().map(|(x, _)| x.len()).sum();
    let triple = triples.boolean(gate_count)?;

    let mut masked = Vec::with_capacity(2 * gate_count);
    let mut offset = 0usize;
    for (x, y) in pairs {
        debug_assert_eq!(x.len(), y.len());
        for i in 0..x.len() {
            masked.push(x.bits[i] ^ triple.a[offset + i]);
        }
        offset += x.len();
    }
    offset = 0;
    for (x, y) in pairs {
        for i in 0..y.len() {
            masked.push(y.bits[i] ^ triple.b[offset + i]);
        }
        offset += x.len();
    }

    let theirs = exchange(ch, tag, &masked)?;
    if theirs.len() != masked.len() {
        return Err(Error::Protocol(format!(
            "and layer: peer sent {} bytes, expected {}",
            theirs.len(),
            masked.len()
        )));
    }

    let mut outputs = Vec::with_capacity(pairs.len());
    let mut gate = 0usize;
    for (x, _) in pairs {
        let n = x.len();
        let mut bits = Vec::with_capacity(n);
        for i in 0..n {
            let d = masked[gate + i] ^ theirs[gate + i];
            let e = masked[gate_count + gate + i] ^ theirs[gate_count + gate + i];
            let mut z = triple.c[gate + i]
                ^ (d & triple.b[gate + i])
                ^ (e & triple.a[gate + i]);
            if party == 0 {
                z ^= d & e;
            }
            bits.push(z);
        }
        outputs.push(BitWire {
            party_id: party,
            bits,
        });
        gate += n;
    }
    Ok(outputs)
}

/// Single batched AND of two wires.
pub fn and_gate<C: Channel, T: TripleSource>(
    x: &BitWire,
    y: &BitWire,
    ch: &mut C,
    triples: &mut T,
    tag: &str,
) -> Result<BitWire> {
    Ok(and_layer(&[(x, y)], ch, triples, tag)?.pop().unwrap())
}

/// Decompose XOR-shared 64-bit words into 64 bit wires (local).
pub fn words_to_wires(party_id: usize, words: &[u64]) -> Vec<BitWire> {
    (0..64)
        .map(|bit| BitWire {
            party_id,
            bits: words.iter().map(|w| ((w >> bit) & 1) as u8).collect(),
        })
        .collect()
}

/// Reassemble 64 bit wires into XOR-shared words (local).
pub fn wires_to_words(wires: &[BitWire]) -> Vec<u64> {
    assert_eq!(wires.len(), 64);
    let n = wires[0].len();
    let mut words = vec![0u64; n];
    for (bit, wire) in wires.iter().enumerate() {
        for (i, &b) in wire.bits.iter().enumerate() {
            words[i] |= (b as u64) << bit;
        }
    }
    words
}

/// Ripple-carry addition of two XOR-shared 64-bit vectors.
///
/// One batched AND layer for the generate bits, then one sequential AND layer
/// per carry position. Depth is linear by design; only the round count grows.
pub fn ripple_carry_add<C: Channel, T: TripleSource>(
    x: &[BitWire],
    y: &[BitWire],
    ch: &mut C,
    triples: &mut T,
    tag: &str,
) -> Result<Vec<BitWire>> {
    assert_eq!(x.len(), 64);
    assert_eq!(y.len(), 64);
    let propagate: Vec<BitWire> = x.iter().zip(y).map(|(a, b)| a.xor(b)).collect();

    // generate bits g_i = x_i AND y_i for i = 0..62 in one round
    let pairs: Vec<(&BitWire, &BitWire)> = (0..63).map(|i| (&x[i], &y[i])).collect();
    let generate = and_layer(&pairs, ch, triples, tag)?;

    let mut sum = Vec::with_capacity(64);
    sum.push(propagate[0].clone());
    let mut carry = generate[0].clone(); // c_1
    for i in 1..64 {
        sum.push(propagate[i].xor(&carry));
        if i < 63 {
            // c_{i+1} = g_i XOR (p_i AND c_i)
            let t = and_gate(&propagate[i], &carry, ch, triples, tag)?;
            carry = generate[i].xor(&t);
        }
    }
    Ok(sum)
}

/// OR-reduce a set of wires to a single wire via De Morgan AND trees.
pub fn or_tree<C: Channel, T: TripleSource>(
    wires: &[BitWire],
    ch: &mut C,
    triples: &mut T,
    tag: &str,
) -> Result<BitWire> {
    assert!(!wires.is_empty());
    let mut level: Vec<BitWire> = wires.iter().map(|w| w.not()).collect();
    while level.len() > 1 {
        let mut pairs = Vec::new();
        for chunk in level.chunks(2) {
            if chunk.len() == 2 {
                pairs.push((&chunk[0], &chunk[1]));
            }
        }
        let mut next = and_layer(&pairs, ch, triples, tag)?;
        if level.len() % 2 == 1 {
            next.push(level.last().unwrap().clone());
        }
        level = next;
    }
    Ok(level.pop().unwrap().not())
}
