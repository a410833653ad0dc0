//! Trusted-dealer generation of Beaver and boolean triples.
//!
//! Both parties build a dealer from the same seed; the internal generator
//! stream is identical on both sides and each endpoint keeps only its own
//! halves. Requests must be issued in the same order by both parties, which
//! the synchronous protocols guarantee.

use crate::error::Result;
use crate::mpc::{BeaverTriple, BooleanTripleVec, TripleKind, TripleSource};
use crate::prg::session_rng;
use crate::ring::{Ring64, RingTensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub struct TrustedDealer {
    rng: ChaCha20Rng,
    party_id: usize,
}

impl TrustedDealer {
    pub fn new(seed: u64, party_id: usize) -> TrustedDealer {
        assert!(party_id < 2, "two-party dealer");
        TrustedDealer {
            // same stream for both parties: the party id only selects halves
            rng: session_rng(seed, 0, "trusted-dealer"),
            party_id,
        }
    }

    /// Convenience pair for tests and in-process simulations.
    pub fn pair(seed: u64) -> (TrustedDealer, TrustedDealer) {
        (TrustedDealer::new(seed, 0), TrustedDealer::new(seed, 1))
    }

    fn sample_masked(&mut self, shape: Vec<usize>, support: Option<&[u8]>) -> RingTensor {
        let mut t = RingTensor::uniform(shape, &mut self.rng);
        if let Some(mask) = support {
            for (v, &keep) in t.data.iter_mut().zip(mask) {
                if keep == 0 {
                    *v = Ring64::ZERO;
                }
            }
        }
        t
    }

    fn split(&mut self, full: &RingTensor) -> RingTensor {
        let mask = RingTensor::uniform(full.shape.clone(), &mut self.rng);
        if self.party_id == 0 {
            mask
        } else {
            full.sub(&mask).expect("same shape")
        }
    }
}

impl TripleSource for TrustedDealer {
    fn beaver(&mut self, kind: &TripleKind) -> Result<BeaverTriple> {
        let a_full = self.sample_masked(kind.lhs_shape(), kind.lhs_support());
        let b_full = self.sample_masked(kind.rhs_shape(), kind.rhs_support());
        let z_full = kind.apply(&a_full, &b_full)?;
        let a = self.split(&a_full);
        let b = self.split(&b_full);
        let z = self.split(&z_full);
        Ok(BeaverTriple::new(kind.clone(), a, b, z))
    }

    fn boolean(&mut self, count: usize) -> Result<BooleanTripleVec> {
        let mut mine = BooleanTripleVec {
            a: Vec::with_capacity(count),
            b: Vec::with_capacity(count),
            c: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let a: u8 = self.rng.gen_range(0..2);
            let b: u8 = self.rng.gen_range(0..2);
            let c = a & b;
            let a0: u8 = self.rng.gen_range(0..2);
            let b0: u8 = self.rng.gen_range(0..2);
            let c0: u8 = self.rng.gen_range(0..2);
            if self.party_id == 0 {
                mine.a.push(a0);
                mine.b.push(b0);
                mine.c.push(c0);
            } else {
                mine.a.push(a ^ a0);
                mine.b.push(b ^ b0);
                mine.c.push(c ^ c0);
            }
        }
        Ok(mine)
    }
}
