//! Multiplicative group arithmetic for the oblivious-transfer flow.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use std::sync::Arc;

/// Largest safe prime below 2^256. `GENERATOR` is a quadratic residue, so it
/// generates the prime-order subgroup of size (p-1)/2 (far above 2^40).
pub const SAFE_PRIME_256_HEX: &str =
    "ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff72ef";

/// Largest safe prime below 2^32; used when group elements must fit a 4-byte wire slot.
pub const SAFE_PRIME_32: u64 = 4_294_967_087;

/// Small safe prime for unit tests.
pub const TEST_PRIME: u64 = 2_579;

/// 4 = 2^2 is a quadratic residue mod every safe prime, hence generates the
/// order-q subgroup (q = (p-1)/2 prime).
pub const GENERATOR: u32 = 4;

/// Group parameters: a prime modulus and a generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    pub modulus: BigUint,
    pub generator: BigUint,
    /// Bytes used to serialize one residue on the wire.
    pub element_bytes: usize,
}

impl GroupParams {
    /// Production group over the shipped 256-bit safe prime.
    pub fn production_256() -> Arc<GroupParams> {
        Arc::new(GroupParams {
            modulus: BigUint::parse_bytes(SAFE_PRIME_256_HEX.as_bytes(), 16).unwrap(),
            generator: BigUint::from(GENERATOR),
            element_bytes: 32,
        })
    }

    /// 32-bit group whose residues fit the 4-byte wire slots of the transfer flow.
    pub fn wire32() -> Arc<GroupParams> {
        Arc::new(GroupParams {
            modulus: BigUint::from(SAFE_PRIME_32),
            generator: BigUint::from(GENERATOR),
            element_bytes: 4,
        })
    }

    /// Tiny group for unit tests.
    pub fn test_small() -> Arc<GroupParams> {
        Arc::new(GroupParams {
            modulus: BigUint::from(TEST_PRIME),
            generator: BigUint::from(GENERATOR),
            element_bytes: 2,
        })
    }

    pub fn element(self: &Arc<Self>, residue: BigUint) -> GroupElement {
        GroupElement {
            residue: residue % &self.modulus,
            params: Arc::clone(self),
        }
    }

    pub fn generator_element(self: &Arc<Self>) -> GroupElement {
        self.element(self.generator.clone())
    }
}

/// A residue `1 <= r < m` under fixed group parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupElement {
    pub residue: BigUint,
    pub params: Arc<GroupParams>,
}

impl GroupElement {
    /// Modular exponentiation by square-and-multiply.
    pub fn pow(&self, exponent: &BigUint) -> GroupElement {
        let mut result = BigUint::one();
        let mut base = self.residue.clone();
        let mut e = exponent.clone();
        let m = &self.params.modulus;
        while !e.is_zero() {
            if e.bit(0) {
                result = result * &base % m;
            }
            base = &base * &base % m;
            e >>= 1;
        }
        GroupElement {
            residue: result,
            params: Arc::clone(&self.params),
        }
    }

    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            residue: &self.residue * &other.residue % &self.params.modulus,
            params: Arc::clone(&self.params),
        }
    }

    /// Inverse via Fermat: r^(m-2) mod m.
    pub fn inverse(&self) -> GroupElement {
        let m = &self.params.modulus;
        self.pow(&(m - 2u32))
    }

    /// Fixed-width little-endian wire encoding, `element_bytes` long.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut bytes = self.residue.to_bytes_le();
        bytes.resize(self.params.element_bytes, 0);
        bytes
    }

    pub fn from_wire(params: &Arc<GroupParams>, bytes: &[u8]) -> GroupElement {
        params.element(BigUint::from_bytes_le(bytes))
    }
}

/// `g^e mod m` by square-and-multiply.
pub fn group_pow(base: &GroupElement, exponent: &BigUint) -> GroupElement {
    base.pow(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn pow_zero_and_one() {
        let params = GroupParams::test_small();
        let g = params.generator_element();
        assert_eq!(g.pow(&BigUint::zero()).residue, BigUint::one());
        assert_eq!(g.pow(&BigUint::one()), g);
    }

    #[test]
    fn pow_hand_oracle() {
        // 2^4 mod 13 = 16 mod 13 = 3
        let params = Arc::new(GroupParams {
            modulus: BigUint::from(13u32),
            generator: BigUint::from(2u32),
            element_bytes: 1,
        });
        let g = params.generator_element();
        assert_eq!(g.pow(&BigUint::from(4u32)).residue, BigUint::from(3u32));
    }

    #[test]
    fn pow_is_homomorphic_in_the_exponent() {
        let params = GroupParams::wire32();
        let g = params.generator_element();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = BigUint::from(rng.gen::<u64>());
            let b = BigUint::from(rng.gen::<u64>());
            let lhs = g.pow(&(&a + &b));
            let rhs = g.pow(&a).mul(&g.pow(&b));
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn generator_subgroup_order_is_q_in_test_group() {
        // 2579 = 2*1289 + 1; the QR generator must have order exactly 1289.
        let params = GroupParams::test_small();
        let g = params.generator_element();
        let q = BigUint::from(1289u32);
        assert_eq!(g.pow(&q).residue, BigUint::one());
        assert_ne!(g.residue, BigUint::one());
    }

    #[test]
    fn wire_round_trip() {
        let params = GroupParams::wire32();
        let x = params.element(BigUint::from(123_456_789u32));
        let bytes = x.to_wire();
        assert_eq!(bytes.len(), 4);
        assert_eq!(GroupElement::from_wire(&params, &bytes), x);
    }

    #[test]
    fn inverse_cancels() {
        let params = GroupParams::production_256();
        let g = params.generator_element();
        let x = g.pow(&BigUint::from(987_654_321u64));
        assert_eq!(x.mul(&x.inverse()).residue, BigUint::one());
    }
}
