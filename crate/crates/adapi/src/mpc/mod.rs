//! Interactive two-party protocols: Beaver multiplication, secure comparison,
//! and secure ReLU.

pub mod boolean;
pub mod dealer;
pub mod ot;

use crate::error::{Error, Result};
use crate::ring::{ConvGeometry, Ring64, RingTensor};
use crate::sharing::{self, ArithmeticShare};
use crate::transport::{exchange, Channel};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use boolean::{BitWire, BooleanTripleVec};
pub use dealer::TrustedDealer;

/// The product family a Beaver triple is good for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TripleKind {
    /// Hadamard product over a fixed shape.
    Elementwise { shape: Vec<usize> },
    /// `[m,k] x [k,n]` matrix product. `lhs_support`, when present, pins the
    /// left operand to a public sparsity pattern (entries off the support are
    /// zero on the wire and in the triple).
    MatMul {
        m: usize,
        k: usize,
        n: usize,
        lhs_support: Option<Vec<u8>>,
    },
    /// 2-D convolution; `kernel_support` plays the same role for the kernel.
    Conv {
        geom: ConvGeometry,
        kernel_support: Option<Vec<u8>>,
    },
}

impl TripleKind {
    pub fn elementwise(shape: &[usize]) -> TripleKind {
        TripleKind::Elementwise {
            shape: shape.to_vec(),
        }
    }

    pub fn lhs_shape(&self) -> Vec<usize> {
        match self {
            TripleKind::Elementwise { shape } => shape.clone(),
            TripleKind::MatMul { m, k, .. } => vec![*m, *k],
            TripleKind::Conv { geom, .. } => geom.input_shape(),
        }
    }

    pub fn rhs_shape(&self) -> Vec<usize> {
        match self {
            TripleKind::Elementwise { shape } => shape.clone(),
            TripleKind::MatMul { k, n, .. } => vec![*k, *n],
            TripleKind::Conv { geom, .. } => geom.kernel_shape(),
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        match self {
            TripleKind::Elementwise { shape } => shape.clone(),
            TripleKind::MatMul { m, n, .. } => vec![*m, *n],
            TripleKind::Conv { geom, .. } => geom.output_shape(),
        }
    }

    pub fn lhs_support(&self) -> Option<&[u8]> {
        match self {
            TripleKind::MatMul { lhs_support, .. } => lhs_support.as_deref(),
            _ => None,
        }
    }

    pub fn rhs_support(&self) -> Option<&[u8]> {
        match self {
            TripleKind::Conv { kernel_support, .. } => kernel_support.as_deref(),
            _ => None,
        }
    }

    /// The public product `lhs (x) rhs` this triple kind stands for.
    pub fn apply(&self, lhs: &RingTensor, rhs: &RingTensor) -> Result<RingTensor> {
        match self {
            TripleKind::Elementwise { .. } => lhs.mul_elementwise(rhs),
            TripleKind::MatMul { .. } => lhs.matmul(rhs),
            TripleKind::Conv { geom, .. } => lhs.conv2d(rhs, geom),
        }
    }
}

/// One party's half of a Beaver triple `z = a (x) b`. Single use.
#[derive(Clone, Debug)]
pub struct BeaverTriple {
    pub kind: TripleKind,
    pub a: RingTensor,
    pub b: RingTensor,
    pub z: RingTensor,
    consumed: bool,
}

impl BeaverTriple {
    pub fn new(kind: TripleKind, a: RingTensor, b: RingTensor, z: RingTensor) -> BeaverTriple {
        BeaverTriple {
            kind,
            a,
            b,
            z,
            consumed: false,
        }
    }

    fn consume(&mut self) -> Result<()> {
        if self.consumed {
            return Err(Error::TripleReused);
        }
        self.consumed = true;
        Ok(())
    }
}

/// Supplier of correlated randomness for one party.
pub trait TripleSource {
    fn beaver(&mut self, kind: &TripleKind) -> Result<BeaverTriple>;
    fn boolean(&mut self, count: usize) -> Result<BooleanTripleVec>;
}

/// Zero the entries off a public support. Opened Beaver differences are zero
/// there by construction, so both parties must agree on exact zeros no matter
/// how their local shares represent the pruned positions.
fn mask_on_support(t: &RingTensor, support: Option<&[u8]>) -> RingTensor {
    match support {
        None => t.clone(),
        Some(mask) => RingTensor::new(
            t.shape.clone(),
            t.data
                .iter()
                .zip(mask)
                .map(|(&v, &keep)| if keep != 0 { v } else { Ring64::ZERO })
                .collect(),
        ),
    }
}

fn pack_on_support(t: &RingTensor, support: Option<&[u8]>) -> Vec<u8> {
    match support {
        None => t.to_le_bytes(),
        Some(mask) => {
            let mut out = Vec::new();
            for (r, &keep) in t.data.iter().zip(mask) {
                if keep != 0 {
                    out.extend_from_slice(&r.0.to_le_bytes());
                }
            }
            out
        }
    }
}

fn unpack_on_support(shape: Vec<usize>, support: Option<&[u8]>, bytes: &[u8]) -> Result<RingTensor> {
    match support {
        None => RingTensor::from_le_bytes(shape, bytes),
        Some(mask) => {
            let kept = mask.iter().filter(|&&k| k != 0).count();
            if bytes.len() != kept * 8 {
                return Err(Error::Protocol(format!(
                    "support-packed payload: expected {} bytes, got {}",
                    kept * 8,
                    bytes.len()
                )));
            }
            let mut out = RingTensor::zeros(shape);
            let mut chunks = bytes.chunks_exact(8);
            for (slot, &keep) in out.data.iter_mut().zip(mask) {
                if keep != 0 {
                    let c = chunks.next().unwrap();
                    *slot = Ring64(u64::from_le_bytes(c.try_into().unwrap()));
                }
            }
            Ok(out)
        }
    }
}

fn check_operand(share: &ArithmeticShare, expected: &[usize]) -> Result<()> {
    if share.data.shape != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            got: share.data.shape.clone(),
        });
    }
    Ok(())
}

/// Beaver-triple secure multiplication `<x> (x) <y> -> <x (x) y>`.
///
/// Both parties reveal `E = x - a` and `F = y - b` (packed on any public
/// support) and finish locally:
/// party 1 subtracts `E (x) F`, both add `x_p (x) F + E (x) y_p + z_p`.
pub fn secure_mul<C: Channel, T: TripleSource>(
    x: &ArithmeticShare,
    y: &ArithmeticShare,
    triple: &mut BeaverTriple,
    ch: &mut C,
    tag: &str,
) -> Result<ArithmeticShare> {
    triple.consume()?;
    let kind = triple.kind.clone();
    check_operand(x, &kind.lhs_shape())?;
    check_operand(y, &kind.rhs_shape())?;
    if x.party_id != ch.party_id() || y.party_id != ch.party_id() {
        return Err(Error::PartyMismatch(
            "operands must belong to the channel's party".into(),
        ));
    }

    let e_mine = mask_on_support(&x.data.sub(&triple.a)?, kind.lhs_support());
    let f_mine = mask_on_support(&y.data.sub(&triple.b)?, kind.rhs_support());

    // two tagged exchanges: the masked left difference, then the right one
    let e_payload = pack_on_support(&e_mine, kind.lhs_support());
    let e_raw = exchange(ch, &format!("{tag}.e"), &e_payload)?;
    if e_raw.len() != e_payload.len() {
        return Err(Error::Protocol("secure mul: left-difference width".into()));
    }
    let f_payload = pack_on_support(&f_mine, kind.rhs_support());
    let f_raw = exchange(ch, &format!("{tag}.f"), &f_payload)?;
    if f_raw.len() != f_payload.len() {
        return Err(Error::Protocol("secure mul: right-difference width".into()));
    }
    let e_theirs = unpack_on_support(kind.lhs_shape(), kind.lhs_support(), &e_raw)?;
    let f_theirs = unpack_on_support(kind.rhs_shape(), kind.rhs_support(), &f_raw)?;

    let e_open = e_mine.add(&e_theirs)?;
    let f_open = f_mine.add(&f_theirs)?;

    let mut result = kind
        .apply(&x.data, &f_open)?
        .add(&kind.apply(&e_open, &y.data)?)?
        .add(&triple.z)?;
    if ch.party_id() == 1 {
        result = result.sub(&kind.apply(&e_open, &f_open)?)?;
    }
    Ok(ArithmeticShare {
        party_id: ch.party_id(),
        data: result,
    })
}

/// Fixed-point secure multiplication: Beaver product followed by local
/// truncation of each party's share (costs at most one LSB plus a rare
/// wrap for operands near the ring boundary).
pub fn secure_mul_fixed<C: Channel, T: TripleSource>(
    x: &ArithmeticShare,
    y: &ArithmeticShare,
    triple: &mut BeaverTriple,
    codec: &crate::ring::FixedPointCodec,
    ch: &mut C,
    tag: &str,
) -> Result<ArithmeticShare> {
    let raw = secure_mul::<C, T>(x, y, triple, ch, tag)?;
    Ok(ArithmeticShare {
        party_id: raw.party_id,
        data: crate::sharing::truncate_share(&raw.data, codec.frac_bits, raw.party_id),
    })
}

/// Secure strict-positivity bit: reconstruct(b) = 1 iff signed(x) > 0.
///
/// Pipeline: arithmetic-to-binary conversion, take the complement of the sign
/// wire, AND it with an OR-tree nonzero flag (so exactly zero maps to 0), then
/// convert the single bit back to an arithmetic sharing.
pub fn drelu<C: Channel, T: TripleSource>(
    x: &ArithmeticShare,
    ch: &mut C,
    triples: &mut T,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<ArithmeticShare> {
    let wires = sharing::arithmetic_to_sum_wires(x, ch, triples, rng, tag)?;
    let sign = &wires[63];
    let nonzero = boolean::or_tree(&wires, ch, triples, tag)?;
    let positive = boolean::and_gate(&sign.not(), &nonzero, ch, triples, tag)?;
    sharing::bit_to_arithmetic(&positive, &x.data.shape, ch, triples, tag)
}

/// Secure ReLU: `drelu(x) * x` elementwise. The bit is a plain integer, so no
/// truncation follows the product.
pub fn secure_relu<C: Channel, T: TripleSource>(
    x: &ArithmeticShare,
    ch: &mut C,
    triples: &mut T,
    rng: &mut ChaCha20Rng,
    tag: &str,
) -> Result<ArithmeticShare> {
    let bit = drelu(x, ch, triples, rng, tag)?;
    let kind = TripleKind::elementwise(&x.data.shape);
    let mut triple = triples.beaver(&kind)?;
    secure_mul::<C, T>(&bit, x, &mut triple, ch, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prg::session_rng;
    use crate::sharing::{open, share};
    use crate::transport::{in_process_pair, InProcessChannel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;
    use std::thread;

    fn run_both<F, R>(seed: u64, f: F) -> (R, R)
    where
        F: Fn(usize, &mut InProcessChannel, &mut TrustedDealer) -> R + Send + Sync + 'static,
        R: Send + 'static,
    {
        let (mut ch0, mut ch1) = in_process_pair();
        let f = Arc::new(f);
        let f0 = f.clone();
        let h0 = thread::spawn(move || {
            let mut dealer = TrustedDealer::new(seed, 0);
            f0(0, &mut ch0, &mut dealer)
        });
        let h1 = thread::spawn(move || {
            let mut dealer = TrustedDealer::new(seed, 1);
            f(1, &mut ch1, &mut dealer)
        });
        (h0.join().unwrap(), h1.join().unwrap())
    }

    fn fixed_shares(values: &[i64], shape: &[usize], party: usize, seed: u64) -> ArithmeticShare {
        let t = RingTensor::new(
            shape.to_vec(),
            values.iter().map(|&v| Ring64::from_signed(v)).collect(),
        );
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (s0, s1) = share(&t, &mut rng);
        if party == 0 {
            s0
        } else {
            s1
        }
    }

    #[test]
    fn secure_mul_matches_hand_expansion() {
        // X=3, Y=5, triple (2,4,8): E=1, F=1, R = -1 + 3 + 5 + 8 = 15
        let (r0, r1) = run_both(3, |party, ch, _| {
            let kind = TripleKind::elementwise(&[1]);
            let x = fixed_shares(&[3], &[1], party, 10);
            let y = fixed_shares(&[5], &[1], party, 11);
            // forced triple halves: party 0 holds everything, party 1 zeros
            let val = |v: i64| {
                RingTensor::new(
                    vec![1],
                    vec![if party == 0 {
                        Ring64::from_signed(v)
                    } else {
                        Ring64::ZERO
                    }],
                )
            };
            let mut triple = BeaverTriple::new(kind, val(2), val(4), val(8));
            let r = secure_mul::<_, TrustedDealer>(&x, &y, &mut triple, ch, "mul").unwrap();
            r.data
        });
        let sum = r0.data[0] + r1.data[0];
        assert_eq!(sum.as_signed(), 15);
    }

    #[test]
    fn secure_mul_zero_left_operand() {
        let (r0, r1) = run_both(4, |party, ch, dealer| {
            let kind = TripleKind::elementwise(&[4]);
            let x = fixed_shares(&[0, 0, 0, 0], &[4], party, 20);
            let y = fixed_shares(&[7, -3, 1000, -1], &[4], party, 21);
            let mut triple = dealer.beaver(&kind).unwrap();
            secure_mul::<_, TrustedDealer>(&x, &y, &mut triple, ch, "mul").unwrap()
        });
        let out = open(&r0, &r1).unwrap();
        assert!(out.data.iter().all(|r| r.0 == 0));
    }

    #[test]
    fn secure_mul_matrix_case_matches_plaintext() {
        let (r0, r1) = run_both(5, |party, ch, dealer| {
            let kind = TripleKind::MatMul {
                m: 2,
                k: 2,
                n: 2,
                lhs_support: None,
            };
            let x = fixed_shares(&[1, 2, 3, 4], &[2, 2], party, 30);
            let y = fixed_shares(&[5, 6, 7, 8], &[2, 2], party, 31);
            let mut triple = dealer.beaver(&kind).unwrap();
            secure_mul::<_, TrustedDealer>(&x, &y, &mut triple, ch, "mul").unwrap()
        });
        let out = open(&r0, &r1).unwrap();
        let expect: Vec<i64> = vec![19, 22, 43, 50];
        assert_eq!(
            out.data.iter().map(|r| r.as_signed()).collect::<Vec<_>>(),
            expect
        );
    }

    #[test]
    fn secure_mul_random_ring_values_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let n = 10_000usize;
        let xs: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let ys: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let expect: Vec<u64> = xs
            .iter()
            .zip(&ys)
            .map(|(a, b)| a.wrapping_mul(*b))
            .collect();
        let xs2 = xs.clone();
        let ys2 = ys.clone();
        let (r0, r1) = run_both(7, move |party, ch, dealer| {
            let shape = vec![xs2.len()];
            let xt = RingTensor::new(shape.clone(), xs2.iter().map(|&v| Ring64(v)).collect());
            let yt = RingTensor::new(shape.clone(), ys2.iter().map(|&v| Ring64(v)).collect());
            let mut rng = ChaCha20Rng::seed_from_u64(77);
            let (x0, x1) = share(&xt, &mut rng);
            let (y0, y1) = share(&yt, &mut rng);
            let (x, y) = if party == 0 { (x0, y0) } else { (x1, y1) };
            let kind = TripleKind::elementwise(&shape);
            let mut triple = dealer.beaver(&kind).unwrap();
            secure_mul::<_, TrustedDealer>(&x, &y, &mut triple, ch, "mul").unwrap()
        });
        let out = open(&r0, &r1).unwrap();
        assert_eq!(
            out.data.iter().map(|r| r.0).collect::<Vec<_>>(),
            expect
        );
    }

    #[test]
    fn triple_reuse_is_detected() {
        let (res0, _res1) = run_both(8, |party, ch, dealer| {
            let kind = TripleKind::elementwise(&[2]);
            let x = fixed_shares(&[1, 2], &[2], party, 40);
            let y = fixed_shares(&[3, 4], &[2], party, 41);
            let mut triple = dealer.beaver(&kind).unwrap();
            secure_mul::<_, TrustedDealer>(&x, &y, &mut triple, ch, "mul").unwrap();
            let second = secure_mul::<_, TrustedDealer>(&x, &y, &mut triple, ch, "mul");
            second.is_err()
        });
        assert!(res0);
    }

    #[test]
    fn secure_mul_fixed_decodes_to_real_product() {
        let codec = crate::ring::FixedPointCodec::new(16);
        let cases = vec![(1.0, 1.0), (0.5, -2.0), (0.0, 3832.25), (-1.5, -2.25)];
        let cases2 = cases.clone();
        let (r0, r1) = run_both(9, move |party, ch, dealer| {
            let codec = crate::ring::FixedPointCodec::new(16);
            let xs: Vec<f64> = cases2.iter().map(|c| c.0).collect();
            let ys: Vec<f64> = cases2.iter().map(|c| c.1).collect();
            let xt = codec.encode_tensor(&xs, &[xs.len()]).unwrap();
            let yt = codec.encode_tensor(&ys, &[ys.len()]).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(88);
            let (x0, x1) = share(&xt, &mut rng);
            let (y0, y1) = share(&yt, &mut rng);
            let (x, y) = if party == 0 { (x0, y0) } else { (x1, y1) };
            let kind = TripleKind::elementwise(&x.data.shape);
            let mut triple = dealer.beaver(&kind).unwrap();
            secure_mul_fixed::<_, TrustedDealer>(&x, &y, &mut triple, &codec, ch, "mul").unwrap()
        });
        let out = open(&r0, &r1).unwrap();
        for (i, (x, y)) in cases.iter().enumerate() {
            let got = codec.decode(out.data[i]);
            assert!(
                (got - x * y).abs() <= 2.0f64.powi(1 - 16) * (1.0 + (x * y).abs()),
                "{} * {} = {}, got {}",
                x,
                y,
                x * y,
                got
            );
        }
    }

    #[test]
    fn drelu_strict_positivity() {
        let values: Vec<i64> = vec![-7, 7, 0, 1, -1, i64::MAX, i64::MIN, 65536];
        let expect: Vec<u64> = values.iter().map(|&v| (v > 0) as u64).collect();
        let values2 = values.clone();
        let (r0, r1) = run_both(10, move |party, ch, dealer| {
            let t = RingTensor::new(
                vec![values2.len()],
                values2.iter().map(|&v| Ring64::from_signed(v)).collect(),
            );
            let mut rng = ChaCha20Rng::seed_from_u64(99);
            let (s0, s1) = share(&t, &mut rng);
            let x = if party == 0 { s0 } else { s1 };
            let mut prg = session_rng(123, party as u64, "drelu-test");
            drelu(&x, ch, dealer, &mut prg, "drelu").unwrap()
        });
        let out = open(&r0, &r1).unwrap();
        assert_eq!(out.data.iter().map(|r| r.0).collect::<Vec<_>>(), expect);
    }

    #[test]
    fn secure_relu_matches_plaintext_and_mirror_sums_to_abs() {
        let codec = crate::ring::FixedPointCodec::new(16);
        let reals = vec![-2.0, 3.5, 0.0, -0.25, 10.0, -1017.5];
        let reals2 = reals.clone();
        let (r0, r1) = run_both(11, move |party, ch, dealer| {
            let codec = crate::ring::FixedPointCodec::new(16);
            let t = codec.encode_tensor(&reals2, &[reals2.len()]).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(111);
            let (s0, s1) = share(&t, &mut rng);
            let x = if party == 0 { s0 } else { s1 };
            let mut prg = session_rng(124, party as u64, "relu-test");
            let pos = secure_relu(&x, ch, dealer, &mut prg, "relu").unwrap();
            let neg_in = ArithmeticShare {
                party_id: party,
                data: x.data.neg(),
            };
            let neg = secure_relu(&neg_in, ch, dealer, &mut prg, "relu").unwrap();
            (pos, neg)
        });
        let pos = open(&r0.0, &r1.0).unwrap();
        let neg = open(&r0.1, &r1.1).unwrap();
        for (i, &x) in reals.iter().enumerate() {
            assert_eq!(codec.decode(pos.data[i]), x.max(0.0), "relu({x})");
            let abs = codec.decode(pos.data[i] + neg.data[i]);
            assert_eq!(abs, x.abs(), "relu(x)+relu(-x) at {x}");
        }
    }

    #[test]
    fn secure_mul_conv_kind_matches_plaintext() {
        let geom = ConvGeometry {
            in_channels: 1,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            pad: 0,
            in_h: 8,
            in_w: 8,
        };
        let kind = TripleKind::Conv { geom, kernel_support: None };
        let mut rng = ChaCha20Rng::seed_from_u64(500);
        let x_plain = RingTensor::uniform(geom.input_shape(), &mut rng)
            .map(|r| Ring64(r.0 >> 40)); // keep magnitudes small
        let w_plain = RingTensor::uniform(geom.kernel_shape(), &mut rng)
            .map(|r| Ring64(r.0 >> 40));
        let expect = x_plain.conv2d(&w_plain, &geom).unwrap();

        let (mut ch0, mut ch1) = in_process_pair();
        let xp = x_plain.clone();
        let wp = w_plain.clone();
        let kind2 = kind.clone();
        let f = Arc::new(move |party: usize, ch: &mut crate::transport::InProcessChannel| {
            let mut dealer = TrustedDealer::new(77, party);
            let mut rng = ChaCha20Rng::seed_from_u64(501);
            let (x0, x1) = share(&xp, &mut rng);
            let (w0, w1) = share(&wp, &mut rng);
            let (x, w) = if party == 0 { (x0, w0) } else { (x1, w1) };
            let mut triple = dealer.beaver(&kind2).unwrap();
            secure_mul::<_, TrustedDealer>(&x, &w, &mut triple, ch, "c").unwrap()
        });
        let f0 = f.clone();
        let h0 = thread::spawn(move || f0(0, &mut ch0));
        let h1 = thread::spawn(move || f(1, &mut ch1));
        let r0 = h0.join().unwrap();
        let r1 = h1.join().unwrap();
        assert_eq!(open(&r0, &r1).unwrap(), expect);
    }

    #[test]
    fn secure_mul_conv_kind_with_support() {
        let geom = ConvGeometry {
            in_channels: 1,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            pad: 0,
            in_h: 8,
            in_w: 8,
        };
        let support: Vec<u8> = (0..18).map(|i| ((i % 5) == 0) as u8).collect();
        let kind = TripleKind::Conv { geom, kernel_support: Some(support.clone()) };
        let mut rng = ChaCha20Rng::seed_from_u64(600);
        let x_plain = RingTensor::uniform(geom.input_shape(), &mut rng)
            .map(|r| Ring64(r.0 >> 40));
        let mut w_plain = RingTensor::uniform(geom.kernel_shape(), &mut rng)
            .map(|r| Ring64(r.0 >> 40));
        for (v, &keep) in w_plain.data.iter_mut().zip(&support) {
            if keep == 0 { *v = Ring64::ZERO; }
        }
        let expect = x_plain.conv2d(&w_plain, &geom).unwrap();

        let (mut ch0, mut ch1) = in_process_pair();
        let xp = x_plain.clone();
        let wp = w_plain.clone();
        let sup = support.clone();
        let kind2 = kind.clone();
        let f = Arc::new(move |party: usize, ch: &mut crate::transport::InProcessChannel| {
            let mut dealer = TrustedDealer::new(78, party);
            let mut rng = ChaCha20Rng::seed_from_u64(601);
            let (x0, x1) = share(&xp, &mut rng);
            // deploy-style weight shares: pruned positions are (0,0)
            let mut w0 = RingTensor::zeros(wp.shape.clone());
            let mut w1 = RingTensor::zeros(wp.shape.clone());
            for (i, &keep) in sup.iter().enumerate() {
                if keep != 0 {
                    let r = Ring64(rng.gen());
                    w0.data[i] = r;
                    w1.data[i] = wp.data[i] - r;
                }
            }
            let (x, w) = if party == 0 { (x0, ArithmeticShare { party_id: 0, data: w0 }) }
                         else { (x1, ArithmeticShare { party_id: 1, data: w1 }) };
            let mut triple = dealer.beaver(&kind2).unwrap();
            secure_mul::<_, TrustedDealer>(&x, &w, &mut triple, ch, "c").unwrap()
        });
        let f0 = f.clone();
        let h0 = thread::spawn(move || f0(0, &mut ch0));
        let h1 = thread::spawn(move || f(1, &mut ch1));
        let r0 = h0.join().unwrap();
        let r1 = h1.join().unwrap();
        assert_eq!(open(&r0, &r1).unwrap(), expect);
    }
}
