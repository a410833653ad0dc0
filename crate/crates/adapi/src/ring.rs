//! Exact arithmetic in the ring Z_{2^64} and fixed-point encoding of reals.
//!
//! All secret-shared values live in this ring. Addition, subtraction and
//! multiplication wrap; nothing traps or saturates. Reals are embedded by
//! scaling with `2^frac_bits` and taking the two's-complement residue.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// A residue modulo 2^64.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ring64(pub u64);

impl Ring64 {
    pub const ZERO: Ring64 = Ring64(0);
    pub const ONE: Ring64 = Ring64(1);

    /// Signed two's-complement interpretation (values >= 2^63 are negative).
    pub fn as_signed(self) -> i64 {
        self.0 as i64
    }

    pub fn from_signed(v: i64) -> Ring64 {
        Ring64(v as u64)
    }

    /// Arithmetic right shift of the signed interpretation, re-embedded in the ring.
    pub fn shift_right(self, shift: u32) -> Ring64 {
        Ring64((self.as_signed() >> shift) as u64)
    }
}

impl fmt::Debug for Ring64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ring64({})", self.0)
    }
}

impl Add for Ring64 {
    type Output = Ring64;
    fn add(self, rhs: Ring64) -> Ring64 {
        Ring64(self.0.wrapping_add(rhs.0))
    }
}

impl AddAssign for Ring64 {
    fn add_assign(&mut self, rhs: Ring64) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl Sub for Ring64 {
    type Output = Ring64;
    fn sub(self, rhs: Ring64) -> Ring64 {
        Ring64(self.0.wrapping_sub(rhs.0))
    }
}

impl Mul for Ring64 {
    type Output = Ring64;
    fn mul(self, rhs: Ring64) -> Ring64 {
        Ring64(self.0.wrapping_mul(rhs.0))
    }
}

impl Neg for Ring64 {
    type Output = Ring64;
    fn neg(self) -> Ring64 {
        Ring64(self.0.wrapping_neg())
    }
}

/// Fixed-point codec: reals are stored as `round(x * 2^frac_bits)` mod 2^64.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec { frac_bits: 16 }
    }
}

impl FixedPointCodec {
    pub fn new(frac_bits: u32) -> FixedPointCodec {
        assert!(frac_bits < 63, "frac_bits must leave room for an integer part");
        FixedPointCodec { frac_bits }
    }

    /// Smallest representable step, `2^-frac_bits`.
    pub fn lsb(&self) -> f64 {
        (2.0f64).powi(-(self.frac_bits as i32))
    }

    /// Encode a real into the ring. Errors when `|x| >= 2^(63 - frac_bits)`.
    pub fn encode(&self, x: f64) -> Result<Ring64> {
        let limit = (2.0f64).powi(63 - self.frac_bits as i32);
        if !x.is_finite() || x.abs() >= limit {
            return Err(Error::EncodingOverflow {
                value: x,
                frac_bits: self.frac_bits,
            });
        }
        let scaled = (x * (1u64 << self.frac_bits) as f64).round();
        Ok(Ring64::from_signed(scaled as i64))
    }

    /// Decode a ring element as a signed fixed-point real.
    pub fn decode(&self, r: Ring64) -> f64 {
        r.as_signed() as f64 / (1u64 << self.frac_bits) as f64
    }

    /// Rescale after a raw fixed-point product: arithmetic right shift by `frac_bits`.
    pub fn truncate(&self, r: Ring64) -> Ring64 {
        r.shift_right(self.frac_bits)
    }

    pub fn encode_tensor(&self, data: &[f64], shape: &[usize]) -> Result<RingTensor> {
        let values = data
            .iter()
            .map(|&x| self.encode(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(RingTensor::new(shape.to_vec(), values))
    }

    pub fn decode_tensor(&self, t: &RingTensor) -> Vec<f64> {
        t.data.iter().map(|&r| self.decode(r)).collect()
    }
}

/// Geometry of a 2-D convolution, shared by plaintext and secure execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.in_h, self.in_w]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.out_h(), self.out_w()]
    }
}

/// Dense tensor of ring elements, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingTensor {
    pub shape: Vec<usize>,
    pub data: Vec<Ring64>,
}

impl RingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Ring64>) -> RingTensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape"
        );
        RingTensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> RingTensor {
        let len = shape.iter().product();
        RingTensor {
            shape,
            data: vec![Ring64::ZERO; len],
        }
    }

    pub fn uniform<R: Rng>(shape: Vec<usize>, rng: &mut R) -> RingTensor {
        let len = shape.iter().product();
        RingTensor {
            shape,
            data: (0..len).map(|_| Ring64(rng.gen::<u64>())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check_shape(&self, other: &RingTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &RingTensor) -> Result<RingTensor> {
        self.check_shape(other)?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &RingTensor) -> Result<RingTensor> {
        self.check_shape(other)?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn mul_elementwise(&self, other: &RingTensor) -> Result<RingTensor> {
        self.check_shape(other)?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn neg(&self) -> RingTensor {
        self.map(|a| -a)
    }

    pub fn scale(&self, c: Ring64) -> RingTensor {
        self.map(|a| a * c)
    }

    pub fn shift_right(&self, shift: u32) -> RingTensor {
        self.map(|a| a.shift_right(shift))
    }

    pub fn map<F: Fn(Ring64) -> Ring64>(&self, f: F) -> RingTensor {
        RingTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    fn zip<F: Fn(Ring64, Ring64) -> Ring64>(&self, other: &RingTensor, f: F) -> RingTensor {
        RingTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Matrix product of `[m, k] x [k, n]` tensors, wrapping.
    pub fn matmul(&self, other: &RingTensor) -> Result<RingTensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![Ring64::ZERO; m * n];
        for i in 0..m {
            for l in 0..k {
                let a = self.data[i * k + l];
                if a.0 == 0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.data[l * n + j];
                }
            }
        }
        Ok(RingTensor::new(vec![m, n], out))
    }

    /// 2-D convolution of a `[IC, H, W]` input with a `[OC, IC, K, K]` kernel, wrapping.
    pub fn conv2d(&self, kernel: &RingTensor, geom: &ConvGeometry) -> Result<RingTensor> {
        if self.shape != geom.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: geom.input_shape(),
                got: self.shape.clone(),
            });
        }
        if kernel.shape != geom.kernel_shape() {
            return Err(Error::ShapeMismatch {
                expected: geom.kernel_shape(),
                got: kernel.shape.clone(),
            });
        }
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let (ic, k) = (geom.in_channels, geom.kernel);
        let (h, w) = (geom.in_h, geom.in_w);
        let mut out = vec![Ring64::ZERO; geom.out_channels * oh * ow];
        for oc in 0..geom.out_channels {
            for ci in 0..ic {
                for kr in 0..k {
                    for kc in 0..k {
                        let wv = kernel.data[((oc * ic + ci) * k + kr) * k + kc];
                        if wv.0 == 0 {
                            continue;
                        }
                        for or in 0..oh {
                            let ir = (or * geom.stride + kr) as isize - geom.pad as isize;
                            if ir < 0 || ir as usize >= h {
                                continue;
                            }
                            for ocol in 0..ow {
                                let icol =
                                    (ocol * geom.stride + kc) as isize - geom.pad as isize;
                                if icol < 0 || icol as usize >= w {
                                    continue;
                                }
                                let iv = self.data[(ci * h + ir as usize) * w + icol as usize];
                                out[(oc * oh + or) * ow + ocol] += iv * wv;
                            }
                        }
                    }
                }
            }
        }
        Ok(RingTensor::new(geom.output_shape(), out))
    }

    /// Little-endian byte image of the tensor data.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for r in &self.data {
            out.extend_from_slice(&r.0.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<RingTensor> {
        let expected = shape.iter().product::<usize>() * 8;
        if bytes.len() != expected {
            return Err(Error::Protocol(format!(
                "ring tensor payload: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| Ring64(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(RingTensor::new(shape, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn encode_zero_and_one() {
        let codec = FixedPointCodec::new(16);
        assert_eq!(codec.encode(0.0).unwrap(), Ring64(0));
        assert_eq!(codec.encode(1.0).unwrap(), Ring64(65536));
    }

    #[test]
    fn encode_negative_is_twos_complement_residue() {
        let codec = FixedPointCodec::new(16);
        // hand oracle: -1.0 * 2^16 = -65536, residue 2^64 - 65536
        assert_eq!(codec.encode(-1.0).unwrap(), Ring64(u64::MAX - 65536 + 1));
    }

    #[test]
    fn decode_basics() {
        let codec = FixedPointCodec::new(16);
        assert_eq!(codec.decode(Ring64(65536)), 1.0);
        assert_eq!(codec.decode(Ring64(0)), 0.0);
        // signed reinterpretation oracle: 2^64 - 32768 is -32768 signed
        assert_eq!(codec.decode(Ring64(0u64.wrapping_sub(32768))), -0.5);
    }

    #[test]
    fn encode_overflow_is_an_error() {
        let codec = FixedPointCodec::new(16);
        let limit = (2.0f64).powi(47);
        assert!(codec.encode(limit).is_err());
        assert!(codec.encode(-limit * 2.0).is_err());
        assert!(codec.encode(limit - 1.0).is_ok());
    }

    #[test]
    fn truncate_rescales_products() {
        let codec = FixedPointCodec::new(16);
        let one = codec.encode(1.0).unwrap();
        assert_eq!(codec.truncate(one * one), one);
        assert_eq!(codec.truncate(Ring64(0)), Ring64(0));
        let half = codec.encode(0.5).unwrap();
        assert_eq!(codec.truncate(half * half), codec.encode(0.25).unwrap());
    }

    #[test]
    fn ring_laws_hold_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let a = Ring64(rng.gen());
            let b = Ring64(rng.gen());
            let c = Ring64(rng.gen());
            assert_eq!((a + b) + c, a + (b + c));
            assert_eq!(a + b, b + a);
            assert_eq!((a * b) * c, a * (b * c));
            assert_eq!(a * b, b * a);
            assert_eq!(a * (b + c), a * b + a * c);
            assert_eq!(a + (-a), Ring64::ZERO);
        }
    }

    #[test]
    fn fixed_point_products_stay_within_two_lsb() {
        let codec = FixedPointCodec::new(16);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x = (rng.gen::<f64>() - 0.5) * 2.0 * 1024.0;
            let y = (rng.gen::<f64>() - 0.5) * 2.0 * 1024.0;
            let ex = codec.encode(x).unwrap();
            let ey = codec.encode(y).unwrap();
            let product = codec.decode(codec.truncate(ex * ey));
            assert!(
                (product - x * y).abs() <= 2.0 * codec.lsb() * (1.0 + x.abs() + y.abs()),
                "x={x} y={y} product={product}"
            );
        }
    }

    #[test]
    fn matmul_matches_hand_example() {
        let t = |v: &[i64], shape: &[usize]| {
            RingTensor::new(
                shape.to_vec(),
                v.iter().map(|&x| Ring64::from_signed(x)).collect(),
            )
        };
        let a = t(&[1, 2, 3, 4], &[2, 2]);
        let b = t(&[5, 6, 7, 8], &[2, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, t(&[19, 22, 43, 50], &[2, 2]));
    }

    #[test]
    fn conv2d_identity_kernel() {
        let geom = ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            pad: 0,
            in_h: 3,
            in_w: 3,
        };
        let input = RingTensor::new(
            vec![1, 3, 3],
            (1..=9).map(|v| Ring64(v as u64)).collect(),
        );
        let kernel = RingTensor::new(vec![1, 1, 1, 1], vec![Ring64::ONE]);
        let out = input.conv2d(&kernel, &geom).unwrap();
        assert_eq!(out.data, input.data);
    }
}
