//! Two-party private-inference laboratory.
//!
//! The crate glues together four layers:
//!
//! * ring arithmetic and additive/XOR secret sharing over Z_{2^64}
//!   ([`ring`], [`group`], [`sharing`]),
//! * interactive two-party protocols with exact byte accounting
//!   ([`mpc`], [`transport`]),
//! * mask-adaptive model training that serves several density budgets from
//!   one weight set ([`nn`], [`masks`], [`train`], [`bundle`]),
//! * a byte-metered secure inference runtime and the analytic
//!   latency/communication/energy model it reconciles against
//!   ([`runtime`], [`cost`]).

pub mod bundle;
pub mod cost;
pub mod error;
pub mod group;
pub mod masks;
pub mod mpc;
pub mod nn;
pub mod prg;
pub mod ring;
pub mod runtime;
pub mod sharing;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
pub use ring::{ConvGeometry, FixedPointCodec, Ring64, RingTensor};
pub use sharing::{reconstruct, share, ArithmeticShare, BinaryShare};
pub use transport::{in_process_pair, Channel, InProcessChannel, MeterReport, TcpChannel};
