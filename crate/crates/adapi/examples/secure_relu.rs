//! Minimal two-party walkthrough: share a vector, multiply securely, apply a
//! secure ReLU, and show the metered traffic.
//!
//! Run with `cargo run -p adapi --example secure_relu`.

use adapi::mpc::{secure_mul_fixed, secure_relu, TripleKind, TripleSource, TrustedDealer};
use adapi::prg::session_rng;
use adapi::ring::FixedPointCodec;
use adapi::sharing::{open, share};
use adapi::transport::{in_process_pair, Channel};
use std::thread;

fn main() -> adapi::Result<()> {
    let codec = FixedPointCodec::default();
    let xs = [1.5, -2.25, 0.0, 3.0];
    let ys = [2.0, 4.0, -1.0, -0.5];

    let x_plain = codec.encode_tensor(&xs, &[4])?;
    let y_plain = codec.encode_tensor(&ys, &[4])?;
    let mut rng = session_rng(7, 0, "example-shares");
    let (x0, x1) = share(&x_plain, &mut rng);
    let (y0, y1) = share(&y_plain, &mut rng);

    let (mut ch0, mut ch1) = in_process_pair();
    let party0 = thread::spawn(move || -> adapi::Result<_> {
        let mut dealer = TrustedDealer::new(42, 0);
        let mut prg = session_rng(7, 0, "example-runtime");
        let kind = TripleKind::elementwise(&[4]);
        let mut triple = dealer.beaver(&kind)?;
        let product = secure_mul_fixed::<_, TrustedDealer>(
            &x0, &y0, &mut triple, &codec, &mut ch0, "mul",
        )?;
        let relu = secure_relu(&product, &mut ch0, &mut dealer, &mut prg, "relu")?;
        Ok((product, relu, ch0.meter().snapshot()))
    });

    let mut dealer = TrustedDealer::new(42, 1);
    let mut prg = session_rng(7, 1, "example-runtime");
    let kind = TripleKind::elementwise(&[4]);
    let mut triple = dealer.beaver(&kind)?;
    let product1 =
        secure_mul_fixed::<_, TrustedDealer>(&x1, &y1, &mut triple, &codec, &mut ch1, "mul")?;
    let relu1 = secure_relu(&product1, &mut ch1, &mut dealer, &mut prg, "relu")?;

    let (product0, relu0, meter) = party0.join().unwrap()?;
    let products = codec.decode_tensor(&open(&product0, &product1)?);
    let relus = codec.decode_tensor(&open(&relu0, &relu1)?);

    println!("x            {xs:?}");
    println!("y            {ys:?}");
    println!("x*y          {products:?}");
    println!("relu(x*y)    {relus:?}");
    println!(
        "party 0 sent {} bytes over {} round trips",
        meter.sent_bytes, meter.round_trips
    );
    Ok(())
}
