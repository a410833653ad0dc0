//! Two-party inference of a deployed bundle: secret-shared convolutions,
//! masked ReLU with public feature masks, and byte-metered transcripts.
//!
//! Masks are public deployment metadata; weights, inputs and every
//! intermediate activation stay secret-shared. Mask-0 ReLU positions pass
//! through locally and exchange nothing; mask-0 weights are zero-valued in
//! both halves and never travel.

use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::group::GroupParams;
use crate::masks::BinaryMask;
use crate::mpc::ot::{
    ot_batch_receive, ot_batch_send, OtSession, CHUNKS_PER_ELEMENT, INDEX_LENGTH,
};
use crate::mpc::{drelu, secure_mul, TripleKind, TripleSource};
use crate::nn::{Layer, LayerSpecDef, MaskValues, Model, Tensor};
use crate::prg::session_rng;
use crate::ring::{ConvGeometry, FixedPointCodec, Ring64, RingTensor};
use crate::sharing::{share, truncate_share, ArithmeticShare};
use crate::transport::{Channel, MeterReport};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

pub const SERVER: usize = 0;
pub const CLIENT: usize = 1;

/// How the interactive comparison inside ReLU is executed and accounted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonMode {
    /// Binary-conversion sign-bit pipeline only (functional default).
    SignBit,
    /// Additionally run the chunked-transfer flow with its exact wire sizes;
    /// the transfer carries masked per-chunk comparison tables while the
    /// sign-bit pipeline stays authoritative for the bit itself.
    OtPriced,
}

/// One party's installed package: public architecture and masks, private
/// weight shares.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeployedShare {
    pub party_id: usize,
    pub level: String,
    pub codec: FixedPointCodec,
    pub architecture_digest: u64,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpecDef>,
    pub weight_masks: Vec<BinaryMask>,
    pub feature_masks: Vec<BinaryMask>,
    pub weight_shares: Vec<RingTensor>,
    pub bias_shares: Vec<RingTensor>,
}

/// Secret-share the masked weights of one level into two installable packages.
/// Pruned weight positions are zero in both halves, so they reconstruct to
/// exactly zero and never appear on the wire.
pub fn deploy(bundle: &ModelBundle, level: &str) -> Result<(DeployedShare, DeployedShare)> {
    bundle.validate()?;
    let masks = bundle
        .family
        .level(level)
        .ok_or_else(|| Error::Config(format!("unknown density level {level}")))?;
    let codec = bundle.codec;
    let mut rng = session_rng(bundle.seed, 0, &format!("deploy-{level}"));
    let mut w0 = Vec::new();
    let mut w1 = Vec::new();
    let mut b0 = Vec::new();
    let mut b1 = Vec::new();
    for (wi, &l) in bundle.model.weight_layers().iter().enumerate() {
        let weight = bundle.model.layers[l].weight().unwrap();
        let mask = &masks.weight[wi];
        let masked = weight.mul(&mask.to_values());
        let encoded = codec.encode_tensor(&masked.data, &masked.shape)?;
        // share only the kept positions; pruned stay (0, 0)
        let mut half0 = RingTensor::zeros(encoded.shape.clone());
        let mut half1 = RingTensor::zeros(encoded.shape.clone());
        for (i, &bit) in mask.bits.iter().enumerate() {
            if bit != 0 {
                let r = Ring64(rng.gen());
                half0.data[i] = r;
                half1.data[i] = encoded.data[i] - r;
            }
        }
        w0.push(half0);
        w1.push(half1);

        let bias = bundle.model.layers[l].bias().unwrap();
        let encoded_bias = codec.encode_tensor(&bias.data, &bias.shape)?;
        let (s0, s1) = share(&encoded_bias, &mut rng);
        b0.push(s0.data);
        b1.push(s1.data);
    }
    let make = |party_id: usize, ws: Vec<RingTensor>, bs: Vec<RingTensor>| DeployedShare {
        party_id,
        level: level.to_string(),
        codec,
        architecture_digest: bundle.model.architecture_digest(),
        input_shape: bundle.model.input_shape.clone(),
        classes: bundle.model.classes,
        layers: bundle.model.spec_defs(),
        weight_masks: masks.weight.clone(),
        feature_masks: masks.feature.clone(),
        weight_shares: ws,
        bias_shares: bs,
    };
    Ok((make(SERVER, w0, b0), make(CLIENT, w1, b1)))
}

impl DeployedShare {
    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_vec(self)?)?)
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<DeployedShare> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Per-layer traffic of one session, split by protocol step family.
/// Bytes are payload bytes summed over both directions.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LayerTraffic {
    pub layer_index: usize,
    pub kind: String,
    pub masked_relu_elements: u64,
    pub conv_bytes: u64,
    pub relu_signbit_bytes: u64,
    pub relu_ot_bytes: u64,
    pub rounds: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct InferenceTranscript {
    pub comparison_mode: String,
    pub inputs: u64,
    pub per_layer: Vec<LayerTraffic>,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub total_frame_bytes: u64,
    pub wall_seconds: f64,
}

impl InferenceTranscript {
    pub fn total_relu_ot_bytes(&self) -> u64 {
        self.per_layer.iter().map(|l| l.relu_ot_bytes).sum()
    }

    pub fn total_relu_signbit_bytes(&self) -> u64 {
        self.per_layer.iter().map(|l| l.relu_signbit_bytes).sum()
    }

    pub fn total_conv_bytes(&self) -> u64 {
        self.per_layer.iter().map(|l| l.conv_bytes).sum()
    }
}

fn tag_payload_both_ways(delta: &MeterReport, prefix: &str) -> u64 {
    delta.sent_payload_for_prefix(prefix) + delta.received_payload_for_prefix(prefix)
}

/// Driver for one party of an inference session.
pub struct SecureRuntime<'a, C: Channel, T: TripleSource> {
    pub share: &'a DeployedShare,
    channel: &'a mut C,
    triples: &'a mut T,
    rng: ChaCha20Rng,
    mode: ComparisonMode,
    ot_params: Arc<GroupParams>,
    transcript: InferenceTranscript,
}

impl<'a, C: Channel, T: TripleSource> SecureRuntime<'a, C, T> {
    pub fn new(
        share: &'a DeployedShare,
        channel: &'a mut C,
        triples: &'a mut T,
        session_seed: u64,
        mode: ComparisonMode,
    ) -> Result<SecureRuntime<'a, C, T>> {
        if share.party_id != channel.party_id() {
            return Err(Error::PartyMismatch(
                "package party does not match channel endpoint".into(),
            ));
        }
        let rng = session_rng(session_seed, share.party_id as u64, "runtime");
        Ok(SecureRuntime {
            share,
            channel,
            triples,
            rng,
            mode,
            ot_params: GroupParams::wire32(),
            transcript: InferenceTranscript {
                comparison_mode: match mode {
                    ComparisonMode::SignBit => "sign-bit".into(),
                    ComparisonMode::OtPriced => "ot-priced".into(),
                },
                ..Default::default()
            },
        })
    }

    /// Agree on architecture digest, level, codec and comparison mode.
    pub fn handshake(&mut self) -> Result<()> {
        let mut hello = Vec::new();
        hello.extend_from_slice(&self.share.architecture_digest.to_le_bytes());
        hello.extend_from_slice(&self.share.codec.frac_bits.to_le_bytes());
        hello.push(match self.mode {
            ComparisonMode::SignBit => 0,
            ComparisonMode::OtPriced => 1,
        });
        hello.extend_from_slice(self.share.level.as_bytes());
        let theirs = crate::transport::exchange(self.channel, "hello", &hello)?;
        if theirs != hello {
            return Err(Error::Protocol(
                "handshake digest/level/mode mismatch: aborting session".into(),
            ));
        }
        Ok(())
    }

    /// Run one input through the network. The client supplies the plaintext
    /// input (it owns the data); the server passes `None`. Both parties learn
    /// the logits when the output shares are opened at the end.
    pub fn infer(&mut self, input: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.infer_detailed(input)?.0)
    }

    /// Like [`Self::infer`], additionally returning this party's share of
    /// every layer output — a diagnostic surface for checking the secure
    /// pipeline against a plaintext reference layer by layer.
    pub fn infer_detailed(&mut self, input: Option<&Tensor>) -> Result<(Tensor, Vec<RingTensor>)> {
        let started = Instant::now();
        let before_total = self.channel.meter().snapshot();

        // input sharing: the client splits its encoded input and ships the
        // server half
        let snap = self.channel.meter().snapshot();
        let mut act = if self.share.party_id == CLIENT {
            let x = input.ok_or_else(|| Error::Config("client must supply the input".into()))?;
            if x.shape != self.share.input_shape {
                return Err(Error::ShapeMismatch {
                    expected: self.share.input_shape.clone(),
                    got: x.shape.clone(),
                });
            }
            let encoded = self.share.codec.encode_tensor(&x.data, &x.shape)?;
            let (server_half, client_half) = share(&encoded, &mut self.rng);
            self.channel
                .send("input", &server_half.data.to_le_bytes())?;
            client_half.data
        } else {
            if input.is_some() {
                return Err(Error::Config("server does not hold the input".into()));
            }
            let raw = self.channel.recv("input")?;
            RingTensor::from_le_bytes(self.share.input_shape.clone(), &raw)?
        };
        self.transcript.input_bytes += tag_payload_both_ways(
            &self.channel.meter().snapshot().delta_since(&snap),
            "input",
        );

        if self.transcript.per_layer.is_empty() {
            self.transcript.per_layer = self
                .share
                .layers
                .iter()
                .enumerate()
                .map(|(i, def)| LayerTraffic {
                    layer_index: i,
                    kind: match def {
                        LayerSpecDef::Conv2d { .. } => "conv2d".into(),
                        LayerSpecDef::FullyConnected { .. } => "fully_connected".into(),
                        LayerSpecDef::Relu => "relu".into(),
                        LayerSpecDef::AvgPool { .. } => "avgpool".into(),
                        LayerSpecDef::Flatten => "flatten".into(),
                    },
                    ..Default::default()
                })
                .collect();
        }

        let mut layer_shares = Vec::with_capacity(self.share.layers.len());
        let mut weight_idx = 0usize;
        let mut relu_idx = 0usize;
        for (li, def) in self.share.layers.iter().enumerate() {
            let before = self.channel.meter().snapshot();
            act = match def {
                LayerSpecDef::Conv2d { geom } => {
                    let out = self.secure_conv(&act, *geom, weight_idx)?;
                    weight_idx += 1;
                    out
                }
                LayerSpecDef::FullyConnected { inputs, outputs } => {
                    let out = self.secure_fc(&act, *inputs, *outputs, weight_idx)?;
                    weight_idx += 1;
                    out
                }
                LayerSpecDef::Relu => {
                    let mask = self.share.feature_masks[relu_idx].clone();
                    let out = self.secure_masked_relu(&act, &mask)?;
                    relu_idx += 1;
                    out
                }
                LayerSpecDef::AvgPool { k } => self.local_avgpool(&act, *k)?,
                LayerSpecDef::Flatten => {
                    RingTensor::new(vec![act.len()], act.data.clone())
                }
            };
            let delta = self.channel.meter().snapshot().delta_since(&before);
            let row = &mut self.transcript.per_layer[li];
            row.conv_bytes += tag_payload_both_ways(&delta, "conv");
            row.relu_signbit_bytes += tag_payload_both_ways(&delta, "relu-sb");
            row.relu_ot_bytes += tag_payload_both_ways(&delta, "relu-ot");
            row.rounds += delta.round_trips;
            layer_shares.push(act.clone());
        }

        // open the logits
        let snap = self.channel.meter().snapshot();
        let theirs = crate::transport::exchange(self.channel, "output", &act.to_le_bytes())?;
        let their_share = RingTensor::from_le_bytes(act.shape.clone(), &theirs)?;
        self.transcript.output_bytes += tag_payload_both_ways(
            &self.channel.meter().snapshot().delta_since(&snap),
            "output",
        );
        let opened = act.add(&their_share)?;
        let logits = Tensor::new(
            opened.shape.clone(),
            self.share.codec.decode_tensor(&opened),
        );

        self.transcript.inputs += 1;
        self.transcript.wall_seconds += started.elapsed().as_secs_f64();
        let after_total = self.channel.meter().snapshot().delta_since(&before_total);
        self.transcript.total_frame_bytes += after_total.sent_bytes + after_total.received_bytes;
        Ok((logits, layer_shares))
    }

    pub fn transcript(&self) -> &InferenceTranscript {
        &self.transcript
    }

    fn my_share(&self, data: RingTensor) -> ArithmeticShare {
        ArithmeticShare {
            party_id: self.share.party_id,
            data,
        }
    }

    fn secure_conv(
        &mut self,
        input: &RingTensor,
        geom: ConvGeometry,
        weight_idx: usize,
    ) -> Result<RingTensor> {
        let mask = &self.share.weight_masks[weight_idx];
        let kind = TripleKind::Conv {
            geom,
            kernel_support: Some(mask.bits.clone()),
        };
        let mut triple = self.triples.beaver(&kind)?;
        let x = self.my_share(input.clone());
        let w = self.my_share(self.share.weight_shares[weight_idx].clone());
        let raw = secure_mul::<C, T>(&x, &w, &mut triple, self.channel, "conv")?;
        // rescale and add the bias share per output channel
        let mut out = truncate_share(&raw.data, self.share.codec.frac_bits, self.share.party_id);
        let bias = &self.share.bias_shares[weight_idx];
        let (oh, ow) = (geom.out_h(), geom.out_w());
        for oc in 0..geom.out_channels {
            for i in 0..oh * ow {
                out.data[oc * oh * ow + i] += bias.data[oc];
            }
        }
        Ok(out)
    }

    fn secure_fc(
        &mut self,
        input: &RingTensor,
        inputs: usize,
        outputs: usize,
        weight_idx: usize,
    ) -> Result<RingTensor> {
        let mask = &self.share.weight_masks[weight_idx];
        let kind = TripleKind::MatMul {
            m: outputs,
            k: inputs,
            n: 1,
            lhs_support: Some(mask.bits.clone()),
        };
        let mut triple = self.triples.beaver(&kind)?;
        let w = self.my_share(self.share.weight_shares[weight_idx].clone());
        let x = self.my_share(RingTensor::new(vec![inputs, 1], input.data.clone()));
        let raw = secure_mul::<C, T>(&w, &x, &mut triple, self.channel, "conv")?;
        let mut out = truncate_share(&raw.data, self.share.codec.frac_bits, self.share.party_id);
        out.shape = vec![outputs];
        let bias = &self.share.bias_shares[weight_idx];
        for o in 0..outputs {
            out.data[o] += bias.data[o];
        }
        Ok(out)
    }

    /// Masked ReLU: gather the masked-in positions, run the interactive
    /// comparison pipeline on the packed vector, multiply, and scatter back.
    /// Masked-out positions pass through without any message.
    fn secure_masked_relu(&mut self, z: &RingTensor, mask: &BinaryMask) -> Result<RingTensor> {
        if mask.bits.len() != z.len() {
            return Err(Error::ShapeMismatch {
                expected: z.shape.clone(),
                got: mask.shape.clone(),
            });
        }
        let kept: Vec<usize> = (0..z.len()).filter(|&i| mask.bits[i] != 0).collect();
        let mut out = z.clone();
        if kept.is_empty() {
            return Ok(out);
        }
        let packed = RingTensor::new(
            vec![kept.len()],
            kept.iter().map(|&i| z.data[i]).collect(),
        );
        let packed_share = self.my_share(packed.clone());

        if self.mode == ComparisonMode::OtPriced {
            self.run_priced_comparison_flow(&packed)?;
        }

        let bit = drelu(
            &packed_share,
            self.channel,
            self.triples,
            &mut self.rng,
            "relu-sb",
        )?;
        let kind = TripleKind::elementwise(&[kept.len()]);
        let mut triple = self.triples.beaver(&kind)?;
        let relu = secure_mul::<C, T>(&bit, &packed_share, &mut triple, self.channel, "relu-sb")?;
        for (j, &i) in kept.iter().enumerate() {
            out.data[i] = relu.data.data[j];
        }
        Ok(out)
    }

    /// The chunked-transfer comparison flow at its published wire widths:
    /// 4-byte session mask, 16 blinded points up, 4x16 masked table entries
    /// down, one 4-byte fold per element back. Entries carry the sender's
    /// masked per-chunk greater/equal table over the parties' 32-bit share
    /// words; the sign-bit pipeline remains authoritative for the bit.
    fn run_priced_comparison_flow(&mut self, packed: &RingTensor) -> Result<()> {
        if self.share.party_id == SERVER {
            let session = OtSession::establish_sender(
                &self.ot_params,
                self.channel,
                &mut self.rng,
                "relu-ot1",
            )?;
            let tables: Vec<Vec<[u8; 4]>> = packed
                .data
                .iter()
                .map(|v| {
                    let word = v.0 as u32;
                    let mut table = vec![[0u8; 4]; INDEX_LENGTH * CHUNKS_PER_ELEMENT];
                    for u in 0..CHUNKS_PER_ELEMENT {
                        let mine = (word >> (u * 2)) & 0b11;
                        for j in 0..INDEX_LENGTH {
                            let gt = (mine > j as u32) as u8;
                            let eq = (mine == j as u32) as u8;
                            let mask: u32 = self.rng.gen();
                            let body = (gt as u32 | (eq as u32) << 1) ^ mask;
                            table[j * CHUNKS_PER_ELEMENT + u] = body.to_le_bytes();
                        }
                    }
                    table
                })
                .collect();
            ot_batch_send(&session, &tables, self.channel, "relu-ot")?;
        } else {
            let session = OtSession::establish_receiver(&self.ot_params, self.channel, "relu-ot1")?;
            let values: Vec<u32> = packed.data.iter().map(|v| v.0 as u32).collect();
            ot_batch_receive(&session, &values, self.channel, &mut self.rng, "relu-ot")?;
        }
        Ok(())
    }

    fn local_avgpool(&mut self, x: &RingTensor, k: usize) -> Result<RingTensor> {
        let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let (ph, pw) = (h / k, w / k);
        let inv = self.share.codec.encode(1.0 / (k * k) as f64)?;
        let mut out = RingTensor::zeros(vec![c, ph, pw]);
        for ci in 0..c {
            for i in 0..ph {
                for j in 0..pw {
                    let mut acc = Ring64::ZERO;
                    for di in 0..k {
                        for dj in 0..k {
                            acc += x.data[(ci * h + i * k + di) * w + j * k + dj];
                        }
                    }
                    out.data[(ci * ph + i) * pw + j] = acc * inv;
                }
            }
        }
        Ok(truncate_share(&out, self.share.codec.frac_bits, self.share.party_id))
    }
}

// ---------------------------------------------------------------------------
// plaintext fixed-point reference pipeline and its analytic error bound
// ---------------------------------------------------------------------------

/// Plaintext mirror of the secure pipeline: identical ring arithmetic and
/// truncations, but on reconstructed values (no share-carry noise).
pub fn plaintext_fixed_forward(
    model: &Model,
    masks: &MaskValues,
    codec: &FixedPointCodec,
    input: &Tensor,
) -> Result<Vec<RingTensor>> {
    let mut act = codec.encode_tensor(&input.data, &input.shape)?;
    let mut outputs = Vec::new();
    let mut weight_idx = 0usize;
    let mut relu_idx = 0usize;
    for layer in &model.layers {
        act = match layer {
            Layer::Conv2d { geom, weight, bias } => {
                let masked = weight.mul(&masks.weight[weight_idx]);
                let w = codec.encode_tensor(&masked.data, &masked.shape)?;
                let b = codec.encode_tensor(&bias.data, &bias.shape)?;
                weight_idx += 1;
                let raw = act.conv2d(&w, geom)?;
                let mut out = raw.shift_right(codec.frac_bits);
                let (oh, ow) = (geom.out_h(), geom.out_w());
                for oc in 0..geom.out_channels {
                    for i in 0..oh * ow {
                        out.data[oc * oh * ow + i] += b.data[oc];
                    }
                }
                out
            }
            Layer::FullyConnected { weight, bias } => {
                let masked = weight.mul(&masks.weight[weight_idx]);
                let w = codec.encode_tensor(&masked.data, &masked.shape)?;
                let b = codec.encode_tensor(&bias.data, &bias.shape)?;
                weight_idx += 1;
                let x2 = RingTensor::new(vec![act.len(), 1], act.data.clone());
                let raw = w.matmul(&x2)?;
                let mut out = raw.shift_right(codec.frac_bits);
                out.shape = vec![weight.shape[0]];
                for o in 0..out.len() {
                    out.data[o] += b.data[o];
                }
                out
            }
            Layer::Relu => {
                let mask = &masks.feature[relu_idx];
                relu_idx += 1;
                RingTensor::new(
                    act.shape.clone(),
                    act.data
                        .iter()
                        .zip(&mask.data)
                        .map(|(&v, &m)| {
                            if m != 0.0 {
                                if v.as_signed() > 0 {
                                    v
                                } else {
                                    Ring64::ZERO
                                }
                            } else {
                                v
                            }
                        })
                        .collect(),
                )
            }
            Layer::AvgPool { k } => {
                let (c, h, w) = (act.shape[0], act.shape[1], act.shape[2]);
                let (ph, pw) = (h / k, w / k);
                let inv = codec.encode(1.0 / ((k * k) as f64))?;
                let mut out = RingTensor::zeros(vec![c, ph, pw]);
                for ci in 0..c {
                    for i in 0..ph {
                        for j in 0..pw {
                            let mut acc = Ring64::ZERO;
                            for di in 0..*k {
                                for dj in 0..*k {
                                    acc += act.data[(ci * h + i * k + di) * w + j * k + dj];
                                }
                            }
                            out.data[(ci * ph + i) * pw + j] =
                                (acc * inv).shift_right(codec.frac_bits);
                        }
                    }
                }
                out
            }
            Layer::Flatten => RingTensor::new(vec![act.len()], act.data.clone()),
        };
        outputs.push(act.clone());
    }
    Ok(outputs)
}

/// Analytic bound on |secure - plaintext-fixed| per layer output, in decoded
/// units. Each truncation contributes one least-significant bit, amplified by
/// the operator norms of the layers downstream of it.
pub fn truncation_error_bound(
    model: &Model,
    masks: &MaskValues,
    codec: &FixedPointCodec,
) -> Result<Vec<f64>> {
    let lsb = codec.lsb();
    let mut bound = 0.0f64;
    let mut bounds = Vec::new();
    let mut weight_idx = 0usize;
    for layer in &model.layers {
        bound = match layer {
            Layer::Conv2d { geom, weight, .. } => {
                let masked = weight.mul(&masks.weight[weight_idx]);
                weight_idx += 1;
                let lip = conv_l1_max(&masked, geom);
                lip * bound + lsb
            }
            Layer::FullyConnected { weight, .. } => {
                let masked = weight.mul(&masks.weight[weight_idx]);
                weight_idx += 1;
                let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
                let mut lip = 0.0f64;
                for o in 0..out_dim {
                    let row: f64 = (0..in_dim)
                        .map(|i| masked.data[o * in_dim + i].abs())
                        .sum();
                    lip = lip.max(row);
                }
                lip * bound + lsb
            }
            Layer::Relu => bound,
            Layer::AvgPool { k } => {
                // the encoded 1/k^2 can exceed the exact value by half an LSB
                let scale = (*k * *k) as f64 * (1.0 / ((*k * *k) as f64) + 0.5 * lsb);
                scale * bound + lsb
            }
            Layer::Flatten => bound,
        };
        bounds.push(bound);
    }
    Ok(bounds)
}

fn conv_l1_max(masked_kernel: &Tensor, geom: &ConvGeometry) -> f64 {
    // max over output channels of the kernel's absolute sum: an upper bound on
    // the max-norm amplification of any output element
    let per_oc = geom.in_channels * geom.kernel * geom.kernel;
    let mut lip = 0.0f64;
    for oc in 0..geom.out_channels {
        let s: f64 = (0..per_oc)
            .map(|i| masked_kernel.data[oc * per_oc + i].abs())
            .sum();
        lip = lip.max(s);
    }
    lip
}
