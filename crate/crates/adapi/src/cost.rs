//! Analytic latency, communication, energy and normalized-ReLU model, plus
//! reference measurements the calibrated mode reproduces.
//!
//! The two-party convolution operator is priced by its multiply-accumulate
//! work over a `PP`-wide datapath plus one masked-input exchange per
//! direction. The two-party ReLU operator is priced by the chunked-transfer
//! comparison flow: per element, 544 + 2592 + 2049 cycles of work and
//! 64 + 256 + 4 payload bytes, plus a 4-byte session mask.

use crate::error::Result;
use crate::nn::{MaskValues, Model, OpCounts};
use crate::ring::ConvGeometry;
use crate::runtime::InferenceTranscript;
use serde::{Deserialize, Serialize};

/// Cycles of comparison work per ReLU element: 32x17 for the blinded-point
/// batch, 32x(17 + 64) for the table generation, and 32x64 + 1 to decode.
pub const RELU_CMP_CYCLES_PER_ELEMENT: u64 = 32 * 17 + 32 * (17 + 4 * 16) + (32 * 4 * 16 + 1);

/// Transfer-flow payload bits per ReLU element (choices, tables, finalize).
pub const RELU_COMM_BITS_PER_ELEMENT: u64 = 512 + 2048 + 32;

/// Transfer-flow payload bytes per ReLU element.
pub const RELU_BYTES_PER_ELEMENT: u64 = RELU_COMM_BITS_PER_ELEMENT / 8;

/// Session-mask bits exchanged once per ReLU batch.
pub const RELU_SESSION_BITS: u64 = 32;

/// Bytes per exchanged operand in the convolution pricing (32-bit width).
pub const CONV_OPERAND_BYTES: u64 = 4;

/// Hardware/link parameters feeding the analytic model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Data units processed per cycle (load/store width over operand width).
    pub parallelism: f64,
    /// Kernel clock in Hz.
    pub freq_hz: f64,
    /// Effective link bandwidth in bytes per second.
    pub bandwidth: f64,
    /// Connection setup time per exchange, seconds.
    pub setup_seconds: f64,
    /// Average power draw for the energy estimate, watts.
    pub avg_power_watts: f64,
}

impl Default for DeviceProfile {
    /// 4-wide datapath at 200 MHz behind a 1 GB/s link; power fitted from the
    /// reference latency/energy ratios (about 9.1 W).
    fn default() -> Self {
        DeviceProfile {
            parallelism: 4.0,
            freq_hz: 2e8,
            bandwidth: 1e9,
            setup_seconds: 0.0,
            avg_power_watts: 9.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerCostKind {
    Conv,
    Relu,
}

/// Analytic cost of one operator invocation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LayerCost {
    pub kind: LayerCostKind,
    pub cmp_seconds: f64,
    pub comm_seconds: f64,
    pub bytes: u64,
}

impl LayerCost {
    pub fn latency(&self) -> f64 {
        self.cmp_seconds + self.comm_seconds
    }
}

/// Two-party convolution cost from raw counts: `macs` already reflects the
/// weight density, `input_volume` is the layer's input feature-element count.
pub fn conv_latency_from_counts(macs: u64, input_volume: u64, profile: &DeviceProfile) -> LayerCost {
    let cmp = 3.0 * macs as f64 / (profile.parallelism * profile.freq_hz);
    let transfer_bits = 32.0 * input_volume as f64;
    let comm_one_way = profile.setup_seconds + transfer_bits / (profile.bandwidth * 8.0);
    LayerCost {
        kind: LayerCostKind::Conv,
        cmp_seconds: cmp,
        comm_seconds: 2.0 * comm_one_way,
        bytes: 2 * CONV_OPERAND_BYTES * input_volume,
    }
}

/// Two-party convolution cost from geometry at a given weight density.
pub fn conv_latency(geom: &ConvGeometry, density: f64, profile: &DeviceProfile) -> LayerCost {
    let full_macs = (geom.kernel * geom.kernel * geom.out_h() * geom.out_w())
        as f64
        * (geom.in_channels * geom.out_channels) as f64;
    let input_volume = (geom.in_channels * geom.in_h * geom.in_w) as u64;
    let cmp = 3.0 * full_macs * density / (profile.parallelism * profile.freq_hz);
    let transfer_bits = 32.0 * input_volume as f64;
    let comm_one_way = profile.setup_seconds + transfer_bits / (profile.bandwidth * 8.0);
    LayerCost {
        kind: LayerCostKind::Conv,
        cmp_seconds: cmp,
        comm_seconds: 2.0 * comm_one_way,
        bytes: 2 * CONV_OPERAND_BYTES * input_volume,
    }
}

/// Two-party ReLU cost for `n` interactive elements.
pub fn relu_latency(n: u64, profile: &DeviceProfile) -> LayerCost {
    let cmp = RELU_CMP_CYCLES_PER_ELEMENT as f64 * n as f64
        / (profile.parallelism * profile.freq_hz);
    let bits = RELU_SESSION_BITS as f64 + RELU_COMM_BITS_PER_ELEMENT as f64 * n as f64;
    LayerCost {
        kind: LayerCostKind::Relu,
        cmp_seconds: cmp,
        comm_seconds: 4.0 * profile.setup_seconds + bits / (profile.bandwidth * 8.0),
        bytes: RELU_BYTES_PER_ELEMENT * n + RELU_SESSION_BITS / 8,
    }
}

/// Marginal latency of one additional ReLU element (no session constants).
pub fn relu_unit_latency(profile: &DeviceProfile) -> f64 {
    RELU_CMP_CYCLES_PER_ELEMENT as f64 / (profile.parallelism * profile.freq_hz)
        + RELU_COMM_BITS_PER_ELEMENT as f64 / (profile.bandwidth * 8.0)
}

/// Unified workload metric: interactive ReLU count plus the linear-layer
/// latency expressed in per-ReLU latency units. Session setup time is
/// excluded from both sides, so the metric is invariant under splitting a
/// layer into two with the same totals.
pub fn normalized_relu(counts: &OpCounts, profile: &DeviceProfile) -> f64 {
    let mut linear_latency = 0.0;
    for row in &counts.per_layer {
        if row.kind == "conv2d" || row.kind == "fully_connected" {
            let c = conv_latency_from_counts(row.macs, row.input_volume, profile);
            let transfer_only = c.comm_seconds - 2.0 * profile.setup_seconds;
            linear_latency += c.cmp_seconds + transfer_only;
        }
    }
    counts.total_relus() as f64 + linear_latency / relu_unit_latency(profile)
}

/// Affine communication calibration: `MB = bytes_per_relu * relus + offset`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CommCalibration {
    pub bytes_per_relu: f64,
    pub offset_mb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommVolumeMode {
    FirstPrinciples,
    Calibrated,
}

/// Least-squares fit of the affine volume model to `(relu_count, MB)` points.
pub fn fit_comm_calibration(points: &[(f64, f64)]) -> CommCalibration {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope_mb = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let offset = (sy - slope_mb * sx) / n;
    CommCalibration {
        bytes_per_relu: slope_mb * 1e6,
        offset_mb: offset,
    }
}

/// Megabytes (decimal) moved per inference under the chosen mode.
pub fn comm_volume(
    counts: &OpCounts,
    mode: CommVolumeMode,
    calibration: Option<&CommCalibration>,
) -> f64 {
    match mode {
        CommVolumeMode::FirstPrinciples => {
            let mut bytes = 0u64;
            for row in &counts.per_layer {
                match row.kind.as_str() {
                    "conv2d" | "fully_connected" => {
                        bytes += 2 * CONV_OPERAND_BYTES * row.input_volume;
                    }
                    "relu" => {
                        bytes += RELU_BYTES_PER_ELEMENT * row.relus + RELU_SESSION_BITS / 8;
                    }
                    _ => {}
                }
            }
            bytes as f64 / 1e6
        }
        CommVolumeMode::Calibrated => {
            let cal = calibration.expect("calibrated mode needs constants");
            (cal.bytes_per_relu * counts.total_relus() as f64) / 1e6 + cal.offset_mb
        }
    }
}

/// Energy from average power and latency.
pub fn energy_estimate(latency_seconds: f64, profile: &DeviceProfile) -> f64 {
    profile.avg_power_watts * latency_seconds
}

/// Full analytic latency of one inference at the given masked counts.
pub fn model_latency(counts: &OpCounts, profile: &DeviceProfile) -> f64 {
    let mut total = 0.0;
    for row in &counts.per_layer {
        match row.kind.as_str() {
            "conv2d" | "fully_connected" => {
                total += conv_latency_from_counts(row.macs, row.input_volume, profile).latency();
            }
            "relu" => total += relu_latency(row.relus, profile).latency(),
            _ => {}
        }
    }
    total
}

// ---------------------------------------------------------------------------
// per-level report with optional measured-traffic reconciliation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostRow {
    pub level: String,
    pub weight_density: f64,
    pub relu_density: f64,
    pub macs: u64,
    pub relus: u64,
    pub normalized_relu: f64,
    pub latency_seconds: f64,
    pub comm_mb_first_principles: f64,
    pub comm_mb_calibrated: Option<f64>,
    pub energy_joules: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reconciliation {
    pub level: String,
    /// Measured payload bytes per inference, by transcript family.
    pub measured_relu_ot_bytes: f64,
    pub measured_relu_signbit_bytes: f64,
    pub measured_conv_bytes: f64,
    /// Modeled first-principles bytes per inference.
    pub modeled_relu_bytes: f64,
    pub modeled_conv_bytes: f64,
    /// (measured relu-flow - modeled relu) / modeled relu, when defined.
    pub relu_relative_deviation: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostReport {
    pub profile: DeviceProfile,
    pub rows: Vec<CostRow>,
    pub reconciliation: Vec<Reconciliation>,
}

/// Build the per-level analytic report for a model and its mask family, and
/// reconcile against measured transcripts when given.
pub fn cost_report(
    model: &Model,
    levels: &[(String, f64, f64, MaskValues)],
    profile: &DeviceProfile,
    calibration: Option<&CommCalibration>,
    transcripts: &[(String, InferenceTranscript)],
) -> Result<CostReport> {
    let mut rows = Vec::new();
    let mut reconciliation = Vec::new();
    for (label, wd, rd, values) in levels {
        let counts = crate::nn::count_ops(model, Some(values))?;
        let latency = model_latency(&counts, profile);
        rows.push(CostRow {
            level: label.clone(),
            weight_density: *wd,
            relu_density: *rd,
            macs: counts.total_macs(),
            relus: counts.total_relus(),
            normalized_relu: normalized_relu(&counts, profile),
            latency_seconds: latency,
            comm_mb_first_principles: comm_volume(&counts, CommVolumeMode::FirstPrinciples, None),
            comm_mb_calibrated: calibration
                .map(|c| comm_volume(&counts, CommVolumeMode::Calibrated, Some(c))),
            energy_joules: energy_estimate(latency, profile),
        });
        if let Some((_, t)) = transcripts.iter().find(|(l, _)| l == label) {
            let inputs = t.inputs.max(1) as f64;
            let relu_layers: Vec<&crate::nn::LayerCount> = counts
                .per_layer
                .iter()
                .filter(|r| r.kind == "relu")
                .collect();
            let modeled_relu: f64 = relu_layers
                .iter()
                .map(|r| (RELU_BYTES_PER_ELEMENT * r.relus + RELU_SESSION_BITS / 8) as f64)
                .sum();
            let modeled_conv: f64 = counts
                .per_layer
                .iter()
                .filter(|r| r.kind == "conv2d" || r.kind == "fully_connected")
                .map(|r| (2 * CONV_OPERAND_BYTES * r.input_volume) as f64)
                .sum();
            let measured_ot = t.total_relu_ot_bytes() as f64 / inputs;
            reconciliation.push(Reconciliation {
                level: label.clone(),
                measured_relu_ot_bytes: measured_ot,
                measured_relu_signbit_bytes: t.total_relu_signbit_bytes() as f64 / inputs,
                measured_conv_bytes: t.total_conv_bytes() as f64 / inputs,
                modeled_relu_bytes: modeled_relu,
                modeled_conv_bytes: modeled_conv,
                relu_relative_deviation: (modeled_relu > 0.0)
                    .then(|| (measured_ot - modeled_relu) / modeled_relu),
            });
        }
    }
    Ok(CostReport {
        profile: *profile,
        rows,
        reconciliation,
    })
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "level,weight_density,relu_density,macs,relus,normalized_relu,latency_s,comm_mb_first_principles,comm_mb_calibrated,energy_j\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.level,
                r.weight_density,
                r.relu_density,
                r.macs,
                r.relus,
                r.normalized_relu,
                r.latency_seconds,
                r.comm_mb_first_principles,
                r.comm_mb_calibrated.map_or(String::new(), |v| v.to_string()),
                r.energy_joules
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// published reference rows used for calibration and cross-checks
// ---------------------------------------------------------------------------

/// Measured communication volumes for two residual architectures on two image
/// corpora at the four reference density levels.
#[derive(Clone, Copy, Debug)]
pub struct CommReferenceRow {
    pub arch: &'static str,
    pub dataset: &'static str,
    pub level: &'static str,
    pub relu_kilo: f64,
    pub density: f64,
    pub volume_mb: f64,
}

pub const COMM_REFERENCE: [CommReferenceRow; 16] = [
    CommReferenceRow { arch: "rn18", dataset: "c100", level: "L1", relu_kilo: 196.61, density: 0.40, volume_mb: 58.83 },
    CommReferenceRow { arch: "rn18", dataset: "c100", level: "L2", relu_kilo: 98.30, density: 0.20, volume_mb: 34.51 },
    CommReferenceRow { arch: "rn18", dataset: "c100", level: "L3", relu_kilo: 49.15, density: 0.10, volume_mb: 22.33 },
    CommReferenceRow { arch: "rn18", dataset: "c100", level: "L4", relu_kilo: 24.58, density: 0.05, volume_mb: 16.26 },
    CommReferenceRow { arch: "rn18", dataset: "tiny", level: "L1", relu_kilo: 786.43, density: 0.40, volume_mb: 235.31 },
    CommReferenceRow { arch: "rn18", dataset: "tiny", level: "L2", relu_kilo: 393.22, density: 0.20, volume_mb: 138.00 },
    CommReferenceRow { arch: "rn18", dataset: "tiny", level: "L3", relu_kilo: 196.61, density: 0.10, volume_mb: 89.35 },
    CommReferenceRow { arch: "rn18", dataset: "tiny", level: "L4", relu_kilo: 98.30, density: 0.05, volume_mb: 65.02 },
    CommReferenceRow { arch: "wrn22", dataset: "c100", level: "L1", relu_kilo: 543.95, density: 0.40, volume_mb: 154.18 },
    CommReferenceRow { arch: "wrn22", dataset: "c100", level: "L2", relu_kilo: 271.97, density: 0.20, volume_mb: 86.86 },
    CommReferenceRow { arch: "wrn22", dataset: "c100", level: "L3", relu_kilo: 135.99, density: 0.10, volume_mb: 53.21 },
    CommReferenceRow { arch: "wrn22", dataset: "c100", level: "L4", relu_kilo: 67.99, density: 0.05, volume_mb: 36.38 },
    CommReferenceRow { arch: "wrn22", dataset: "tiny", level: "L1", relu_kilo: 2175.80, density: 0.40, volume_mb: 616.66 },
    CommReferenceRow { arch: "wrn22", dataset: "tiny", level: "L2", relu_kilo: 1087.90, density: 0.20, volume_mb: 347.43 },
    CommReferenceRow { arch: "wrn22", dataset: "tiny", level: "L3", relu_kilo: 543.95, density: 0.10, volume_mb: 212.80 },
    CommReferenceRow { arch: "wrn22", dataset: "tiny", level: "L4", relu_kilo: 271.97, density: 0.05, volume_mb: 145.48 },
];

/// Reference per-level workload/latency/energy rows for the same two
/// architectures on the 100-class corpus.
#[derive(Clone, Copy, Debug)]
pub struct PerfReferenceRow {
    pub arch: &'static str,
    pub level: &'static str,
    pub macs_m: f64,
    pub normalized_relu_kilo: f64,
    pub latency_s: f64,
    pub energy_j: f64,
}

pub const PERF_REFERENCE_C100: [PerfReferenceRow; 8] = [
    PerfReferenceRow { arch: "rn18", level: "L1", macs_m: 285.3, normalized_relu_kilo: 220.54, latency_s: 0.56, energy_j: 5.1 },
    PerfReferenceRow { arch: "rn18", level: "L2", macs_m: 167.0, normalized_relu_kilo: 112.32, latency_s: 0.33, energy_j: 3.0 },
    PerfReferenceRow { arch: "rn18", level: "L3", macs_m: 92.1, normalized_relu_kilo: 56.83, latency_s: 0.22, energy_j: 2.0 },
    PerfReferenceRow { arch: "rn18", level: "L4", macs_m: 52.9, normalized_relu_kilo: 29.01, latency_s: 0.16, energy_j: 1.4 },
    PerfReferenceRow { arch: "wrn22", level: "L1", macs_m: 1042.0, normalized_relu_kilo: 581.9, latency_s: 1.41, energy_j: 12.7 },
    PerfReferenceRow { arch: "wrn22", level: "L2", macs_m: 549.7, normalized_relu_kilo: 292.0, latency_s: 0.80, energy_j: 7.2 },
    PerfReferenceRow { arch: "wrn22", level: "L3", macs_m: 287.2, normalized_relu_kilo: 146.4, latency_s: 0.50, energy_j: 4.5 },
    PerfReferenceRow { arch: "wrn22", level: "L4", macs_m: 152.5, normalized_relu_kilo: 73.54, latency_s: 0.35, energy_j: 3.1 },
];

/// ReLU counts (thousands) per architecture/level on the 100-class corpus,
/// taken from the communication reference; used to derive the implied
/// MACs-per-ReLU conversion factor of the published normalized counts.
pub fn reference_relu_kilo(arch: &'static str, level: &str) -> Option<f64> {
    COMM_REFERENCE
        .iter()
        .find(|r| r.arch == arch && r.dataset == "c100" && r.level == level)
        .map(|r| r.relu_kilo)
}

/// Calibration fitted over all published volume rows: a shared slope around
/// 247.5 bytes per ReLU with per-corpus offsets.
pub fn reference_calibrations() -> Vec<((&'static str, &'static str), CommCalibration)> {
    let mut out = Vec::new();
    for arch in ["rn18", "wrn22"] {
        for dataset in ["c100", "tiny"] {
            let points: Vec<(f64, f64)> = COMM_REFERENCE
                .iter()
                .filter(|r| r.arch == arch && r.dataset == dataset)
                .map(|r| (r.relu_kilo * 1e3, r.volume_mb))
                .collect();
            out.push(((arch, dataset), fit_comm_calibration(&points)));
        }
    }
    out
}
