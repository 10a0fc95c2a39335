//! Peak power, run energy and the effective-throughput objective.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::PodConfig;
use crate::error::{Error, Result};
use crate::interconnect::{cost_model, InterconnectConfig};

/// Multipliers applied to first-principles peak power. These are fitted,
/// once, so that a 256-pod 32x32 Butterfly-2 design reproduces the measured
/// component shares (arrays 37.64 %, SRAM 45.81 %, interconnect 15.06 %,
/// post-processors 0.56 %, remainder 0.93 %) with the array term held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub arrays: f64,
    pub sram: f64,
    pub interconnect: f64,
    pub post_processors: f64,
    pub other: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            arrays: 1.0,
            sram: 0.961_624_749,
            interconnect: 1.641_461_620,
            post_processors: 1.0,
            other: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub mac_pj: f64,
    pub sram_pj_per_byte: f64,
    /// Energy of one post-processor element operation (fitted).
    pub post_op_pj: f64,
    /// Control and buffer power per 32x32 pod, scaled with `rows + cols` (fitted).
    pub other_mw_per_pod: f64,
    /// Overrides the topology's power-per-byte table when set.
    pub interconnect_mw_per_byte: Option<f64>,
    pub clock_hz: f64,
    pub tdp_w: f64,
    pub calibration: Calibration,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            mac_pj: 0.4,
            sram_pj_per_byte: 2.7,
            post_op_pj: 0.190_435_707,
            other_mw_per_pod: 10.120_297_556,
            interconnect_mw_per_byte: None,
            clock_hz: 1e9,
            tdp_w: 400.0,
            calibration: Calibration::default(),
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let c = &self.calibration;
        let all = [
            self.mac_pj,
            self.sram_pj_per_byte,
            self.post_op_pj,
            self.other_mw_per_pod,
            self.clock_hz,
            self.tdp_w,
            c.arrays,
            c.sram,
            c.interconnect,
            c.post_processors,
            c.other,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::config("energy parameters must be positive and finite"));
        }
        if let Some(v) = self.interconnect_mw_per_byte {
            if v.is_nan() || v < 0.0 {
                return Err(Error::config("interconnect power per byte must be non-negative"));
            }
        }
        Ok(())
    }

    /// Parses a (possibly partial) JSON override; missing fields keep defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let p: EnergyParams = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn mw_per_byte(&self, nets: &InterconnectConfig) -> f64 {
        self.interconnect_mw_per_byte
            .unwrap_or_else(|| cost_model(nets).power_per_byte_mw)
    }

    /// Interconnect energy per byte moved, in pJ.
    pub fn interconnect_pj_per_byte(&self, nets: &InterconnectConfig) -> f64 {
        self.mw_per_byte(nets) * 1e9 / self.clock_hz
    }
}

/// Watts per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub arrays: f64,
    pub sram: f64,
    pub interconnect: f64,
    pub post_processors: f64,
    pub other: f64,
    pub total: f64,
}

/// Peak operations per second (1 MAC = 2 ops).
pub fn peak_throughput(pods: &PodConfig) -> f64 {
    2.0 * (pods.rows * pods.cols * pods.pods) as f64 * pods.clock_hz
}

/// Peak power with every pod, bank and link at full activity. `nets`
/// supplies the topology; its port count should equal the pod count.
pub fn peak_power(pods: &PodConfig, banks: usize, nets: &InterconnectConfig, params: &EnergyParams) -> PowerBreakdown {
    if pods.pods == 0 {
        return PowerBreakdown::default();
    }
    let f = params.clock_hz;
    let cal = &params.calibration;
    let p = pods.pods as f64;
    let bytes_per_cycle = (pods.pods as u64 * pods.peak_bank_bytes_per_cycle()) as f64;
    // banks = pods by construction; bandwidth is bounded by the pod side
    let _ = banks;
    let arrays = p * (pods.rows * pods.cols) as f64 * params.mac_pj * 1e-12 * f * cal.arrays;
    let sram = bytes_per_cycle * params.sram_pj_per_byte * 1e-12 * f * cal.sram;
    let interconnect = params.mw_per_byte(nets) * 1e-3 * bytes_per_cycle * cal.interconnect;
    let post_processors = pods.post_processors() as f64 * pods.cols as f64 * params.post_op_pj * 1e-12 * f * cal.post_processors;
    let other = p * params.other_mw_per_pod * 1e-3 * (pods.rows + pods.cols) as f64 / 64.0 * cal.other;
    PowerBreakdown {
        arrays,
        sram,
        interconnect,
        post_processors,
        other,
        total: arrays + sram + interconnect + post_processors + other,
    }
}

/// Largest power-of-two pod count whose peak power stays below `tdp_w`.
pub fn pods_for_tdp(rows: usize, cols: usize, nets: &InterconnectConfig, params: &EnergyParams, tdp_w: f64) -> Result<usize> {
    let power_at = |p: usize| {
        let pods = PodConfig {
            clock_hz: params.clock_hz,
            ..PodConfig::new(rows, cols, p)
        };
        peak_power(&pods, p, &nets.with_ports(p), params).total
    };
    if power_at(1) >= tdp_w {
        return Err(Error::config(format!("a single {rows}x{cols} pod exceeds the {tdp_w} W budget")));
    }
    let mut p = 1usize;
    while p < (1 << 24) && power_at(2 * p) < tdp_w {
        p *= 2;
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub peak_power: PowerBreakdown,
    pub tdp_w: f64,
    pub peak_throughput: f64,
    pub peak_throughput_at_tdp: f64,
    pub utilization: f64,
    pub effective_throughput: f64,
    pub effective_throughput_at_tdp: f64,
    pub effective_per_watt: f64,
}

impl PowerReport {
    pub fn new(pods: &PodConfig, banks: usize, nets: &InterconnectConfig, params: &EnergyParams, utilization: f64) -> Self {
        let peak_power = peak_power(pods, banks, nets, params);
        let peak = peak_throughput(pods);
        Self::from_parts(peak, peak_power, params.tdp_w, utilization)
    }

    pub fn from_parts(peak_throughput: f64, peak_power: PowerBreakdown, tdp_w: f64, utilization: f64) -> Self {
        let scale = if peak_power.total > 0.0 { tdp_w / peak_power.total } else { 0.0 };
        let (eff, at_tdp, per_watt) = effective_throughput(utilization, peak_throughput, peak_power.total, tdp_w);
        PowerReport {
            peak_power,
            tdp_w,
            peak_throughput,
            peak_throughput_at_tdp: peak_throughput * scale,
            utilization,
            effective_throughput: eff,
            effective_throughput_at_tdp: at_tdp,
            effective_per_watt: per_watt,
        }
    }
}

/// Returns (effective, effective at TDP, effective per watt).
pub fn effective_throughput(utilization: f64, peak_throughput: f64, peak_power_w: f64, tdp_w: f64) -> (f64, f64, f64) {
    let eff = peak_throughput * utilization;
    if peak_power_w <= 0.0 {
        return (eff, 0.0, 0.0);
    }
    (eff, eff * tdp_w / peak_power_w, eff / peak_power_w)
}

/// Activity counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub macs: u64,
    pub sram_bytes: u64,
    /// Bytes carried by the X, W, P-in and P-out networks.
    pub network_bytes: [u64; 4],
    pub post_ops: u64,
    pub dram_bytes: u64,
}

impl Activity {
    pub fn add(&mut self, o: &Activity) {
        self.macs += o.macs;
        self.sram_bytes += o.sram_bytes;
        for (a, b) in self.network_bytes.iter_mut().zip(o.network_bytes) {
            *a += b;
        }
        self.post_ops += o.post_ops;
        self.dram_bytes += o.dram_bytes;
    }
}

/// Picojoules per component. Uses uncalibrated per-event energies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub compute: f64,
    pub sram: f64,
    pub interconnect: f64,
    pub post_processors: f64,
    pub total: f64,
}

pub fn run_energy(activity: &Activity, nets: &InterconnectConfig, params: &EnergyParams) -> EnergyBreakdown {
    let compute = activity.macs as f64 * params.mac_pj;
    let sram = activity.sram_bytes as f64 * params.sram_pj_per_byte;
    let net_bytes: u64 = activity.network_bytes.iter().sum();
    let interconnect = net_bytes as f64 * params.interconnect_pj_per_byte(nets);
    let post_processors = activity.post_ops as f64 * params.post_op_pj;
    EnergyBreakdown {
        compute,
        sram,
        interconnect,
        post_processors,
        total: compute + sram + interconnect + post_processors,
    }
}
