//! Isopower design-space sweeps.
//!
//! Every point tiles, schedules and simulates each benchmark on its own, then
//! aggregates effective throughput as a MAC-weighted mean. Points run in
//! parallel and come back in input order, so output is deterministic.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::PodConfig;
use crate::error::{Error, Result};
use crate::interconnect::{InterconnectConfig, Topology};
use crate::power::{self, EnergyParams, PowerReport};
use crate::scheduler::{self, Schedule};
use crate::simulator::{self, BankConfig, SimStats};
use crate::tiling::{Partition, TileGraph, TileShape};
use crate::workload::ModelGraph;

/// Square size that is evaluated as a single monolithic array.
pub const MONOLITHIC_SIZE: usize = 512;

/// Benchmarks of the reduced preset.
pub const DESK_PRESET: [&str; 4] = ["resnet50", "densenet121", "bert_medium", "bert_base"];

/// Pod cap of the reduced preset.
pub const DESK_POD_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DseConfig {
    pub tdp_w: f64,
    pub topology: Topology,
    pub expansion: usize,
    pub bank_bytes: u64,
    pub partition: Option<Partition>,
    /// Upper bound on the pod count chosen by the TDP rule.
    pub pod_cap: Option<usize>,
    pub params: EnergyParams,
}

impl Default for DseConfig {
    fn default() -> Self {
        DseConfig {
            tdp_w: 400.0,
            topology: Topology::Butterfly,
            expansion: 2,
            bank_bytes: 256 * 1024,
            partition: None,
            pod_cap: None,
            params: EnergyParams::default(),
        }
    }
}

impl DseConfig {
    pub fn desk() -> Self {
        DseConfig {
            pod_cap: Some(DESK_POD_CAP),
            ..Default::default()
        }
    }

    pub fn network(&self, ports: usize) -> InterconnectConfig {
        InterconnectConfig::new(self.topology, ports, self.expansion)
    }

    fn shape(&self, rows: usize, cols: usize) -> TileShape {
        let shape = TileShape::new(rows, cols);
        match self.partition {
            Some(p) => shape.with_partition(p),
            None => shape,
        }
    }

    fn pods(&self, rows: usize, cols: usize, pods: usize) -> PodConfig {
        PodConfig {
            clock_hz: self.params.clock_hz,
            ..PodConfig::new(rows, cols, pods)
        }
    }

    /// Pod count under the TDP rule, capped. Errors when no pod fits.
    pub fn pods_for(&self, rows: usize, cols: usize) -> Result<usize> {
        if rows == MONOLITHIC_SIZE && cols == MONOLITHIC_SIZE {
            return Ok(1);
        }
        let p = power::pods_for_tdp(rows, cols, &self.network(1), &self.params, self.tdp_w)?;
        Ok(self.pod_cap.map_or(p, |cap| p.min(cap)))
    }
}

/// Per-benchmark outcome at one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub macs: u64,
    pub makespan_cycles: u64,
    pub utilization: f64,
    pub busy_pod_fraction: f64,
    pub dram_bytes: u64,
    pub activation_evictions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub rows: usize,
    pub cols: usize,
    pub pods: usize,
    pub feasible: bool,
    pub peak_power_w: f64,
    pub peak_throughput: f64,
    pub peak_throughput_at_tdp: f64,
    /// MAC-weighted mean utilization.
    pub utilization: f64,
    pub effective_throughput: f64,
    pub effective_throughput_at_tdp: f64,
    pub effective_per_watt: f64,
    pub models: Vec<ModelResult>,
}

impl PointResult {
    fn infeasible(rows: usize, cols: usize) -> Self {
        PointResult {
            rows,
            cols,
            pods: 0,
            feasible: false,
            peak_power_w: 0.0,
            peak_throughput: 0.0,
            peak_throughput_at_tdp: 0.0,
            utilization: 0.0,
            effective_throughput: 0.0,
            effective_throughput_at_tdp: 0.0,
            effective_per_watt: 0.0,
            models: Vec::new(),
        }
    }
}

/// Tiles, schedules and simulates `models` as one co-scheduled graph.
pub fn run_models(models: &[ModelGraph], rows: usize, cols: usize, pods: usize, cfg: &DseConfig) -> Result<(Schedule, TileGraph, SimStats)> {
    let tg = TileGraph::build(models, cfg.shape(rows, cols));
    let pc = cfg.pods(rows, cols, pods);
    let nets = cfg.network(pods);
    let sched = scheduler::schedule(&tg, &pc, pods, &nets)?;
    let stats = simulator::simulate(&sched, &tg, &BankConfig::new(pods, cfg.bank_bytes), &cfg.params)?;
    Ok((sched, tg, stats))
}

fn model_result(model: &ModelGraph, stats: &SimStats) -> ModelResult {
    ModelResult {
        model: model.name.clone(),
        macs: stats.useful_macs,
        makespan_cycles: stats.makespan_cycles,
        utilization: stats.utilization,
        busy_pod_fraction: stats.busy_pod_fraction,
        dram_bytes: stats.dram_bytes,
        activation_evictions: stats.activation_evictions,
    }
}

/// Evaluates one design point with an explicit pod count.
pub fn evaluate(models: &[ModelGraph], rows: usize, cols: usize, pods: usize, cfg: &DseConfig) -> Result<PointResult> {
    if models.is_empty() {
        return Err(Error::config("no benchmarks given"));
    }
    let results = models
        .iter()
        .map(|m| run_models(std::slice::from_ref(m), rows, cols, pods, cfg).map(|(_, _, st)| model_result(m, &st)))
        .collect::<Result<Vec<_>>>()?;
    let total: u64 = results.iter().map(|r| r.macs).sum();
    let util = if total == 0 {
        0.0
    } else {
        results.iter().map(|r| r.utilization * r.macs as f64).sum::<f64>() / total as f64
    };
    let pc = cfg.pods(rows, cols, pods);
    let rep = PowerReport::new(&pc, pods, &cfg.network(pods), &cfg.params, util);
    Ok(PointResult {
        rows,
        cols,
        pods,
        feasible: rep.peak_power.total < cfg.tdp_w,
        peak_power_w: rep.peak_power.total,
        peak_throughput: rep.peak_throughput,
        peak_throughput_at_tdp: rep.peak_throughput_at_tdp,
        utilization: util,
        effective_throughput: rep.effective_throughput,
        effective_throughput_at_tdp: rep.effective_throughput_at_tdp,
        effective_per_watt: rep.effective_per_watt,
        models: results,
    })
}

/// Evaluates each `(rows, cols)` at its TDP pod count. Points where not even
/// one pod fits are kept and marked infeasible.
pub fn sweep_shape(grid: &[(usize, usize)], models: &[ModelGraph], cfg: &DseConfig) -> Result<Vec<PointResult>> {
    grid.par_iter()
        .map(|&(r, c)| match cfg.pods_for(r, c) {
            Ok(p) => evaluate(models, r, c, p, cfg),
            Err(_) => Ok(PointResult::infeasible(r, c)),
        })
        .collect()
}

/// Square arrays at their TDP pod counts, one row per size.
pub fn sweep_granularity(sizes: &[usize], models: &[ModelGraph], cfg: &DseConfig) -> Result<Vec<PointResult>> {
    let grid: Vec<_> = sizes.iter().map(|&s| (s, s)).collect();
    sweep_shape(&grid, models, cfg)
}

/// Grid point with the highest effective throughput per watt.
pub fn best_point(points: &[PointResult]) -> Option<&PointResult> {
    points
        .iter()
        .filter(|p| p.feasible)
        .max_by(|a, b| a.effective_per_watt.total_cmp(&b.effective_per_watt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub partition: Partition,
    pub utilization: f64,
    pub effective_throughput_at_tdp: f64,
    /// Relative to the best row of the sweep.
    pub normalized: f64,
}

pub fn sweep_partition(
    partitions: &[Partition],
    models: &[ModelGraph],
    rows: usize,
    cols: usize,
    pods: usize,
    cfg: &DseConfig,
) -> Result<Vec<PartitionRow>> {
    let mut out = partitions
        .par_iter()
        .map(|&p| {
            let c = DseConfig {
                partition: Some(p),
                ..*cfg
            };
            let pt = evaluate(models, rows, cols, pods, &c)?;
            Ok(PartitionRow {
                partition: p,
                utilization: pt.utilization,
                effective_throughput_at_tdp: pt.effective_throughput_at_tdp,
                normalized: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = out.iter().map(|r| r.effective_throughput_at_tdp).fold(0.0, f64::max);
    for r in &mut out {
        r.normalized = if best > 0.0 { r.effective_throughput_at_tdp / best } else { 0.0 };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRow {
    pub bank_bytes: u64,
    pub utilization: f64,
    pub effective_throughput_at_tdp: f64,
    pub dram_bytes: u64,
    pub evictions: u64,
    pub activation_evictions: u64,
}

/// Bank-size sweep. The schedule does not depend on bank capacity, so it is
/// built once and re-simulated per size.
pub fn sweep_banks(sizes: &[u64], models: &[ModelGraph], rows: usize, cols: usize, pods: usize, cfg: &DseConfig) -> Result<Vec<BankRow>> {
    let tg = TileGraph::build(models, cfg.shape(rows, cols));
    let pc = cfg.pods(rows, cols, pods);
    let nets = cfg.network(pods);
    let sched = scheduler::schedule(&tg, &pc, pods, &nets)?;
    sizes
        .par_iter()
        .map(|&bytes| {
            let st = simulator::simulate(&sched, &tg, &BankConfig::new(pods, bytes), &cfg.params)?;
            let rep = PowerReport::new(&pc, pods, &nets, &cfg.params, st.utilization);
            Ok(BankRow {
                bank_bytes: bytes,
                utilization: st.utilization,
                effective_throughput_at_tdp: rep.effective_throughput_at_tdp,
                dram_bytes: st.dram_bytes,
                evictions: st.evictions,
                activation_evictions: st.activation_evictions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenancyRow {
    pub label: String,
    pub sequential_throughput: f64,
    pub parallel_throughput: f64,
    pub speedup: f64,
}

/// Runs each model set back to back and co-scheduled as one graph.
/// Throughputs are ops per second at the configured clock.
pub fn sweep_tenancy(sets: &[(String, Vec<ModelGraph>)], rows: usize, cols: usize, pods: usize, cfg: &DseConfig) -> Result<Vec<TenancyRow>> {
    sets.par_iter()
        .map(|(label, models)| {
            if models.is_empty() {
                return Err(Error::config(format!("tenancy set {label} is empty")));
            }
            let (mut macs, mut cycles) = (0u64, 0u64);
            for m in models {
                let (_, _, st) = run_models(std::slice::from_ref(m), rows, cols, pods, cfg)?;
                macs += st.useful_macs;
                cycles += st.makespan_cycles;
            }
            let seq = throughput(macs, cycles, cfg.params.clock_hz);
            let par = if models.len() == 1 {
                seq
            } else {
                let (_, _, st) = run_models(models, rows, cols, pods, cfg)?;
                throughput(st.useful_macs, st.makespan_cycles, cfg.params.clock_hz)
            };
            Ok(TenancyRow {
                label: label.clone(),
                sequential_throughput: seq,
                parallel_throughput: par,
                speedup: if seq > 0.0 { par / seq } else { 0.0 },
            })
        })
        .collect()
}

fn throughput(macs: u64, cycles: u64, clock_hz: f64) -> f64 {
    if cycles == 0 {
        0.0
    } else {
        2.0 * macs as f64 / cycles as f64 * clock_hz
    }
}

/// Flat CSV row of a design point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCsv {
    pub rows: usize,
    pub cols: usize,
    pub pods: usize,
    pub feasible: bool,
    pub peak_power_w: f64,
    pub peak_tops_at_tdp: f64,
    pub utilization: f64,
    pub eff_tops: f64,
    pub eff_tops_at_tdp: f64,
    pub eff_tops_per_watt: f64,
}

impl From<&PointResult> for PointCsv {
    fn from(p: &PointResult) -> Self {
        PointCsv {
            rows: p.rows,
            cols: p.cols,
            pods: p.pods,
            feasible: p.feasible,
            peak_power_w: p.peak_power_w,
            peak_tops_at_tdp: p.peak_throughput_at_tdp / 1e12,
            utilization: p.utilization,
            eff_tops: p.effective_throughput / 1e12,
            eff_tops_at_tdp: p.effective_throughput_at_tdp / 1e12,
            eff_tops_per_watt: p.effective_per_watt / 1e12,
        }
    }
}

#[derive(Serialize)]
struct PartitionCsv {
    partition: String,
    utilization: f64,
    eff_tops_at_tdp: f64,
    normalized: f64,
}

#[derive(Serialize)]
struct TenancyCsv<'a> {
    label: &'a str,
    sequential_tops: f64,
    parallel_tops: f64,
    speedup: f64,
}

pub fn partition_label(p: Partition) -> String {
    match p {
        Partition::Rows(k) => k.to_string(),
        Partition::Unpartitioned => "none".into(),
    }
}

fn csv_error(source: std::io::Error) -> Error {
    Error::Io {
        path: "csv output".into(),
        source,
    }
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(std::io::Error::other(e)))?;
    }
    w.flush().map_err(csv_error)
}

pub fn write_points_csv<W: Write>(out: W, points: &[PointResult]) -> Result<()> {
    write_rows(out, points.iter().map(PointCsv::from))
}

pub fn write_partition_csv<W: Write>(out: W, rows: &[PartitionRow]) -> Result<()> {
    write_rows(
        out,
        rows.iter().map(|r| PartitionCsv {
            partition: partition_label(r.partition),
            utilization: r.utilization,
            eff_tops_at_tdp: r.effective_throughput_at_tdp / 1e12,
            normalized: r.normalized,
        }),
    )
}

pub fn write_banks_csv<W: Write>(out: W, rows: &[BankRow]) -> Result<()> {
    write_rows(out, rows)
}

pub fn write_tenancy_csv<W: Write>(out: W, rows: &[TenancyRow]) -> Result<()> {
    write_rows(
        out,
        rows.iter().map(|r| TenancyCsv {
            label: &r.label,
            sequential_tops: r.sequential_throughput / 1e12,
            parallel_tops: r.parallel_throughput / 1e12,
            speedup: r.speedup,
        }),
    )
}
