//! Cycle-level execution of a schedule.
//!
//! Slices run back to back. Slice `l` lasts long enough for its own compute
//! and post-processing and for everything slice `l + 1` needs to be staged
//! while it runs: the next weight tiles (double buffering, one row per
//! cycle), the network round trip and any DRAM refetches. The array pipeline
//! fill and drain is exposed only where no op follows.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interconnect::InterconnectConfig;
use crate::power::{run_energy, Activity, EnergyBreakdown, EnergyParams};
use crate::scheduler::{PartialRef, Placement, PostKind, Schedule, NET_PIN, NET_POUT, NET_W, NET_X};
use crate::tiling::{TileGraph, TileOp};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionPolicy {
    /// Farthest next use first; the schedule is known ahead of time.
    #[default]
    Belady,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub banks: usize,
    pub bytes_per_bank: u64,
    /// Bytes per cycle per port.
    pub port_width: usize,
    pub policy: EvictionPolicy,
    pub dram_bytes_per_cycle: f64,
    pub dram_latency: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            banks: 256,
            bytes_per_bank: 256 * 1024,
            port_width: 32,
            policy: EvictionPolicy::Belady,
            dram_bytes_per_cycle: 900.0,
            dram_latency: 100,
        }
    }
}

impl BankConfig {
    pub fn new(banks: usize, bytes_per_bank: u64) -> Self {
        BankConfig {
            banks,
            bytes_per_bank,
            ..Default::default()
        }
    }

    /// Cycles to serve `bytes` of DRAM misses.
    pub fn dram_stall(&self, bytes: u64) -> u64 {
        if bytes == 0 {
            0
        } else {
            self.dram_latency + (bytes as f64 / self.dram_bytes_per_cycle).ceil() as u64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residency {
    /// Compulsory fetches, refetches and spills.
    pub dram_bytes: u64,
    pub compulsory_bytes: u64,
    pub refetch_bytes: u64,
    pub spill_bytes: u64,
    pub evictions: u64,
    /// Evictions of activation and partial-sum tiles.
    pub activation_evictions: u64,
    pub weight_evictions: u64,
    /// Largest live footprint seen in any bank before eviction.
    pub peak_bank_bytes: u64,
    /// Refetched bytes needed by each slice.
    pub slice_miss_bytes: Vec<u64>,
}

/// One access in a bank's trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Access {
    pub time: u64,
    pub object: u32,
    /// First write of the object. Reads of an object that was never
    /// written are compulsory fetches.
    pub write: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectInfo {
    pub bytes: u64,
    /// Clean objects (static weights) are dropped without a spill.
    pub clean: bool,
}

/// Offline Belady replacement over one bank's accesses (sorted by time).
/// Returns counters with `slice_miss_bytes` indexed by `time / 2`.
pub fn belady(capacity: u64, objects: &[ObjectInfo], accesses: &[Access]) -> Residency {
    let mut res = Residency::default();
    let mut next_use = vec![u64::MAX; accesses.len()];
    let mut following: HashMap<u32, u64> = HashMap::new();
    for (idx, a) in accesses.iter().enumerate().rev() {
        next_use[idx] = following.get(&a.object).copied().unwrap_or(u64::MAX);
        if !a.write {
            following.insert(a.object, a.time);
        } else {
            following.remove(&a.object);
        }
    }
    let mut resident: HashMap<u32, u64> = HashMap::new();
    let mut order: BTreeSet<(u64, u32)> = BTreeSet::new();
    let mut seen: HashMap<u32, ()> = HashMap::new();
    let mut spilled: HashMap<u32, ()> = HashMap::new();
    let mut used = 0u64;
    for (idx, a) in accesses.iter().enumerate() {
        let info = objects[a.object as usize];
        let next = next_use[idx];
        if let Some(old) = resident.remove(&a.object) {
            order.remove(&(old, a.object));
            used -= info.bytes;
        } else if !a.write {
            if seen.contains_key(&a.object) {
                res.refetch_bytes += info.bytes;
                let slice = (a.time / 2) as usize;
                if res.slice_miss_bytes.len() <= slice {
                    res.slice_miss_bytes.resize(slice + 1, 0);
                }
                res.slice_miss_bytes[slice] += info.bytes;
            } else {
                res.compulsory_bytes += info.bytes;
            }
        }
        seen.insert(a.object, ());
        if next == u64::MAX {
            continue;
        }
        resident.insert(a.object, next);
        order.insert((next, a.object));
        used += info.bytes;
        res.peak_bank_bytes = res.peak_bank_bytes.max(used);
        while used > capacity {
            let (_, o) = order.pop_last().expect("resident set nonempty");
            resident.remove(&o);
            let victim = objects[o as usize];
            used -= victim.bytes;
            res.evictions += 1;
            if victim.clean {
                res.weight_evictions += 1;
            } else {
                res.activation_evictions += 1;
                if spilled.insert(o, ()).is_none() {
                    res.spill_bytes += victim.bytes;
                }
            }
        }
    }
    res.dram_bytes = res.compulsory_bytes + res.refetch_bytes + res.spill_bytes;
    res
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Obj {
    X(u32),
    W(u32),
    Part(PartialRef),
}

/// Bytes an x-tile occupies in its bank. Convolution inputs are stored
/// unexpanded; the pod's converter builds the `kH*kW`-fold im2col rows.
fn x_storage(tg: &TileGraph, op: &TileOp) -> u64 {
    let layer = &tg.layers[op.layer as usize];
    let raw = op.m as u64 * op.n as u64;
    match layer.gemm.conv {
        Some(cv) => raw.div_ceil((cv.k_h * cv.k_w) as u64),
        None => raw,
    }
}

/// Replays the schedule's tile traffic through capacity-limited banks.
pub fn bank_residency(schedule: &Schedule, tg: &TileGraph, banks: &BankConfig) -> Residency {
    let nb = banks.banks.max(1);
    let place = Placement::new(tg, nb);
    let mut ids: HashMap<Obj, u32> = HashMap::new();
    let mut objects: Vec<ObjectInfo> = Vec::new();
    let mut per_bank: Vec<Vec<Access>> = vec![Vec::new(); nb];
    let mut intern = |o: Obj, info: ObjectInfo, objects: &mut Vec<ObjectInfo>| -> u32 {
        *ids.entry(o).or_insert_with(|| {
            objects.push(info);
            objects.len() as u32 - 1
        })
    };

    let mut activation = vec![0u64; tg.groups.len()];
    for (s, slice) in schedule.slices.iter().enumerate() {
        for item in &slice.post {
            if matches!(item.kind, PostKind::Activation { .. }) {
                activation[item.group as usize] = s as u64;
            }
        }
    }
    let birth_of = |op: &TileOp| -> Option<u64> {
        tg.x_deps(op).iter().map(|&g| 2 * activation[g as usize] + 1).max()
    };

    let mut part_bank: HashMap<PartialRef, u32> = HashMap::new();
    let mut born: HashMap<u32, ()> = HashMap::new();
    for (l, slice) in schedule.slices.iter().enumerate() {
        let (read, write) = (2 * l as u64, 2 * l as u64 + 1);
        for a in &slice.pods {
            let op = tg.ops[a.tile as usize];
            let layer = &tg.layers[op.layer as usize];
            let xkey = place.x_key(tg, &op);
            let xo = intern(
                Obj::X(xkey),
                ObjectInfo {
                    bytes: x_storage(tg, &op),
                    clean: false,
                },
                &mut objects,
            );
            if let Some(b) = birth_of(&op) {
                if born.insert(xo, ()).is_none() {
                    per_bank[a.banks.x as usize].push(Access { time: b, object: xo, write: true });
                }
            }
            per_bank[a.banks.x as usize].push(Access { time: read, object: xo, write: false });
            if let Some(wb) = a.banks.w {
                let wkey = place.w_key(tg, &op);
                let dynamic = layer.gemm.dynamic_weights;
                let wo = intern(
                    Obj::W(wkey),
                    ObjectInfo {
                        bytes: op.w_bytes(),
                        clean: !dynamic,
                    },
                    &mut objects,
                );
                if dynamic {
                    if let Some(b) = birth_of(&op) {
                        if born.insert(wo, ()).is_none() {
                            per_bank[wb as usize].push(Access { time: b, object: wo, write: true });
                        }
                    }
                }
                per_bank[wb as usize].push(Access { time: read, object: wo, write: false });
            }
            if let (Some(pb), Some(from)) = (a.banks.psum_in, a.psum_from) {
                let po = intern(
                    Obj::Part(PartialRef::Op(from)),
                    ObjectInfo {
                        bytes: op.psum_bytes(),
                        clean: false,
                    },
                    &mut objects,
                );
                per_bank[pb as usize].push(Access { time: read, object: po, write: false });
            }
            let me = PartialRef::Op(op.id);
            let oo = intern(
                Obj::Part(me),
                ObjectInfo {
                    bytes: op.psum_bytes(),
                    clean: false,
                },
                &mut objects,
            );
            part_bank.insert(me, a.banks.psum_out);
            per_bank[a.banks.psum_out as usize].push(Access { time: write, object: oo, write: true });
        }
        for item in &slice.post {
            let bytes = 2 * item.m as u64 * item.p as u64;
            let inputs: &[PartialRef] = match &item.kind {
                PostKind::Add { a, b, .. } => &[*a, *b],
                PostKind::Activation { input } => std::slice::from_ref(input),
            };
            for p in inputs {
                let o = intern(Obj::Part(*p), ObjectInfo { bytes, clean: false }, &mut objects);
                if let Some(&b) = part_bank.get(p) {
                    per_bank[b as usize].push(Access { time: read, object: o, write: false });
                }
            }
            if let PostKind::Add { id, a, .. } = item.kind {
                let me = PartialRef::Add(id);
                let bank = part_bank.get(&a).copied().unwrap_or(0);
                let o = intern(Obj::Part(me), ObjectInfo { bytes, clean: false }, &mut objects);
                part_bank.insert(me, bank);
                per_bank[bank as usize].push(Access { time: write, object: o, write: true });
            }
        }
    }

    let mut total = Residency::default();
    for accesses in &mut per_bank {
        accesses.sort();
        let r = belady(banks.bytes_per_bank, &objects, accesses);
        total.dram_bytes += r.dram_bytes;
        total.compulsory_bytes += r.compulsory_bytes;
        total.refetch_bytes += r.refetch_bytes;
        total.spill_bytes += r.spill_bytes;
        total.evictions += r.evictions;
        total.activation_evictions += r.activation_evictions;
        total.weight_evictions += r.weight_evictions;
        total.peak_bank_bytes = total.peak_bank_bytes.max(r.peak_bank_bytes);
        if total.slice_miss_bytes.len() < r.slice_miss_bytes.len() {
            total.slice_miss_bytes.resize(r.slice_miss_bytes.len(), 0);
        }
        for (t, b) in total.slice_miss_bytes.iter_mut().zip(&r.slice_miss_bytes) {
            *t += b;
        }
    }
    total
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub makespan_cycles: u64,
    /// All slices, including trailing post-processing.
    pub slices: usize,
    /// Slices through the last tile op.
    pub op_slices: usize,
    pub tile_ops: usize,
    pub useful_macs: u64,
    pub utilization: f64,
    pub busy_pod_fraction: f64,
    pub cycles_per_tile_op: f64,
    pub sram_read_bytes: u64,
    pub sram_write_bytes: u64,
    /// Bytes delivered on the X, W, P-in and P-out networks.
    pub network_bytes: [u64; 4],
    pub dram_bytes: u64,
    pub evictions: u64,
    pub activation_evictions: u64,
    pub post_ops: u64,
    pub exposed_stall_cycles: u64,
    pub energy: EnergyBreakdown,
}

impl SimStats {
    pub fn activity(&self) -> Activity {
        Activity {
            macs: self.useful_macs,
            sram_bytes: self.sram_read_bytes + self.sram_write_bytes,
            network_bytes: self.network_bytes,
            post_ops: self.post_ops,
            dram_bytes: self.dram_bytes,
        }
    }
}

/// Mean cycles a tile op occupies its pod, stalls included.
pub fn cycles_per_tile_op(stats: &SimStats) -> f64 {
    stats.cycles_per_tile_op
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    SliceStart,
    OpStart,
    OpEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub kind: TraceKind,
    pub slice: u32,
    pub pod: u32,
    pub tile: u32,
}

pub fn simulate(schedule: &Schedule, tg: &TileGraph, banks: &BankConfig, params: &EnergyParams) -> Result<SimStats> {
    simulate_inner(schedule, tg, banks, params, None)
}

pub fn simulate_traced(
    schedule: &Schedule,
    tg: &TileGraph,
    banks: &BankConfig,
    params: &EnergyParams,
) -> Result<(SimStats, Vec<TraceEvent>)> {
    let mut trace = Vec::new();
    let stats = simulate_inner(schedule, tg, banks, params, Some(&mut trace))?;
    Ok((stats, trace))
}

fn check_slice(schedule: &Schedule, tg: &TileGraph, l: usize) -> Result<()> {
    let slice = &schedule.slices[l];
    let npods = schedule.config.pods.pods;
    let mut pods = vec![false; npods];
    let mut sources: [HashMap<u32, u64>; 3] = Default::default();
    let mut outs: HashMap<u32, ()> = HashMap::new();
    let place = Placement::new(tg, schedule.config.banks);
    for a in &slice.pods {
        let op = tg
            .ops
            .get(a.tile as usize)
            .ok_or_else(|| Error::validation(format!("slice {l}: unknown tile op {}", a.tile)))?;
        if a.pod as usize >= npods || std::mem::replace(&mut pods[a.pod as usize], true) {
            return Err(Error::validation(format!("slice {l}: pod {} double-booked", a.pod)));
        }
        let mut claim = |net: usize, bank: u32, key: u64| -> Result<()> {
            match sources[net].insert(bank, key) {
                Some(k) if k != key => Err(Error::validation(format!("slice {l}: bank {bank} port conflict"))),
                _ => Ok(()),
            }
        };
        claim(NET_X, a.banks.x, place.x_key(tg, op) as u64)?;
        if let Some(b) = a.banks.w {
            claim(NET_W, b, place.w_key(tg, op) as u64)?;
        }
        if let Some(b) = a.banks.psum_in {
            claim(NET_PIN, b, a.psum_from.map_or(u64::MAX, u64::from))?;
        }
        if outs.insert(a.banks.psum_out, ()).is_some() {
            return Err(Error::validation(format!("slice {l}: bank {} written twice", a.banks.psum_out)));
        }
    }
    Ok(())
}

fn simulate_inner(
    schedule: &Schedule,
    tg: &TileGraph,
    banks: &BankConfig,
    params: &EnergyParams,
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> Result<SimStats> {
    let cfg = &schedule.config;
    let pods = &cfg.pods;
    let nets: &InterconnectConfig = &cfg.nets;
    if banks.banks != cfg.banks {
        return Err(Error::config("bank count differs from the schedule's"));
    }
    let n = schedule.slices.len();
    let mut stats = SimStats::default();
    if n == 0 {
        return Ok(stats);
    }
    for l in 0..n {
        check_slice(schedule, tg, l)?;
    }

    let residency = bank_residency(schedule, tg, banks);
    let miss = |l: usize| banks.dram_stall(residency.slice_miss_bytes.get(l).copied().unwrap_or(0));
    let rt = nets.round_trip() as u64;
    let fill = pods.fill_drain();
    let compute = |l: usize| schedule.slices[l].pods.iter().map(|a| tg.ops[a.tile as usize].m as u64).max().unwrap_or(0);
    let post = |l: usize| schedule.slices[l].post.iter().map(|p| p.m as u64).max().unwrap_or(0);
    let weights = |l: usize| {
        schedule.slices[l]
            .pods
            .iter()
            .filter(|a| a.banks.w.is_some())
            .map(|a| tg.ops[a.tile as usize].n as u64)
            .max()
            .unwrap_or(0)
    };
    let staging = |l: usize| -> u64 {
        if l >= n {
            return 0;
        }
        let net = if schedule.slices[l].pods.is_empty() { 0 } else { rt };
        weights(l).max(net + miss(l))
    };

    let mut t = staging(0);
    let mut per_op_cycles = 0u64;
    let mut stall_total = 0u64;
    let place = Placement::new(tg, cfg.banks);
    for l in 0..n {
        let slice = &schedule.slices[l];
        let s = compute(l);
        let core = s.max(post(l)).max(staging(l + 1));
        let has_next_ops = l + 1 < n && !schedule.slices[l + 1].pods.is_empty();
        let drain = if !slice.pods.is_empty() && !has_next_ops { fill } else { 0 };
        let d = core + drain;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceEvent {
                cycle: t,
                kind: TraceKind::SliceStart,
                slice: l as u32,
                pod: u32::MAX,
                tile: u32::MAX,
            });
        }
        let mut x_src: HashMap<u32, ()> = HashMap::new();
        let mut w_src: HashMap<u32, ()> = HashMap::new();
        for a in &slice.pods {
            let op = tg.ops[a.tile as usize];
            let m = op.m as u64;
            per_op_cycles += m + (core - s);
            stats.useful_macs += op.macs();
            stats.network_bytes[NET_X] += op.x_bytes();
            if x_src.insert(place.x_key(tg, &op), ()).is_none() {
                stats.sram_read_bytes += op.x_bytes();
            }
            if a.banks.w.is_some() {
                stats.network_bytes[NET_W] += op.w_bytes();
                if w_src.insert(place.w_key(tg, &op), ()).is_none() {
                    stats.sram_read_bytes += op.w_bytes();
                }
            }
            if a.banks.psum_in.is_some() {
                stats.network_bytes[NET_PIN] += op.psum_bytes();
                stats.sram_read_bytes += op.psum_bytes();
            }
            stats.network_bytes[NET_POUT] += op.psum_bytes();
            stats.sram_write_bytes += op.psum_bytes();
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEvent {
                    cycle: t,
                    kind: TraceKind::OpStart,
                    slice: l as u32,
                    pod: a.pod,
                    tile: a.tile,
                });
                tr.push(TraceEvent {
                    cycle: t + m + fill,
                    kind: TraceKind::OpEnd,
                    slice: l as u32,
                    pod: a.pod,
                    tile: a.tile,
                });
            }
        }
        for item in &slice.post {
            let elems = item.m as u64 * item.p as u64;
            match item.kind {
                PostKind::Add { .. } => {
                    stats.sram_read_bytes += 4 * elems;
                    stats.sram_write_bytes += 2 * elems;
                    stats.post_ops += elems;
                }
                PostKind::Activation { .. } => {
                    let layer = &tg.layers[tg.groups[item.group as usize].layer as usize];
                    stats.sram_read_bytes += 2 * elems;
                    stats.sram_write_bytes += elems;
                    stats.post_ops += elems * layer.gemm.post_ops.max(1) as u64;
                }
            }
        }
        if !slice.pods.is_empty() {
            stall_total += core - s;
        }
        t += d;
    }

    stats.makespan_cycles = t;
    stats.slices = n;
    stats.op_slices = schedule.makespan_slices();
    stats.tile_ops = schedule.tile_ops();
    stats.exposed_stall_cycles = stall_total;
    let peak_macs = (pods.pods * pods.rows * pods.cols) as f64 * t as f64;
    stats.utilization = if t > 0 { stats.useful_macs as f64 / peak_macs } else { 0.0 };
    stats.busy_pod_fraction = schedule.busy_pod_fraction();
    stats.cycles_per_tile_op = if stats.tile_ops > 0 {
        per_op_cycles as f64 / stats.tile_ops as f64
    } else {
        0.0
    };
    stats.dram_bytes = residency.dram_bytes;
    stats.evictions = residency.evictions;
    stats.activation_evictions = residency.activation_evictions;
    stats.energy = run_energy(&stats.activity(), nets, params);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::PodConfig;
    use crate::scheduler::schedule;
    use crate::tiling::TileShape;
    use crate::workload::{GemmSpec, ModelGraph};

    fn run(d1: usize, d2: usize, d3: usize, p: usize, nets: InterconnectConfig) -> (TileGraph, Schedule) {
        let m = ModelGraph::new("t", vec![GemmSpec::new("l", d1, d2, d3)]).unwrap();
        let tg = TileGraph::from_model(&m, TileShape::new(32, 32));
        let s = schedule(&tg, &PodConfig::new(32, 32, p), p, &nets).unwrap();
        (tg, s)
    }

    #[test]
    fn single_full_op_spans_36_cycles() {
        let (tg, s) = run(32, 32, 32, 1, InterconnectConfig::crossbar(1));
        let (_, trace) = simulate_traced(&s, &tg, &BankConfig::new(1, 1 << 18), &EnergyParams::default()).unwrap();
        let start = trace.iter().find(|e| e.kind == TraceKind::OpStart).unwrap().cycle;
        let end = trace.iter().find(|e| e.kind == TraceKind::OpEnd).unwrap().cycle;
        assert_eq!(end - start, 36);
    }

    #[test]
    fn back_to_back_ops_issue_every_32_cycles() {
        // one pod, eight independent ops
        let (tg, s) = run(8 * 32, 32, 32, 1, InterconnectConfig::crossbar(1));
        let (stats, trace) = simulate_traced(&s, &tg, &BankConfig::new(1, 1 << 18), &EnergyParams::default()).unwrap();
        let starts: Vec<u64> = trace.iter().filter(|e| e.kind == TraceKind::OpStart).map(|e| e.cycle).collect();
        assert_eq!(starts.len(), 8);
        assert!(starts.windows(2).all(|w| w[1] - w[0] == 32), "{starts:?}");
        assert_eq!(stats.cycles_per_tile_op, 32.0);
    }

    #[test]
    fn empty_schedule_is_all_zero() {
        let m = ModelGraph::new("t", vec![GemmSpec::new("l", 1, 1, 1)]).unwrap();
        let tg = TileGraph::from_model(&m, TileShape::new(32, 32));
        let mut s = schedule(&tg, &PodConfig::new(32, 32, 1), 1, &InterconnectConfig::crossbar(1)).unwrap();
        s.slices.clear();
        let st = simulate(&s, &tg, &BankConfig::new(1, 1 << 18), &EnergyParams::default()).unwrap();
        assert_eq!(st, SimStats::default());
    }

    #[test]
    fn longer_latency_never_helps() {
        let (tg, s) = run(256, 256, 128, 8, InterconnectConfig::crossbar(8));
        let banks = BankConfig::new(8, 1 << 18);
        let mut prev = f64::INFINITY;
        for stage in [1, 4, 16, 64] {
            let mut s2 = s.clone();
            s2.config.nets.stage_latency = stage;
            let st = simulate(&s2, &tg, &banks, &EnergyParams::default()).unwrap();
            assert!(st.utilization <= prev);
            prev = st.utilization;
        }
    }

    #[test]
    fn sram_energy_is_bytes_times_coefficient() {
        let (tg, s) = run(96, 64, 64, 4, InterconnectConfig::butterfly(4, 2));
        let st = simulate(&s, &tg, &BankConfig::new(4, 1 << 18), &EnergyParams::default()).unwrap();
        assert_eq!(st.energy.sram, (st.sram_read_bytes + st.sram_write_bytes) as f64 * 2.7);
        assert!(st.useful_macs as f64 * 0.4 <= st.energy.compute + 1e-6);
        assert_eq!(st.useful_macs, 96 * 64 * 64);
    }

    #[test]
    fn port_conflict_is_rejected() {
        let (tg, mut s) = run(64, 32, 32, 2, InterconnectConfig::crossbar(2));
        let b = s.slices[0].pods[0].banks.x;
        s.slices[0].pods[1].banks.x = b;
        let r = simulate(&s, &tg, &BankConfig::new(2, 1 << 18), &EnergyParams::default());
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    /// Minimum refetches over every eviction choice, unit-size objects.
    fn optimal_misses(capacity: usize, trace: &[u32]) -> u64 {
        fn go(cap: usize, trace: &[u32], pos: usize, cache: &mut Vec<u32>, seen: &mut Vec<u32>) -> u64 {
            if pos == trace.len() {
                return 0;
            }
            let o = trace[pos];
            let mut cost = 0;
            if !cache.contains(&o) {
                if seen.contains(&o) {
                    cost = 1;
                }
                let mut best = u64::MAX;
                let fresh = !seen.contains(&o);
                if fresh {
                    seen.push(o);
                }
                if cache.len() < cap {
                    cache.push(o);
                    best = go(cap, trace, pos + 1, cache, seen);
                    cache.pop();
                } else {
                    // bypass, or evict any resident object
                    best = best.min(go(cap, trace, pos + 1, cache, seen));
                    for v in 0..cache.len() {
                        let old = std::mem::replace(&mut cache[v], o);
                        best = best.min(go(cap, trace, pos + 1, cache, seen));
                        cache[v] = old;
                    }
                }
                if fresh {
                    seen.pop();
                }
                return cost + best;
            }
            go(cap, trace, pos + 1, cache, seen)
        }
        go(capacity, trace, 0, &mut Vec::new(), &mut Vec::new())
    }

    #[test]
    fn belady_matches_exhaustive_optimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let objs = rng.gen_range(2..6);
            let len = rng.gen_range(1..11);
            let cap = rng.gen_range(1..4);
            let trace: Vec<u32> = (0..len).map(|_| rng.gen_range(0..objs)).collect();
            let objects = vec![ObjectInfo { bytes: 1, clean: true }; objs as usize];
            let accesses: Vec<Access> = trace
                .iter()
                .enumerate()
                .map(|(t, &o)| Access {
                    time: 2 * t as u64,
                    object: o,
                    write: false,
                })
                .collect();
            let r = belady(cap as u64, &objects, &accesses);
            assert_eq!(r.refetch_bytes, optimal_misses(cap, &trace), "{trace:?} cap {cap}");
        }
    }

    #[test]
    fn one_tile_per_bank_forces_evictions() {
        let objects = vec![ObjectInfo { bytes: 4, clean: false }; 3];
        let acc = |time, object, write| Access { time, object, write };
        let trace = [acc(1, 0, true), acc(3, 1, true), acc(4, 0, false), acc(6, 1, false), acc(7, 2, true), acc(8, 2, false)];
        let r = belady(4, &objects, &trace);
        assert!(r.evictions >= 1);
        assert_eq!(r.activation_evictions, r.evictions);
        assert_eq!(r.refetch_bytes, 4);
    }
}
