//! Offline time-slice scheduler.
//!
//! Tile ops are visited in graph order (layers by dependence level, then
//! `(i, k, j)`). Each op goes to the earliest slice at or after its inputs
//! are ready in which some idle pod, together with the banks holding its
//! operands, can be connected on all four networks: X and W (bank to pod),
//! P-in (bank to pod, chained partial sums) and P-out (pod to bank). Partial
//! sums left over after a group's members are placed are added pairwise on
//! post-processor pairs, then one activation item produces the group output.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use crate::arch::PodConfig;
use crate::error::{Error, Result};
use crate::interconnect::{verify_assignment, Demand, InterconnectConfig, Leg, NetworkSlice, RoutingProblem};
use crate::tiling::{TileGraph, TileOp, TileShape};

pub const NET_X: usize = 0;
pub const NET_W: usize = 1;
pub const NET_PIN: usize = 2;
pub const NET_POUT: usize = 3;
pub const NETWORK_NAMES: [&str; 4] = ["x", "w", "psum_in", "psum_out"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationPolicy {
    /// Chain when a layer has at least as many groups as pods, else spread.
    #[default]
    Auto,
    /// Hold each member until the group's running partial sum is ready.
    Chain,
    /// Place members as early as possible; chain only opportunistically.
    Spread,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleOptions {
    /// Skip the weight load when a pod keeps the same w-tile from the
    /// previous slice.
    pub weight_reuse: bool,
    pub policy: AggregationPolicy,
    /// Pod/bank combinations tried per (op, slice) before moving on.
    pub max_combinations: usize,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            weight_reuse: true,
            policy: AggregationPolicy::Auto,
            max_combinations: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankRefs {
    pub x: u32,
    pub w: Option<u32>,
    pub psum_in: Option<u32>,
    pub psum_out: u32,
}

/// Butterfly plane used by each leg (0 for single-plane topologies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routes {
    pub x: u8,
    pub w: Option<u8>,
    pub psum_in: Option<u8>,
    pub psum_out: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub pod: u32,
    pub tile: u32,
    pub banks: BankRefs,
    pub routes: Routes,
    /// Tile op whose partial sum is read through P-in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psum_from: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialRef {
    Op(u32),
    Add(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostKind {
    /// Occupies post-processors `unit` and `unit + 1`.
    Add { id: u32, a: PartialRef, b: PartialRef },
    Activation { input: PartialRef },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostItem {
    pub unit: u32,
    pub group: u32,
    pub m: u32,
    pub p: u32,
    #[serde(flatten)]
    pub kind: PostKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub pods: Vec<Assignment>,
    pub post: Vec<PostItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub pods: PodConfig,
    pub banks: usize,
    pub nets: InterconnectConfig,
    pub options: ScheduleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub model: String,
    pub tiling: TileShape,
    pub config: ScheduleConfig,
    pub slices: Vec<SliceRecord>,
}

impl Schedule {
    /// Slices up to and including the last one holding a tile op.
    pub fn makespan_slices(&self) -> usize {
        self.slices.iter().rposition(|s| !s.pods.is_empty()).map_or(0, |i| i + 1)
    }

    pub fn tile_ops(&self) -> usize {
        self.slices.iter().map(|s| s.pods.len()).sum()
    }

    /// Slice of every tile op, indexed by op id.
    pub fn op_slices(&self) -> Vec<u32> {
        let mut out = vec![u32::MAX; self.tile_ops()];
        for (l, s) in self.slices.iter().enumerate() {
            for a in &s.pods {
                if let Some(slot) = out.get_mut(a.tile as usize) {
                    *slot = l as u32;
                }
            }
        }
        out
    }

    pub fn chained(&self) -> usize {
        self.slices.iter().flat_map(|s| &s.pods).filter(|a| a.psum_from.is_some()).count()
    }

    pub fn adds(&self) -> usize {
        self.slices
            .iter()
            .flat_map(|s| &s.post)
            .filter(|p| matches!(p.kind, PostKind::Add { .. }))
            .count()
    }

    pub fn busy_pod_fraction(&self) -> f64 {
        let slices = self.makespan_slices();
        if slices == 0 || self.config.pods.pods == 0 {
            return 0.0;
        }
        self.tile_ops() as f64 / (slices * self.config.pods.pods) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Tile identities and home banks of x- and w-tiles.
#[derive(Debug, Clone)]
pub struct Placement {
    w_base: Vec<u32>,
    banks: u32,
}

impl Placement {
    pub fn new(tg: &TileGraph, banks: usize) -> Self {
        let mut w_base = Vec::with_capacity(tg.layers.len());
        let mut next = 0u32;
        for l in &tg.layers {
            w_base.push(next);
            next += (l.j_tiles * l.k_tiles) as u32;
        }
        Placement {
            w_base,
            banks: banks.max(1) as u32,
        }
    }

    pub fn x_key(&self, tg: &TileGraph, op: &TileOp) -> u32 {
        tg.layers[op.layer as usize].x_index(op.i, op.j) as u32
    }

    pub fn w_key(&self, tg: &TileGraph, op: &TileOp) -> u32 {
        let l = &tg.layers[op.layer as usize];
        self.w_base[op.layer as usize] + op.k * l.j_tiles as u32 + op.j
    }

    pub fn x_bank(&self, key: u32) -> u32 {
        hash_bank(key, 0x9e37_79b9, self.banks)
    }

    pub fn w_bank(&self, key: u32) -> u32 {
        hash_bank(key, 0x85eb_ca6b, self.banks)
    }
}

/// Home bank of a tile: a fixed integer hash, so placement does not depend
/// on visit order.
fn hash_bank(key: u32, seed: u32, banks: u32) -> u32 {
    let mut h = key.wrapping_mul(seed) ^ seed.rotate_left(16);
    h ^= h >> 15;
    h = h.wrapping_mul(0x2c1b_3c6d);
    h ^= h >> 12;
    h % banks
}

#[derive(Debug, Clone, Copy)]
struct Head {
    ready: u32,
    bank: u32,
    part: PartialRef,
}

struct SliceState {
    rec: SliceRecord,
    pod_free: Vec<u64>,
    ops: u32,
    pod_wkey: Vec<u32>,
    post_free: Vec<u64>,
    nets: Option<Box<[NetworkSlice; 4]>>,
}

const NO_KEY: u32 = u32::MAX;

fn full_bits(n: usize) -> Vec<u64> {
    let mut v = vec![u64::MAX; n.div_ceil(64)];
    if !n.is_multiple_of(64) {
        *v.last_mut().unwrap() = (1u64 << (n % 64)) - 1;
    }
    v
}

#[inline]
fn bit(v: &[u64], i: usize) -> bool {
    v[i / 64] >> (i % 64) & 1 == 1
}

#[inline]
fn clear(v: &mut [u64], i: usize) {
    v[i / 64] &= !(1u64 << (i % 64));
}

struct Scheduler<'a> {
    tg: &'a TileGraph,
    place: Placement,
    pods: usize,
    banks: usize,
    post_units: usize,
    nets: InterconnectConfig,
    opts: ScheduleOptions,
    slices: Vec<SliceState>,
    frozen: usize,
    first_open: usize,
    group_ready: Vec<u32>,
    next_add: u32,
}

impl<'a> Scheduler<'a> {
    fn ensure(&mut self, l: usize) {
        while self.slices.len() <= l {
            self.slices.push(SliceState {
                rec: SliceRecord::default(),
                pod_free: full_bits(self.pods),
                ops: 0,
                pod_wkey: vec![NO_KEY; self.pods],
                post_free: full_bits(self.post_units),
                nets: None,
            });
        }
        if self.slices[l].nets.is_none() {
            let n = NetworkSlice::new(&self.nets);
            self.slices[l].nets = Some(Box::new([n.clone(), n.clone(), n.clone(), n]));
        }
    }

    fn freeze_below(&mut self, bound: usize) {
        for s in self.slices.iter_mut().take(bound).skip(self.frozen) {
            s.nets = None;
        }
        self.frozen = self.frozen.max(bound);
    }

    /// Tries every idle pod (lowest id first) and output bank for `op` in
    /// slice `l`, committing the first combination that routes.
    fn try_slot(&mut self, op: &TileOp, l: usize, head: Option<Head>) -> bool {
        let tg = self.tg;
        let xkey = self.place.x_key(tg, op);
        let wkey = self.place.w_key(tg, op);
        let (xbank, wbank) = (self.place.x_bank(xkey) as usize, self.place.w_bank(wkey) as usize);
        let psum_key = op.id;
        let reuse = self.opts.weight_reuse && l > 0;
        let (before, rest) = self.slices.split_at_mut(l);
        let prev_wkey = if reuse { Some(&before[l - 1].pod_wkey) } else { None };
        let s = &mut rest[0];
        let nets = s.nets.as_mut().expect("slice network state");
        if !nets[NET_X].source_available(xbank, xkey) {
            return false;
        }
        let w_open = nets[NET_W].source_available(wbank, wkey);
        let head_key = head.map(|h| match h.part {
            PartialRef::Op(id) => id,
            PartialRef::Add(id) => u32::MAX - 1 - id,
        });
        if let (Some(h), Some(k)) = (head, head_key) {
            if !nets[NET_PIN].source_available(h.bank as usize, k) {
                return false;
            }
        }
        let mut combos = 0usize;
        // a chained op first tries the pod beside the bank holding its partial
        let preferred = head
            .map(|h| h.bank as usize)
            .filter(|&p| p < self.pods && bit(&s.pod_free, p));
        let free_pods = s.pod_free.clone().into_iter().enumerate().flat_map(|(w, mut bits)| {
            std::iter::from_fn(move || {
                (bits != 0).then(|| {
                    let pod = w * 64 + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    pod
                })
            })
        });
        let candidates = preferred.into_iter().chain(free_pods.filter(move |&p| Some(p) != preferred));
        {
            for pod in candidates {
                let reused = prev_wkey.is_some_and(|v| v[pod] == wkey);
                if !reused && !w_open {
                    continue;
                }
                combos += 1;
                if combos > self.opts.max_combinations {
                    return false;
                }
                let Some(xleg) = nets[NET_X].probe(xbank, pod, xkey) else { continue };
                let wleg = if reused {
                    None
                } else {
                    match nets[NET_W].probe(wbank, pod, wkey) {
                        Some(leg) => Some(leg),
                        None => continue,
                    }
                };
                let pin = match (head, head_key) {
                    (Some(h), Some(k)) => match nets[NET_PIN].probe(h.bank as usize, pod, k) {
                        Some(leg) => Some(leg),
                        None => continue,
                    },
                    _ => None,
                };
                let mut pout: Option<Leg> = None;
                for t in 0..self.banks {
                    let bank = (pod + t) % self.banks;
                    if !nets[NET_POUT].dest_free(bank) {
                        continue;
                    }
                    if t > 0 {
                        combos += 1;
                        if combos > self.opts.max_combinations {
                            return false;
                        }
                    }
                    if let Some(leg) = nets[NET_POUT].probe(pod, bank, psum_key) {
                        pout = Some(leg);
                        break;
                    }
                }
                let Some(pout) = pout else { continue };
                nets[NET_X].commit(xleg);
                if let Some(leg) = wleg {
                    nets[NET_W].commit(leg);
                }
                if let Some(leg) = pin {
                    nets[NET_PIN].commit(leg);
                }
                nets[NET_POUT].commit(pout);
                clear(&mut s.pod_free, pod);
                s.ops += 1;
                s.pod_wkey[pod] = wkey;
                s.rec.pods.push(Assignment {
                    pod: pod as u32,
                    tile: op.id,
                    banks: BankRefs {
                        x: xbank as u32,
                        w: wleg.map(|_| wbank as u32),
                        psum_in: head.map(|h| h.bank),
                        psum_out: pout.dest as u32,
                    },
                    routes: Routes {
                        x: xleg.plane,
                        w: wleg.map(|l| l.plane),
                        psum_in: pin.map(|l| l.plane),
                        psum_out: pout.plane,
                    },
                    psum_from: head.map(|h| match h.part {
                        PartialRef::Op(id) => id,
                        PartialRef::Add(_) => unreachable!("only tile-op partials are chained"),
                    }),
                });
                return true;
            }
        }
        false
    }

    fn place_op(&mut self, op: &TileOp, heads: &mut Vec<Head>, chain: bool) {
        let earliest = self
            .tg
            .x_deps(op)
            .iter()
            .map(|&g| self.group_ready[g as usize])
            .max()
            .unwrap_or(0) as usize;
        let mut l = earliest.max(self.frozen).max(self.first_open);
        if chain {
            if let Some(r) = heads.iter().map(|h| h.ready).min() {
                l = l.max(r as usize);
            }
        }
        loop {
            self.ensure(l);
            if self.slices[l].ops as usize == self.pods {
                l += 1;
                continue;
            }
            let mut chained = false;
            for hi in 0..heads.len() {
                if heads[hi].ready as usize <= l && self.try_slot(op, l, Some(heads[hi])) {
                    heads.remove(hi);
                    chained = true;
                    break;
                }
            }
            if chained || self.try_slot(op, l, None) {
                break;
            }
            l += 1;
        }
        let a = self.slices[l].rec.pods.last().unwrap();
        heads.push(Head {
            ready: l as u32 + 1,
            bank: a.banks.psum_out,
            part: PartialRef::Op(op.id),
        });
        while self.first_open < self.slices.len() && self.slices[self.first_open].ops as usize == self.pods {
            self.first_open += 1;
        }
    }

    /// Earliest slice at or after `from` with a free post-processor (or
    /// pair); marks it busy.
    fn post_slot(&mut self, from: usize, pair: bool) -> (usize, usize) {
        let mut s = from;
        loop {
            while self.slices.len() <= s {
                self.slices.push(SliceState {
                    rec: SliceRecord::default(),
                    pod_free: full_bits(self.pods),
                    ops: 0,
                    pod_wkey: vec![NO_KEY; self.pods],
                    post_free: full_bits(self.post_units),
                    nets: None,
                });
            }
            let free = &mut self.slices[s].post_free;
            if pair {
                for q in 0..self.post_units / 2 {
                    if bit(free, 2 * q) && bit(free, 2 * q + 1) {
                        clear(free, 2 * q);
                        clear(free, 2 * q + 1);
                        return (s, 2 * q);
                    }
                }
            } else if let Some(u) = (0..self.post_units).find(|&u| bit(free, u)) {
                clear(free, u);
                return (s, u);
            }
            s += 1;
        }
    }

    /// Pairwise reduction of leftover partials, then the activation item.
    fn finish_group(&mut self, group: u32, mut heads: Vec<Head>) {
        let g = &self.tg.groups[group as usize];
        let (m, p) = (g.m, g.p);
        while heads.len() > 1 {
            heads.sort_by_key(|h| h.ready);
            let a = heads.remove(0);
            let b = heads.remove(0);
            let (s, unit) = self.post_slot(a.ready.max(b.ready) as usize, true);
            let id = self.next_add;
            self.next_add += 1;
            self.slices[s].rec.post.push(PostItem {
                unit: unit as u32,
                group,
                m,
                p,
                kind: PostKind::Add { id, a: a.part, b: b.part },
            });
            heads.push(Head {
                ready: s as u32 + 1,
                bank: a.bank,
                part: PartialRef::Add(id),
            });
        }
        let last = heads[0];
        let (s, unit) = self.post_slot(last.ready as usize, false);
        self.slices[s].rec.post.push(PostItem {
            unit: unit as u32,
            group,
            m,
            p,
            kind: PostKind::Activation { input: last.part },
        });
        self.group_ready[group as usize] = s as u32 + 1;
    }
}

pub fn schedule(tg: &TileGraph, pods: &PodConfig, banks: usize, nets: &InterconnectConfig) -> Result<Schedule> {
    schedule_with(tg, pods, banks, nets, &ScheduleOptions::default())
}

pub fn schedule_with(
    tg: &TileGraph,
    pods: &PodConfig,
    banks: usize,
    nets: &InterconnectConfig,
    opts: &ScheduleOptions,
) -> Result<Schedule> {
    pods.validate()?;
    nets.validate()?;
    if pods.pods == 0 || banks != pods.pods || nets.ports != pods.pods {
        return Err(Error::config(format!(
            "pods ({}), banks ({banks}) and network ports ({}) must be equal and nonzero",
            pods.pods, nets.ports
        )));
    }
    if pods.pods > u16::MAX as usize {
        return Err(Error::config("too many pods"));
    }
    if tg.shape.rows != pods.rows || tg.shape.cols != pods.cols {
        return Err(Error::config("tile shape does not match the pod array"));
    }
    let mut s = Scheduler {
        tg,
        place: Placement::new(tg, banks),
        pods: pods.pods,
        banks,
        post_units: pods.post_processors(),
        nets: *nets,
        opts: *opts,
        slices: Vec::new(),
        frozen: 0,
        first_open: 0,
        group_ready: vec![0; tg.groups.len()],
        next_add: 0,
    };

    let mut level = usize::MAX;
    let mut level_min = usize::MAX;
    let mut prev_level_min = 0usize;
    for layer in &tg.layers {
        if layer.level != level {
            if level != usize::MAX && level_min != usize::MAX {
                prev_level_min = level_min;
            }
            s.freeze_below(prev_level_min);
            level = layer.level;
            level_min = usize::MAX;
        }
        let chain = match opts.policy {
            AggregationPolicy::Chain => true,
            AggregationPolicy::Spread => false,
            AggregationPolicy::Auto => layer.groups.len() >= pods.pods,
        };
        for gid in layer.groups.clone() {
            let members = tg.groups[gid as usize].members.clone();
            let mut heads = Vec::new();
            for id in members {
                let op = tg.ops[id as usize];
                s.place_op(&op, &mut heads, chain);
                let slot = heads.last().unwrap().ready as usize - 1;
                level_min = level_min.min(slot);
            }
            s.finish_group(gid, heads);
        }
    }

    let slices = s.slices.into_iter().map(|st| st.rec).collect();
    Ok(Schedule {
        model: String::new(),
        tiling: tg.shape,
        config: ScheduleConfig {
            pods: *pods,
            banks,
            nets: *nets,
            options: *opts,
        },
        slices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Coverage,
    PodConflict,
    BankConflict,
    Routing,
    ReadAfterWrite,
    Aggregation,
    PostProcessor,
    WeightReuse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub slice: Option<usize>,
    pub detail: String,
}

fn violation(kind: ViolationKind, slice: Option<usize>, detail: String) -> Violation {
    Violation { kind, slice, detail }
}

/// Independently re-checks every schedule invariant, rebuilding each
/// slice's routing problems and re-deriving their paths from scratch.
pub fn validate(schedule: &Schedule, tg: &TileGraph, nets: &InterconnectConfig) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    let cfg = &schedule.config;
    let npods = cfg.pods.pods;
    let nbanks = cfg.banks;
    let post_units = cfg.pods.post_processors();
    let place = Placement::new(tg, nbanks);

    let mut op_slice: Vec<Option<usize>> = vec![None; tg.ops.len()];
    let mut by_op: Vec<Option<Assignment>> = vec![None; tg.ops.len()];
    for (l, s) in schedule.slices.iter().enumerate() {
        for a in &s.pods {
            match op_slice.get_mut(a.tile as usize) {
                None => out.push(violation(Coverage, Some(l), format!("unknown tile op {}", a.tile))),
                Some(Some(_)) => out.push(violation(Coverage, Some(l), format!("tile op {} assigned twice", a.tile))),
                Some(slot) => {
                    *slot = Some(l);
                    by_op[a.tile as usize] = Some(*a);
                }
            }
        }
    }
    let missing = op_slice.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        out.push(violation(Coverage, None, format!("{missing} tile ops unassigned")));
    }

    // per-slice exclusivity and routability
    for (l, s) in schedule.slices.iter().enumerate() {
        let mut pods_seen = HashMap::new();
        let mut src: [HashMap<u32, u64>; 4] = Default::default();
        let mut dst: [HashMap<u32, ()>; 4] = Default::default();
        let mut conflict = [false; 4];
        let mut legs: [Vec<(usize, usize, u8)>; 4] = Default::default();
        for a in &s.pods {
            if a.pod as usize >= npods || pods_seen.insert(a.pod, a.tile).is_some() {
                out.push(violation(PodConflict, Some(l), format!("pod {} reused or out of range", a.pod)));
                continue;
            }
            let Some(op) = tg.ops.get(a.tile as usize) else { continue };
            let bank_ok = |b: u32| (b as usize) < nbanks;
            let xkey = place.x_key(tg, op) as u64;
            let wkey = place.w_key(tg, op) as u64;
            let mut endpoints: Vec<(usize, u32, u64, u32, Option<u8>)> = vec![(NET_X, a.banks.x, xkey, a.pod, Some(a.routes.x))];
            if let Some(b) = a.banks.w {
                endpoints.push((NET_W, b, wkey, a.pod, a.routes.w));
            }
            if let Some(b) = a.banks.psum_in {
                let key = a.psum_from.map_or(u64::MAX, |p| p as u64);
                endpoints.push((NET_PIN, b, key, a.pod, a.routes.psum_in));
            }
            if !bank_ok(a.banks.x)
                || !bank_ok(a.banks.psum_out)
                || a.banks.w.is_some_and(|b| !bank_ok(b))
                || a.banks.psum_in.is_some_and(|b| !bank_ok(b))
            {
                out.push(violation(BankConflict, Some(l), format!("tile op {} names a bank out of range", a.tile)));
                continue;
            }
            if a.banks.w.is_some() != a.routes.w.is_some() || a.banks.psum_in.is_some() != a.routes.psum_in.is_some() {
                out.push(violation(Routing, Some(l), format!("tile op {} has legs without routes", a.tile)));
            }
            for (net, bank, key, pod, plane) in endpoints {
                match src[net].get(&bank) {
                    Some(&k) if k != key => {
                        conflict[net] = true;
                        out.push(violation(
                            BankConflict,
                            Some(l),
                            format!("bank {bank} serves two tiles on the {} network", NETWORK_NAMES[net]),
                        ));
                    }
                    _ => {
                        src[net].insert(bank, key);
                    }
                }
                legs[net].push((bank as usize, pod as usize, plane.unwrap_or(0)));
            }
            if dst[NET_POUT].insert(a.banks.psum_out, ()).is_some() {
                conflict[NET_POUT] = true;
                out.push(violation(BankConflict, Some(l), format!("bank {} written twice", a.banks.psum_out)));
            }
            legs[NET_POUT].push((a.pod as usize, a.banks.psum_out as usize, a.routes.psum_out));
        }
        for net in 0..4 {
            if conflict[net] || legs[net].is_empty() {
                continue;
            }
            let mut demands: Vec<Demand> = Vec::new();
            let mut planes: Vec<usize> = Vec::new();
            let mut index: HashMap<usize, usize> = HashMap::new();
            let mut mixed = false;
            for &(s_, d, plane) in &legs[net] {
                match index.get(&s_) {
                    Some(&i) => {
                        demands[i].dests.push(d);
                        mixed |= planes[i] != plane as usize;
                    }
                    None => {
                        index.insert(s_, demands.len());
                        demands.push(Demand::unicast(s_, d));
                        planes.push(plane as usize);
                    }
                }
            }
            let problem = RoutingProblem::new(demands);
            if mixed || !verify_assignment(nets, &problem, &planes) {
                out.push(violation(
                    Routing,
                    Some(l),
                    format!("{} network demands do not route", NETWORK_NAMES[net]),
                ));
            }
        }

        let mut units = vec![false; post_units];
        for item in &s.post {
            let width = if matches!(item.kind, PostKind::Add { .. }) { 2 } else { 1 };
            let u = item.unit as usize;
            if (width == 2 && !u.is_multiple_of(2)) || u + width > units.len() || units[u..u + width].iter().any(|&b| b) {
                out.push(violation(PostProcessor, Some(l), format!("post-processor {u} overbooked or misaligned")));
                continue;
            }
            units[u..u + width].iter_mut().for_each(|b| *b = true);
        }
    }

    // aggregation trees
    let mut partial_slice: HashMap<PartialRef, (usize, u32)> = HashMap::new();
    for (id, s) in op_slice.iter().enumerate() {
        if let Some(l) = s {
            partial_slice.insert(PartialRef::Op(id as u32), (*l, tg.ops[id].group));
        }
    }
    let mut consumed: HashMap<PartialRef, usize> = HashMap::new();
    let mut activation: Vec<Option<usize>> = vec![None; tg.groups.len()];
    for (id, a) in by_op.iter().enumerate() {
        let (Some(a), Some(l)) = (a, op_slice[id]) else { continue };
        if let Some(from) = a.psum_from {
            let key = PartialRef::Op(from);
            *consumed.entry(key).or_default() += 1;
            match (partial_slice.get(&key), by_op.get(from as usize).copied().flatten()) {
                (Some(&(pl, g)), Some(prod)) => {
                    if g != tg.ops[id].group {
                        out.push(violation(Aggregation, Some(l), format!("tile op {id} chains across groups")));
                    }
                    if pl >= l {
                        out.push(violation(ReadAfterWrite, Some(l), format!("tile op {id} reads a partial from slice {pl}")));
                    }
                    if a.banks.psum_in != Some(prod.banks.psum_out) {
                        out.push(violation(Aggregation, Some(l), format!("tile op {id} reads its partial from the wrong bank")));
                    }
                }
                _ => out.push(violation(Aggregation, Some(l), format!("tile op {id} chains an unknown partial"))),
            }
        }
    }
    // adds may consume other adds; process in slice order
    for (l, s) in schedule.slices.iter().enumerate() {
        for item in &s.post {
            let inputs: Vec<PartialRef> = match item.kind {
                PostKind::Add { a, b, .. } => vec![a, b],
                PostKind::Activation { input } => vec![input],
            };
            for p in &inputs {
                *consumed.entry(*p).or_default() += 1;
                match partial_slice.get(p) {
                    Some(&(pl, g)) => {
                        if pl >= l {
                            out.push(violation(ReadAfterWrite, Some(l), format!("post item reads {p:?} from slice {pl}")));
                        }
                        if g != item.group {
                            out.push(violation(Aggregation, Some(l), format!("post item mixes groups ({p:?})")));
                        }
                    }
                    None => out.push(violation(Aggregation, Some(l), format!("post item reads unknown partial {p:?}"))),
                }
            }
            match item.kind {
                PostKind::Add { id, .. } => {
                    if partial_slice.insert(PartialRef::Add(id), (l, item.group)).is_some() {
                        out.push(violation(Aggregation, Some(l), format!("add {id} recorded twice")));
                    }
                }
                PostKind::Activation { .. } => match activation.get_mut(item.group as usize) {
                    Some(slot @ None) => *slot = Some(l),
                    _ => out.push(violation(Aggregation, Some(l), format!("group {} activated twice", item.group))),
                },
            }
        }
    }
    for (p, n) in &consumed {
        if *n > 1 {
            out.push(violation(Aggregation, None, format!("partial {p:?} consumed {n} times")));
        }
    }
    for p in partial_slice.keys() {
        if !consumed.contains_key(p) {
            out.push(violation(Aggregation, None, format!("partial {p:?} never reduced")));
        }
    }
    for (g, a) in activation.iter().enumerate() {
        if a.is_none() {
            out.push(violation(Aggregation, None, format!("group {g} never activated")));
        }
    }

    // read-after-write on layer inputs
    for (id, l) in op_slice.iter().enumerate() {
        let Some(l) = *l else { continue };
        for &g in tg.x_deps(&tg.ops[id]) {
            if let Some(act) = activation[g as usize] {
                if act >= l {
                    out.push(violation(
                        ReadAfterWrite,
                        Some(l),
                        format!("tile op {id} reads group {g} activated in slice {act}"),
                    ));
                }
            }
        }
    }

    // weight reuse needs the same tile on the same pod one slice earlier
    for (id, a) in by_op.iter().enumerate() {
        let (Some(a), Some(l)) = (a, op_slice[id]) else { continue };
        if a.banks.w.is_some() {
            continue;
        }
        let wkey = place.w_key(tg, &tg.ops[id]);
        let ok = l > 0
            && schedule.slices[l - 1]
                .pods
                .iter()
                .any(|b| b.pod == a.pod && tg.ops.get(b.tile as usize).is_some_and(|o| place.w_key(tg, o) == wkey));
        if !ok {
            out.push(violation(WeightReuse, Some(l), format!("tile op {id} skips a weight load it cannot reuse")));
        }
    }
    out
}
