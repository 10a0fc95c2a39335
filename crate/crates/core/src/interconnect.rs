//! Pod/bank interconnects: Butterfly-k, Benes with a copy network, and a
//! crossbar.
//!
//! A Butterfly-k is `k` parallel planes of a `log2 N`-stage butterfly of 2x2
//! switches. Within a plane every (source, destination) pair has exactly one
//! destination-tag path; a multicast is the union of its paths (a tree). A
//! demand set routes when its demands can be spread over the planes so that
//! no directed link in a plane carries two different sources.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Butterfly,
    BenesCopy,
    Crossbar,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "butterfly" => Ok(Topology::Butterfly),
            "benes" | "benes_copy" => Ok(Topology::BenesCopy),
            "crossbar" => Ok(Topology::Crossbar),
            _ => Err(Error::config(format!("unknown topology {s}"))),
        }
    }
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Topology::Butterfly => "butterfly",
            Topology::BenesCopy => "benes_copy",
            Topology::Crossbar => "crossbar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterconnectConfig {
    pub topology: Topology,
    pub ports: usize,
    /// Number of butterfly planes; ignored by the other topologies.
    pub expansion: usize,
    /// Bytes per cycle per link.
    pub link_width: usize,
    /// Cycles per registered stage.
    pub stage_latency: u32,
}

impl InterconnectConfig {
    pub fn new(topology: Topology, ports: usize, expansion: usize) -> Self {
        InterconnectConfig {
            topology,
            ports,
            expansion: expansion.max(1),
            link_width: 32,
            stage_latency: 1,
        }
    }

    pub fn butterfly(ports: usize, expansion: usize) -> Self {
        Self::new(Topology::Butterfly, ports, expansion)
    }

    pub fn crossbar(ports: usize) -> Self {
        Self::new(Topology::Crossbar, ports, 1)
    }

    pub fn benes_copy(ports: usize) -> Self {
        Self::new(Topology::BenesCopy, ports, 1)
    }

    pub fn with_ports(mut self, ports: usize) -> Self {
        self.ports = ports;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ports == 0 || !self.ports.is_power_of_two() {
            return Err(Error::config(format!("port count {} is not a power of two", self.ports)));
        }
        if self.expansion == 0 {
            return Err(Error::config("expansion must be at least 1"));
        }
        Ok(())
    }

    pub fn log_ports(&self) -> u32 {
        self.ports.trailing_zeros()
    }

    /// Planes actually instantiated.
    pub fn planes(&self) -> usize {
        match self.topology {
            Topology::Butterfly => self.expansion,
            _ => 1,
        }
    }

    /// One-way traversal latency in cycles.
    pub fn latency(&self) -> u32 {
        let log = self.log_ports();
        let stages = match self.topology {
            Topology::Butterfly => log + 1,
            Topology::Crossbar => 1,
            Topology::BenesCopy => (2 * (2 * log).saturating_sub(1)).max(1),
        };
        stages * self.stage_latency
    }

    /// Request plus response traversal.
    pub fn round_trip(&self) -> u32 {
        2 * self.latency()
    }
}

/// One-way latency, free-function form.
pub fn latency(cfg: &InterconnectConfig) -> u32 {
    cfg.latency()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub source: usize,
    pub dests: Vec<usize>,
}

impl Demand {
    pub fn unicast(source: usize, dest: usize) -> Self {
        Demand {
            source,
            dests: vec![dest],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingProblem {
    pub demands: Vec<Demand>,
}

impl RoutingProblem {
    pub fn new(demands: Vec<Demand>) -> Self {
        RoutingProblem { demands }
    }

    pub fn unicasts(pairs: &[(usize, usize)]) -> Self {
        RoutingProblem {
            demands: pairs.iter().map(|&(s, d)| Demand::unicast(s, d)).collect(),
        }
    }

    /// Checks endpoint exclusivity: each source and each destination used once.
    pub fn validate(&self, ports: usize) -> Result<()> {
        if self.demands.len() > ports {
            return Err(Error::validation("more demands than ports"));
        }
        let mut src_seen = vec![false; ports];
        let mut dst_seen = vec![false; ports];
        for d in &self.demands {
            if d.source >= ports || d.dests.iter().any(|&x| x >= ports) {
                return Err(Error::validation("port index out of range"));
            }
            if d.dests.is_empty() {
                return Err(Error::validation("demand without destination"));
            }
            if std::mem::replace(&mut src_seen[d.source], true) {
                return Err(Error::validation(format!("duplicate source {}", d.source)));
            }
            for &x in &d.dests {
                if std::mem::replace(&mut dst_seen[x], true) {
                    return Err(Error::validation(format!("duplicate destination {x}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingResult {
    pub feasible: bool,
    /// Plane of each demand, in problem order (empty when infeasible).
    pub planes: Vec<usize>,
    pub latency: u32,
    /// Search nodes visited (butterfly only).
    pub nodes: usize,
}

/// Maximum backtracking nodes per problem; exhaustion counts as infeasible.
pub const BUTTERFLY_NODE_BUDGET: usize = 10_000;

const FREE: u16 = u16::MAX;

/// Output link ids of the destination-tag path from `src` to `dst`: after
/// stage `t` the row has its `t` most significant bits replaced by the
/// destination's.
#[inline]
pub fn butterfly_path(bits: u32, src: usize, dst: usize) -> impl Iterator<Item = usize> {
    let n = 1usize << bits;
    let mut row = src;
    (0..bits).map(move |t| {
        let b = bits - 1 - t;
        row = (row & !(1 << b)) | (dst & (1 << b));
        t as usize * n + row
    })
}

fn tree_links(bits: u32, demand: &Demand) -> Vec<usize> {
    let mut links: Vec<usize> = demand
        .dests
        .iter()
        .flat_map(|&d| butterfly_path(bits, demand.source, d))
        .collect();
    links.sort_unstable();
    links.dedup();
    links
}

pub fn route(cfg: &InterconnectConfig, problem: &RoutingProblem) -> Result<RoutingResult> {
    match cfg.topology {
        Topology::Butterfly => route_butterfly_k(cfg, problem),
        Topology::Crossbar => route_crossbar(cfg, problem),
        Topology::BenesCopy => route_benes_copy(cfg, problem),
    }
}

fn nonblocking(cfg: &InterconnectConfig, problem: &RoutingProblem) -> Result<RoutingResult> {
    cfg.validate()?;
    problem.validate(cfg.ports)?;
    Ok(RoutingResult {
        feasible: true,
        planes: vec![0; problem.demands.len()],
        latency: cfg.latency(),
        nodes: 0,
    })
}

pub fn route_crossbar(cfg: &InterconnectConfig, problem: &RoutingProblem) -> Result<RoutingResult> {
    nonblocking(cfg, problem)
}

/// Benes plus copy network: full combinatorial power including multicast,
/// paid for in latency. Switch settings are not materialized.
pub fn route_benes_copy(cfg: &InterconnectConfig, problem: &RoutingProblem) -> Result<RoutingResult> {
    nonblocking(cfg, problem)
}

pub fn route_butterfly_k(cfg: &InterconnectConfig, problem: &RoutingProblem) -> Result<RoutingResult> {
    cfg.validate()?;
    problem.validate(cfg.ports)?;
    let bits = cfg.log_ports();
    let k = cfg.planes();
    let mut order: Vec<usize> = (0..problem.demands.len()).collect();
    order.sort_by_key(|&i| problem.demands[i].source);
    let trees: Vec<Vec<usize>> = order.iter().map(|&i| tree_links(bits, &problem.demands[i])).collect();
    let sources: Vec<u16> = order.iter().map(|&i| problem.demands[i].source as u16).collect();

    struct Search<'a> {
        trees: &'a [Vec<usize>],
        sources: &'a [u16],
        owners: Vec<Vec<u16>>,
        chosen: Vec<usize>,
        nodes: usize,
    }

    impl Search<'_> {
        fn place(&mut self, depth: usize) -> Option<bool> {
            if depth == self.trees.len() {
                return Some(true);
            }
            for plane in 0..self.owners.len() {
                self.nodes += 1;
                if self.nodes > BUTTERFLY_NODE_BUDGET {
                    return None;
                }
                let src = self.sources[depth];
                let owners = &mut self.owners[plane];
                if self.trees[depth].iter().any(|&l| owners[l] != FREE && owners[l] != src) {
                    continue;
                }
                for &l in &self.trees[depth] {
                    owners[l] = src;
                }
                self.chosen[depth] = plane;
                match self.place(depth + 1) {
                    Some(true) => return Some(true),
                    None => return None,
                    Some(false) => {}
                }
                for &l in &self.trees[depth] {
                    self.owners[plane][l] = FREE;
                }
            }
            Some(false)
        }
    }

    let links = bits as usize * cfg.ports;
    let mut search = Search {
        trees: &trees,
        sources: &sources,
        owners: vec![vec![FREE; links]; k],
        chosen: vec![0; trees.len()],
        nodes: 0,
    };
    let feasible = search.place(0).unwrap_or(false);
    let mut planes = Vec::new();
    if feasible {
        planes = vec![0; order.len()];
        for (depth, &i) in order.iter().enumerate() {
            planes[i] = search.chosen[depth];
        }
    }
    Ok(RoutingResult {
        feasible,
        planes,
        latency: cfg.latency(),
        nodes: search.nodes,
    })
}

/// Recomputes every path of a recorded plane assignment from scratch and
/// checks endpoint exclusivity and link disjointness.
pub fn verify_assignment(cfg: &InterconnectConfig, problem: &RoutingProblem, planes: &[usize]) -> bool {
    if cfg.validate().is_err() || problem.validate(cfg.ports).is_err() {
        return false;
    }
    if cfg.topology != Topology::Butterfly {
        return true;
    }
    if planes.len() != problem.demands.len() || planes.iter().any(|&p| p >= cfg.planes()) {
        return false;
    }
    let bits = cfg.log_ports();
    let mut owners = vec![vec![FREE; bits as usize * cfg.ports]; cfg.planes()];
    for (d, &plane) in problem.demands.iter().zip(planes) {
        for l in tree_links(bits, d) {
            let slot = &mut owners[plane][l];
            if *slot != FREE && *slot != d.source as u16 {
                return false;
            }
            *slot = d.source as u16;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub switches: u64,
    /// Power per byte/cycle of sustained bandwidth, in mW.
    pub power_per_byte_mw: f64,
}

/// Measured mW/byte at 256 ports for the calibrated design points.
const REFERENCE_PORTS: f64 = 256.0;
const BUTTERFLY_MW_PER_BYTE: [(usize, f64); 4] = [(1, 0.23), (2, 0.52), (4, 1.15), (8, 2.53)];
const BENES_MW_PER_BYTE: f64 = 0.92;
const CROSSBAR_MW_PER_BYTE: f64 = 7.36;

fn butterfly_reference(k: usize) -> f64 {
    let table = &BUTTERFLY_MW_PER_BYTE;
    if let Some(&(_, v)) = table.iter().find(|&&(kk, _)| kk == k) {
        return v;
    }
    let (last_k, last_v) = table[table.len() - 1];
    if k > last_k {
        return last_v * k as f64 / last_k as f64;
    }
    let hi = table.iter().position(|&(kk, _)| kk > k).unwrap();
    let ((k0, v0), (k1, v1)) = (table[hi - 1], table[hi]);
    v0 + (v1 - v0) * (k - k0) as f64 / (k1 - k0) as f64
}

/// Switch counts and power per byte. The power column is a calibration
/// table at 256 ports, scaled to other port counts by switches traversed per
/// byte (stage count) or, for the crossbar, by port count.
pub fn cost_model(cfg: &InterconnectConfig) -> CostModel {
    let n = cfg.ports as u64;
    let log = cfg.log_ports() as u64;
    let ref_log = REFERENCE_PORTS.log2();
    match cfg.topology {
        Topology::Butterfly => CostModel {
            switches: cfg.expansion as u64 * (n / 2) * log,
            power_per_byte_mw: butterfly_reference(cfg.expansion) * log as f64 / ref_log,
        },
        Topology::BenesCopy => CostModel {
            switches: 2 * n * log,
            power_per_byte_mw: BENES_MW_PER_BYTE * (2.0 * log as f64 - 1.0).max(0.0) / (2.0 * ref_log - 1.0),
        },
        Topology::Crossbar => CostModel {
            switches: n * n,
            power_per_byte_mw: CROSSBAR_MW_PER_BYTE * n as f64 / REFERENCE_PORTS,
        },
    }
}

/// Per-slice routing state of one physical network, grown one unicast leg
/// at a time by the scheduler.
#[derive(Debug, Clone)]
pub struct NetworkSlice {
    bits: u32,
    ports: usize,
    butterfly: bool,
    /// Tile key held on each source port this slice.
    source_key: Vec<u32>,
    source_plane: Vec<u8>,
    dest_used: Vec<bool>,
    owners: Vec<Vec<u16>>,
}

/// Result of a successful tentative placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leg {
    pub source: usize,
    pub dest: usize,
    pub key: u32,
    pub plane: u8,
}

pub const NO_KEY: u32 = u32::MAX;

impl NetworkSlice {
    pub fn new(cfg: &InterconnectConfig) -> Self {
        let butterfly = cfg.topology == Topology::Butterfly;
        let bits = cfg.log_ports();
        let planes = if butterfly { cfg.planes() } else { 0 };
        NetworkSlice {
            bits,
            ports: cfg.ports,
            butterfly,
            source_key: vec![NO_KEY; cfg.ports],
            source_plane: vec![0; cfg.ports],
            dest_used: vec![false; cfg.ports],
            owners: vec![vec![FREE; bits as usize * cfg.ports]; planes],
        }
    }

    pub fn source_key(&self, source: usize) -> u32 {
        self.source_key[source]
    }

    /// Whether `source` could send `key` this slice (free, or already
    /// multicasting the same tile).
    pub fn source_available(&self, source: usize, key: u32) -> bool {
        let held = self.source_key[source];
        held == NO_KEY || held == key
    }

    pub fn dest_free(&self, dest: usize) -> bool {
        !self.dest_used[dest]
    }

    fn path_fits(&self, plane: usize, source: usize, dest: usize) -> bool {
        let owners = &self.owners[plane];
        let src = source as u16;
        butterfly_path(self.bits, source, dest).all(|l| owners[l] == FREE || owners[l] == src)
    }

    /// Finds a plane for the leg without committing it. A source already
    /// active this slice extends its multicast tree in its existing plane.
    pub fn probe(&self, source: usize, dest: usize, key: u32) -> Option<Leg> {
        debug_assert!(source < self.ports && dest < self.ports);
        if self.dest_used[dest] || !self.source_available(source, key) {
            return None;
        }
        if !self.butterfly {
            return Some(Leg { source, dest, key, plane: 0 });
        }
        if self.source_key[source] != NO_KEY {
            let plane = self.source_plane[source] as usize;
            return self.path_fits(plane, source, dest).then_some(Leg {
                source,
                dest,
                key,
                plane: plane as u8,
            });
        }
        (0..self.owners.len())
            .find(|&p| self.path_fits(p, source, dest))
            .map(|p| Leg {
                source,
                dest,
                key,
                plane: p as u8,
            })
    }

    pub fn commit(&mut self, leg: Leg) {
        self.dest_used[leg.dest] = true;
        self.source_key[leg.source] = leg.key;
        self.source_plane[leg.source] = leg.plane;
        if self.butterfly {
            let owners = &mut self.owners[leg.plane as usize];
            for l in butterfly_path(self.bits, leg.source, leg.dest) {
                owners[l] = leg.source as u16;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    #[test]
    fn latencies_at_256_ports() {
        assert_eq!(InterconnectConfig::butterfly(256, 2).latency(), 9);
        assert_eq!(InterconnectConfig::butterfly(256, 8).latency(), 9);
        assert_eq!(InterconnectConfig::crossbar(256).latency(), 1);
        assert_eq!(InterconnectConfig::benes_copy(256).latency(), 30);
        assert_eq!(InterconnectConfig::benes_copy(2).latency(), 2);
    }

    #[test]
    fn switch_counts() {
        assert_eq!(cost_model(&InterconnectConfig::butterfly(2, 1)).switches, 1);
        assert_eq!(cost_model(&InterconnectConfig::butterfly(256, 2)).switches, 2 * 128 * 8);
        assert_eq!(cost_model(&InterconnectConfig::benes_copy(256)).switches, 2 * 256 * 8);
        assert_eq!(cost_model(&InterconnectConfig::crossbar(256)).switches, 65536);
    }

    #[test]
    fn calibrated_power_per_byte() {
        let ppb = |c: InterconnectConfig| cost_model(&c).power_per_byte_mw;
        assert!((ppb(InterconnectConfig::butterfly(256, 1)) - 0.23).abs() < 1e-12);
        assert!((ppb(InterconnectConfig::butterfly(256, 2)) - 0.52).abs() < 1e-12);
        assert!((ppb(InterconnectConfig::butterfly(256, 4)) - 1.15).abs() < 1e-12);
        assert!((ppb(InterconnectConfig::butterfly(256, 8)) - 2.53).abs() < 1e-12);
        assert!((ppb(InterconnectConfig::benes_copy(256)) - 0.92).abs() < 1e-12);
        assert!((ppb(InterconnectConfig::crossbar(256)) - 7.36).abs() < 1e-12);
        assert!(ppb(InterconnectConfig::butterfly(64, 2)) < 0.52);
        assert_eq!(ppb(InterconnectConfig::butterfly(1, 2)), 0.0);
    }

    #[test]
    fn identity_routes_on_single_plane() {
        let cfg = InterconnectConfig::butterfly(8, 1);
        let pairs: Vec<(usize, usize)> = (0..8).map(|i| (i, i)).collect();
        assert!(route(&cfg, &RoutingProblem::unicasts(&pairs)).unwrap().feasible);
    }

    #[test]
    fn full_replication_routes_everything() {
        let cfg = InterconnectConfig::butterfly(8, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut dests: Vec<usize> = (0..8).collect();
            dests.shuffle(&mut rng);
            let pairs: Vec<(usize, usize)> = (0..8).map(|s| (s, dests[s])).collect();
            assert!(route(&cfg, &RoutingProblem::unicasts(&pairs)).unwrap().feasible);
        }
    }

    #[test]
    fn duplicate_destination_rejected() {
        let p = RoutingProblem::unicasts(&[(0, 1), (2, 1)]);
        for cfg in [
            InterconnectConfig::butterfly(8, 2),
            InterconnectConfig::crossbar(8),
            InterconnectConfig::benes_copy(8),
        ] {
            assert!(matches!(route(&cfg, &p), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn crossbar_full_permutation() {
        let cfg = InterconnectConfig::crossbar(256);
        let pairs: Vec<(usize, usize)> = (0..256).map(|i| (i, 255 - i)).collect();
        let r = route(&cfg, &RoutingProblem::unicasts(&pairs)).unwrap();
        assert!(r.feasible);
        assert_eq!(r.latency, 1);
    }

    #[test]
    fn benes_is_nonblocking_with_multicast() {
        let cfg = InterconnectConfig::benes_copy(256);
        let p = RoutingProblem::new(vec![Demand {
            source: 3,
            dests: (0..128).collect(),
        }]);
        let r = route(&cfg, &p).unwrap();
        assert!(r.feasible);
        assert_eq!(r.latency, 30);
    }

    #[test]
    fn paths_are_unique_with_log_hops() {
        // explicit graph: stage t joins row x to x and x ^ (1 << (bits-1-t))
        for bits in 1..=4u32 {
            let n = 1usize << bits;
            for s in 0..n {
                for d in 0..n {
                    let mut found = Vec::new();
                    let mut stack = vec![(0u32, s, Vec::<usize>::new())];
                    while let Some((t, row, links)) = stack.pop() {
                        if t == bits {
                            if row == d {
                                found.push(links);
                            }
                            continue;
                        }
                        for next in [row, row ^ (1 << (bits - 1 - t))] {
                            let mut l = links.clone();
                            l.push(t as usize * n + next);
                            stack.push((t + 1, next, l));
                        }
                    }
                    assert_eq!(found.len(), 1, "bits={bits} s={s} d={d}");
                    let path: Vec<usize> = butterfly_path(bits, s, d).collect();
                    assert_eq!(path.len(), bits as usize);
                    assert_eq!(found[0], path);
                }
            }
        }
    }

    fn random_problem(rng: &mut impl Rng, n: usize) -> RoutingProblem {
        let mut srcs: Vec<usize> = (0..n).collect();
        let mut dsts: Vec<usize> = (0..n).collect();
        srcs.shuffle(rng);
        dsts.shuffle(rng);
        let demands = rng.gen_range(1..=n);
        let mut out = Vec::new();
        let mut next = 0;
        for &s in srcs.iter().take(demands) {
            if next == n {
                break;
            }
            let fan = rng.gen_range(1..=(n - next).min(3));
            out.push(Demand {
                source: s,
                dests: dsts[next..next + fan].to_vec(),
            });
            next += fan;
        }
        RoutingProblem::new(out)
    }

    #[test]
    fn feasibility_is_monotone_in_expansion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let p = random_problem(&mut rng, 16);
            let mut prev = false;
            for k in 1..=4 {
                let f = route(&InterconnectConfig::butterfly(16, k), &p).unwrap().feasible;
                assert!(!prev || f);
                prev = f;
            }
        }
    }

    #[test]
    fn recorded_planes_verify() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = random_problem(&mut rng, 8);
            let cfg = InterconnectConfig::butterfly(8, 2);
            let r = route(&cfg, &p).unwrap();
            if r.feasible {
                assert!(verify_assignment(&cfg, &p, &r.planes));
            }
        }
    }

    #[test]
    fn incremental_slice_agrees_with_verifier() {
        let cfg = InterconnectConfig::butterfly(16, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let mut net = NetworkSlice::new(&cfg);
            let mut legs = Vec::new();
            for _ in 0..24 {
                let (s, d) = (rng.gen_range(0..16), rng.gen_range(0..16));
                if let Some(leg) = net.probe(s, d, s as u32) {
                    net.commit(leg);
                    legs.push(leg);
                }
            }
            let mut demands: Vec<Demand> = Vec::new();
            let mut planes = Vec::new();
            for leg in &legs {
                match demands.iter().position(|d| d.source == leg.source) {
                    Some(i) => demands[i].dests.push(leg.dest),
                    None => {
                        demands.push(Demand::unicast(leg.source, leg.dest));
                        planes.push(leg.plane as usize);
                    }
                }
            }
            assert!(verify_assignment(&cfg, &RoutingProblem::new(demands), &planes));
        }
    }
}
