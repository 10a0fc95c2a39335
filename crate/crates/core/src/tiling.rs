//! Partitioning of GEMMs into pod-sized tile operations.
//!
//! A tile op computes `x_ij * w_jk (+ psum) -> y_ijk` where `x_ij` is at most
//! `kpart x r`, `w_jk` at most `r x c`. All ops sharing `(layer, i, k)` form
//! an aggregation group whose partial outputs sum to the final tile `y_ik`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::workload::{GemmSpec, ModelGraph};

/// Row-partition length of the activation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Slice X's first dimension into blocks of this many rows.
    Rows(usize),
    /// Keep X's first dimension whole (one row block per layer).
    Unpartitioned,
}

impl Partition {
    pub fn rows_for(self, d1: usize) -> usize {
        match self {
            Partition::Rows(k) => k.max(1),
            Partition::Unpartitioned => d1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileShape {
    pub rows: usize,
    pub cols: usize,
    pub partition: Partition,
}

impl TileShape {
    /// Square `r x r` activation partitioning.
    pub fn new(rows: usize, cols: usize) -> Self {
        TileShape {
            rows,
            cols,
            partition: Partition::Rows(rows),
        }
    }

    pub fn with_partition(mut self, partition: Partition) -> Self {
        self.partition = partition;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileOp {
    pub id: u32,
    pub layer: u32,
    pub i: u32,
    pub j: u32,
    pub k: u32,
    /// x-tile rows (execution length in cycles).
    pub m: u32,
    /// x-tile columns = w-tile rows (weight load length).
    pub n: u32,
    /// w-tile columns.
    pub p: u32,
    pub group: u32,
}

impl TileOp {
    pub fn macs(&self) -> u64 {
        self.m as u64 * self.n as u64 * self.p as u64
    }

    pub fn x_bytes(&self) -> u64 {
        self.m as u64 * self.n as u64
    }

    pub fn w_bytes(&self) -> u64 {
        self.n as u64 * self.p as u64
    }

    pub fn psum_bytes(&self) -> u64 {
        2 * self.m as u64 * self.p as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationGroup {
    pub id: u32,
    pub layer: u32,
    pub i: u32,
    pub k: u32,
    pub m: u32,
    pub p: u32,
    /// Member op ids, ordered by reduction index `j`.
    pub members: Range<u32>,
}

impl AggregationGroup {
    pub fn arity(&self) -> usize {
        (self.members.end - self.members.start) as usize
    }

    /// Bytes of the final 8-bit activation tile.
    pub fn output_bytes(&self) -> u64 {
        self.m as u64 * self.p as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiles {
    pub model: usize,
    pub gemm: GemmSpec,
    /// Producing layers, as indices into [`TileGraph::layers`].
    pub preds: Vec<usize>,
    pub level: usize,
    pub row_len: usize,
    pub i_tiles: usize,
    pub j_tiles: usize,
    pub k_tiles: usize,
    pub ops: Range<u32>,
    pub groups: Range<u32>,
    /// Offset of this layer's x-tiles in the dependence table.
    pub x_base: usize,
}

impl LayerTiles {
    pub fn x_index(&self, i: u32, j: u32) -> usize {
        self.x_base + i as usize * self.j_tiles + j as usize
    }

    pub fn group_id(&self, i: u32, k: u32) -> u32 {
        self.groups.start + i * self.k_tiles as u32 + k
    }
}

/// Tile ops of one or more models, in scheduler visit order: layers by
/// dependence level, then `(i, k, j)` within a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGraph {
    pub shape: TileShape,
    pub layers: Vec<LayerTiles>,
    pub ops: Vec<TileOp>,
    pub groups: Vec<AggregationGroup>,
    dep_offsets: Vec<u32>,
    dep_groups: Vec<u32>,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Tile ops of one GEMM in `(i, k, j)` order, group ids local to the layer.
pub fn partition_gemm(g: &GemmSpec, shape: TileShape) -> Vec<TileOp> {
    let mut ops = Vec::new();
    push_layer_ops(&mut ops, g, shape, 0, 0);
    ops
}

fn push_layer_ops(ops: &mut Vec<TileOp>, g: &GemmSpec, shape: TileShape, layer: u32, group_base: u32) {
    let (r, c) = (shape.rows, shape.cols);
    let kp = shape.partition.rows_for(g.d1);
    let (it, jt, kt) = (ceil_div(g.d1, kp), ceil_div(g.d2, r), ceil_div(g.d3, c));
    ops.reserve(it * jt * kt);
    for i in 0..it {
        let m = kp.min(g.d1 - i * kp);
        for k in 0..kt {
            let p = c.min(g.d3 - k * c);
            let group = group_base + (i * kt + k) as u32;
            for j in 0..jt {
                let n = r.min(g.d2 - j * r);
                ops.push(TileOp {
                    id: ops.len() as u32,
                    layer,
                    i: i as u32,
                    j: j as u32,
                    k: k as u32,
                    m: m as u32,
                    n: n as u32,
                    p: p as u32,
                    group,
                });
            }
        }
    }
}

/// Tile sizes in bytes (8-bit activations and weights, 16-bit partial sums).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingSet {
    pub x_tile: u64,
    pub w_tile: u64,
    pub psum_tile: u64,
    pub x_total: u64,
    pub w_total: u64,
    pub psum_total: u64,
}

pub fn tile_working_set(g: &GemmSpec, shape: TileShape) -> WorkingSet {
    let kp = shape.partition.rows_for(g.d1);
    let m = kp.min(g.d1) as u64;
    let n = shape.rows.min(g.d2) as u64;
    let p = shape.cols.min(g.d3) as u64;
    let j_tiles = ceil_div(g.d2, shape.rows) as u64;
    WorkingSet {
        x_tile: m * n,
        w_tile: n * p,
        psum_tile: 2 * m * p,
        x_total: g.d1 as u64 * g.d2 as u64,
        w_total: g.d2 as u64 * g.d3 as u64,
        psum_total: 2 * g.d1 as u64 * g.d3 as u64 * j_tiles,
    }
}

/// Producer rows `[lo, hi)` feeding consumer rows `[a, b)`.
fn row_band(consumer: &GemmSpec, producer: &GemmSpec, a: usize, b: usize) -> (usize, usize) {
    let batch = consumer.batch.max(1);
    let per_c = consumer.d1 / batch;
    let per_p = producer.d1 / producer.batch.max(1);
    let (img_a, img_b) = (a / per_c, (b - 1) / per_c);
    if img_a != img_b || per_c == 0 {
        return (img_a * per_p, ((img_b + 1) * per_p).min(producer.d1));
    }
    let (ra, rb) = (a % per_c, (b - 1) % per_c + 1);
    // fraction of the consumer's input image that these rows read
    let (f_lo, f_hi) = match consumer.conv {
        Some(cv) => {
            let oh_a = ra / cv.out_w;
            let oh_b = (rb - 1) / cv.out_w;
            let pad = (cv.k_h - 1) / 2;
            let ih_lo = (oh_a * cv.stride).saturating_sub(pad);
            let ih_hi = (oh_b * cv.stride + cv.k_h - pad).min(cv.in_h);
            (ih_lo as f64 / cv.in_h as f64, ih_hi as f64 / cv.in_h as f64)
        }
        None => (ra as f64 / per_c as f64, rb as f64 / per_c as f64),
    };
    let (h_p, w_p) = match producer.conv {
        Some(pv) => (pv.out_h, pv.out_w),
        None => (per_p, 1),
    };
    let lo = ((f_lo * h_p as f64).floor() as usize).min(h_p.saturating_sub(1)) * w_p;
    let hi = (((f_hi * h_p as f64).ceil() as usize).clamp(1, h_p) * w_p).max(lo + 1);
    (img_a * per_p + lo, (img_a * per_p + hi).min(producer.d1))
}

/// Channel intervals touched by consumer columns `[a, b)` of X.
fn channel_span(channels: usize, a: usize, b: usize) -> Vec<(usize, usize)> {
    if b - a >= channels {
        return vec![(0, channels)];
    }
    let (lo, hi) = (a % channels, (b - 1) % channels + 1);
    if lo < hi {
        vec![(lo, hi)]
    } else {
        vec![(lo, channels), (0, hi)]
    }
}

impl TileGraph {
    pub fn from_model(model: &ModelGraph, shape: TileShape) -> TileGraph {
        TileGraph::build(std::slice::from_ref(model), shape)
    }

    /// Tiles several independent models into one graph so they can be
    /// co-scheduled.
    pub fn build(models: &[ModelGraph], shape: TileShape) -> TileGraph {
        assert!(shape.rows > 0 && shape.cols > 0, "array dimensions must be positive");
        // Levels of shallower models are stretched to the deepest model's
        // depth so co-scheduled work interleaves over the whole run instead
        // of piling into its first stages. Stretching by a factor >= 1 keeps
        // every dependency on a strictly lower level.
        let all_levels: Vec<Vec<usize>> = models.iter().map(|m| m.levels()).collect();
        let depth = |l: &Vec<usize>| l.iter().max().map_or(1, |&d| d + 1);
        let deepest = all_levels.iter().map(depth).max().unwrap_or(1);
        let mut order: Vec<(usize, usize, usize)> = Vec::new();
        for (mi, model) in models.iter().enumerate() {
            let levels = &all_levels[mi];
            let d = depth(levels);
            for &li in model.order() {
                order.push((levels[li] * deepest / d, mi, li));
            }
        }
        order.sort();

        let mut global_of: Vec<Vec<usize>> = models.iter().map(|m| vec![0; m.layers.len()]).collect();
        for (pos, &(_, mi, li)) in order.iter().enumerate() {
            global_of[mi][li] = pos;
        }

        let mut ops = Vec::new();
        let mut groups = Vec::new();
        let mut layers = Vec::with_capacity(order.len());
        let mut x_base = 0usize;
        for (pos, &(level, mi, li)) in order.iter().enumerate() {
            let gemm = models[mi].layers[li].clone();
            let row_len = shape.partition.rows_for(gemm.d1);
            let (it, jt, kt) = (
                ceil_div(gemm.d1, row_len),
                ceil_div(gemm.d2, shape.rows),
                ceil_div(gemm.d3, shape.cols),
            );
            let op_start = ops.len() as u32;
            let group_start = groups.len() as u32;
            push_layer_ops(&mut ops, &gemm, shape, pos as u32, group_start);
            for i in 0..it {
                let m = row_len.min(gemm.d1 - i * row_len) as u32;
                for k in 0..kt {
                    let p = shape.cols.min(gemm.d3 - k * shape.cols) as u32;
                    let first = op_start + ((i * kt + k) * jt) as u32;
                    groups.push(AggregationGroup {
                        id: groups.len() as u32,
                        layer: pos as u32,
                        i: i as u32,
                        k: k as u32,
                        m,
                        p,
                        members: first..first + jt as u32,
                    });
                }
            }
            let preds = gemm.predecessors.iter().map(|&p| global_of[mi][p]).collect();
            layers.push(LayerTiles {
                model: mi,
                gemm,
                preds,
                level,
                row_len,
                i_tiles: it,
                j_tiles: jt,
                k_tiles: kt,
                ops: op_start..ops.len() as u32,
                groups: group_start..groups.len() as u32,
                x_base,
            });
            x_base += it * jt;
        }

        let mut graph = TileGraph {
            shape,
            layers,
            ops,
            groups,
            dep_offsets: Vec::with_capacity(x_base + 1),
            dep_groups: Vec::new(),
        };
        graph.build_dependences();
        graph
    }

    fn build_dependences(&mut self) {
        let mut offsets = vec![0u32];
        let mut deps = Vec::new();
        for layer in &self.layers {
            let g = &layer.gemm;
            let preds: Vec<&LayerTiles> = layer.preds.iter().map(|&p| &self.layers[p]).collect();
            let d3_sum: usize = preds.iter().map(|p| p.gemm.d3).sum();
            let concat = d3_sum == g.channels;
            let summed = !concat && preds.iter().all(|p| p.gemm.d3 == g.channels);
            for i in 0..layer.i_tiles {
                let (a, b) = (i * layer.row_len, ((i + 1) * layer.row_len).min(g.d1));
                for j in 0..layer.j_tiles {
                    let (ca, cb) = (j * self.shape.rows, ((j + 1) * self.shape.rows).min(g.d2));
                    let spans = channel_span(g.channels, ca, cb);
                    let mut offset = 0usize;
                    for pred in &preds {
                        let pg = &pred.gemm;
                        if g.dynamic_weights || !(concat || summed) {
                            // attention operands and shape-changing joins read the whole producer
                            deps.extend(pred.groups.clone());
                            continue;
                        }
                        let (lo, hi) = row_band(g, pg, a, b);
                        let (i_lo, i_hi) = (lo / pred.row_len, (hi - 1) / pred.row_len);
                        let base = if concat { offset } else { 0 };
                        offset += pg.d3;
                        let mut ks: Vec<(usize, usize)> = Vec::new();
                        for &(s_lo, s_hi) in &spans {
                            let lo = s_lo.max(base);
                            let hi = s_hi.min(base + pg.d3);
                            if lo < hi {
                                ks.push(((lo - base) / self.shape.cols, (hi - 1 - base) / self.shape.cols));
                            }
                        }
                        for pi in i_lo..=i_hi {
                            for &(k_lo, k_hi) in &ks {
                                for pk in k_lo..=k_hi {
                                    deps.push(pred.group_id(pi as u32, pk as u32));
                                }
                            }
                        }
                    }
                    offsets.push(deps.len() as u32);
                }
            }
        }
        self.dep_offsets = offsets;
        self.dep_groups = deps;
    }

    /// Aggregation groups whose final tiles an op's x-tile is assembled from.
    pub fn x_deps(&self, op: &TileOp) -> &[u32] {
        let layer = &self.layers[op.layer as usize];
        let idx = layer.x_index(op.i, op.j);
        &self.dep_groups[self.dep_offsets[idx] as usize..self.dep_offsets[idx + 1] as usize]
    }

    pub fn total_macs(&self) -> u64 {
        self.ops.iter().map(TileOp::macs).sum()
    }

    pub fn layer_of(&self, op: &TileOp) -> &LayerTiles {
        &self.layers[op.layer as usize]
    }

    /// Final output tiles summed over layers.
    pub fn final_tiles(&self) -> usize {
        self.groups.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates tile index ranges directly, independent of the ceil-div
    /// bookkeeping above.
    fn enumerate_tiles(d: usize, step: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < d {
            let end = (start + step).min(d);
            out.push((start, end));
            start = end;
        }
        out
    }

    #[test]
    fn remainder_tiles_counted_by_enumeration() {
        let g = GemmSpec::new("a", 100, 64, 64);
        let ops = partition_gemm(&g, TileShape::new(32, 32));
        let expected = enumerate_tiles(100, 32).len() * enumerate_tiles(64, 32).len() * enumerate_tiles(64, 32).len();
        assert_eq!(expected, 16);
        assert_eq!(ops.len(), expected);
        let groups: std::collections::BTreeSet<u32> = ops.iter().map(|o| o.group).collect();
        assert_eq!(groups.len(), 8);
        for gid in groups {
            assert_eq!(ops.iter().filter(|o| o.group == gid).count(), 2);
        }
    }

    #[test]
    fn perfect_fit_is_one_op() {
        let ops = partition_gemm(&GemmSpec::new("a", 32, 32, 32), TileShape::new(32, 32));
        assert_eq!(ops.len(), 1);
    }

    #[test]
    fn unpartitioned_rows() {
        let shape = TileShape::new(32, 32).with_partition(Partition::Unpartitioned);
        let ops = partition_gemm(&GemmSpec::new("a", 100, 64, 64), shape);
        assert_eq!(ops.len(), 4);
        assert!(ops.iter().all(|o| o.m == 100));
    }

    #[test]
    fn tile_byte_sizes() {
        let ws = tile_working_set(&GemmSpec::new("a", 64, 64, 64), TileShape::new(32, 32));
        assert_eq!(ws.x_tile, 1024);
        assert_eq!(ws.w_tile, 1024);
        assert_eq!(ws.psum_tile, 2048);
        assert_eq!(ws.x_total, 64 * 64);
        assert_eq!(ws.psum_total, 2 * 64 * 64 * 2);
    }

    #[test]
    fn chain_dependences_follow_rows() {
        let a = GemmSpec::new("a", 128, 32, 64);
        let mut b = GemmSpec::new("b", 128, 64, 32);
        b.predecessors = vec![0];
        let model = ModelGraph::new("m", vec![a, b]).unwrap();
        let tg = TileGraph::from_model(&model, TileShape::new(32, 32));
        let second = &tg.layers[1];
        for op in &tg.ops[second.ops.start as usize..] {
            let deps = tg.x_deps(op);
            assert_eq!(deps.len(), 1, "dense row band maps one-to-one");
            let g = &tg.groups[deps[0] as usize];
            assert_eq!((g.i, g.k), (op.i, op.j));
        }
    }

    proptest! {
        #[test]
        fn tiles_cover_exactly(d1 in 1usize..90, d2 in 1usize..90, d3 in 1usize..90,
                               r in 1usize..40, c in 1usize..40, kp in 1usize..50) {
            let g = GemmSpec::new("g", d1, d2, d3);
            let shape = TileShape::new(r, c).with_partition(Partition::Rows(kp));
            let ops = partition_gemm(&g, shape);
            let work: u64 = ops.iter().map(TileOp::macs).sum();
            prop_assert_eq!(work, g.macs());
            prop_assert_eq!(ops.len(), d1.div_ceil(kp) * d2.div_ceil(r) * d3.div_ceil(c));

            let mut x = vec![0u8; d1 * d2];
            let mut w = vec![0u8; d2 * d3];
            for op in ops.iter().filter(|o| o.k == 0) {
                for row in 0..op.m as usize {
                    for col in 0..op.n as usize {
                        x[(op.i as usize * kp + row) * d2 + op.j as usize * r + col] += 1;
                    }
                }
            }
            for op in ops.iter().filter(|o| o.i == 0) {
                for row in 0..op.n as usize {
                    for col in 0..op.p as usize {
                        w[(op.j as usize * r + row) * d3 + op.k as usize * c + col] += 1;
                    }
                }
            }
            prop_assert!(x.iter().all(|&v| v == 1));
            prop_assert!(w.iter().all(|&v| v == 1));
            for op in &ops {
                prop_assert!(op.m >= 1 && op.m as usize <= kp);
                prop_assert!(op.n >= 1 && op.n as usize <= r);
                prop_assert!(op.p >= 1 && op.p as usize <= c);
            }
        }

        #[test]
        fn square_partition_runs_full_slices(d1 in 1usize..300, r in 1usize..40) {
            let g = GemmSpec::new("g", d1, r, r);
            for op in partition_gemm(&g, TileShape::new(r, r)) {
                let last = (op.i as usize + 1) * r >= d1;
                prop_assert!(last || op.m as usize == r);
            }
        }

        #[test]
        fn groups_have_full_arity(d1 in 1usize..200, d2 in 1usize..200, d3 in 1usize..200) {
            let model = ModelGraph::new("m", vec![GemmSpec::new("g", d1, d2, d3)]).unwrap();
            let tg = TileGraph::from_model(&model, TileShape::new(16, 16));
            prop_assert_eq!(tg.groups.len(), d1.div_ceil(16) * d3.div_ceil(16));
            for g in &tg.groups {
                prop_assert_eq!(g.arity(), d2.div_ceil(16));
                for id in g.members.clone() {
                    let op = &tg.ops[id as usize];
                    prop_assert_eq!((op.i, op.k, op.group), (g.i, g.k, g.id));
                }
            }
        }
    }
}
