//! DNN model descriptions and their lowering to matrix-multiply dimensions.
//!
//! Every compute layer becomes a [`GemmSpec`] `X (d1 x d2) * W (d2 x d3)`:
//! `d1` is the filter-reuse count (batch times output positions), `d2` the
//! feature count and `d3` the filter count. Element-wise layers are not
//! GEMMs; they show up as dependency edges and as post-processor passes
//! (`post_ops`) on the producing layer.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDims {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "same_padding")]
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseDims {
    pub in_features: usize,
    pub out_features: usize,
    /// Sequence length (transformers) or spatial positions sharing the weights.
    #[serde(default = "one")]
    pub seq: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d(ConvDims),
    Dense(DenseDims),
    Matmul(DenseDims),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub predecessors: Vec<String>,
    /// Element-wise passes applied to each final output tile (activation,
    /// residual add, pooling, ...). Always at least one.
    #[serde(default = "one_u32")]
    pub post_ops: u32,
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescription {
    pub name: String,
    #[serde(default = "one")]
    pub batch: usize,
    pub layers: Vec<LayerSpec>,
}

/// Spatial geometry kept from a lowered convolution. Used to map output
/// rows of one layer onto input rows of the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmSpec {
    pub id: String,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub batch: usize,
    /// Indices of producing layers within the owning [`ModelGraph`].
    pub predecessors: Vec<usize>,
    pub post_ops: u32,
    /// Input channel count; the columns of X cycle through channels
    /// fastest (`kh, kw, c` order for convolutions).
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvGeometry>,
    /// W is an activation produced on chip (attention matmuls) rather than
    /// a stored weight matrix.
    #[serde(default)]
    pub dynamic_weights: bool,
}

impl GemmSpec {
    pub fn new(id: impl Into<String>, d1: usize, d2: usize, d3: usize) -> Self {
        GemmSpec {
            id: id.into(),
            d1,
            d2,
            d3,
            batch: 1,
            predecessors: Vec::new(),
            post_ops: 1,
            channels: d2,
            conv: None,
            dynamic_weights: false,
        }
    }

    /// Multiply-accumulates of the whole layer; `d1` already folds the batch.
    pub fn macs(&self) -> u64 {
        self.d1 as u64 * self.d2 as u64 * self.d3 as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.d3 == 0 || self.batch == 0 {
            return Err(Error::validation(format!(
                "layer {}: nonpositive GEMM dimension ({}, {}, {}, batch {})",
                self.id, self.d1, self.d2, self.d3, self.batch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelGraph")]
pub struct ModelGraph {
    pub name: String,
    pub layers: Vec<GemmSpec>,
    #[serde(skip)]
    order: Vec<usize>,
}

#[derive(Deserialize)]
struct RawModelGraph {
    name: String,
    layers: Vec<GemmSpec>,
}

impl TryFrom<RawModelGraph> for ModelGraph {
    type Error = Error;

    fn try_from(raw: RawModelGraph) -> Result<Self> {
        ModelGraph::new(raw.name, raw.layers)
    }
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

fn same_padding() -> Padding {
    Padding::Same
}

fn output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> isize {
    match padding {
        Padding::Same => input.div_ceil(stride) as isize,
        Padding::Valid => {
            if kernel > input {
                0
            } else {
                ((input - kernel) / stride + 1) as isize
            }
        }
    }
}

/// Lowers a convolution to GEMM form, folding the batch into filter reuse.
pub fn conv_to_gemm(layer: &LayerSpec, batch: usize) -> Result<GemmSpec> {
    let LayerKind::Conv2d(conv) = &layer.kind else {
        return Err(Error::validation(format!("layer {} is not a conv2d", layer.id)));
    };
    let dims = [conv.in_h, conv.in_w, conv.in_c, conv.k_h, conv.k_w, conv.out_c, conv.stride];
    if dims.contains(&0) || batch == 0 {
        return Err(Error::validation(format!("layer {}: nonpositive dimension", layer.id)));
    }
    let out_h = output_extent(conv.in_h, conv.k_h, conv.stride, conv.padding);
    let out_w = output_extent(conv.in_w, conv.k_w, conv.stride, conv.padding);
    if out_h <= 0 || out_w <= 0 {
        return Err(Error::validation(format!(
            "layer {}: degenerate output {}x{}",
            layer.id, out_h, out_w
        )));
    }
    let (out_h, out_w) = (out_h as usize, out_w as usize);
    Ok(GemmSpec {
        id: layer.id.clone(),
        d1: batch * out_h * out_w,
        d2: conv.k_h * conv.k_w * conv.in_c,
        d3: conv.out_c,
        batch,
        predecessors: Vec::new(),
        post_ops: layer.post_ops.max(1),
        channels: conv.in_c,
        conv: Some(ConvGeometry {
            in_h: conv.in_h,
            in_w: conv.in_w,
            out_h,
            out_w,
            k_h: conv.k_h,
            k_w: conv.k_w,
            stride: conv.stride,
        }),
        dynamic_weights: false,
    })
}

fn lower_layer(layer: &LayerSpec, batch: usize) -> Result<GemmSpec> {
    match &layer.kind {
        LayerKind::Conv2d(_) => conv_to_gemm(layer, batch),
        LayerKind::Dense(d) | LayerKind::Matmul(d) => {
            let g = GemmSpec {
                id: layer.id.clone(),
                d1: batch * d.seq,
                d2: d.in_features,
                d3: d.out_features,
                batch,
                predecessors: Vec::new(),
                post_ops: layer.post_ops.max(1),
                channels: d.in_features,
                conv: None,
                dynamic_weights: matches!(layer.kind, LayerKind::Matmul(_)),
            };
            g.validate()?;
            Ok(g)
        }
    }
}

impl ModelGraph {
    /// Builds a graph from already-lowered layers. Predecessor indices must
    /// point at earlier layers.
    pub fn new(name: impl Into<String>, layers: Vec<GemmSpec>) -> Result<Self> {
        let mut g = ModelGraph {
            name: name.into(),
            layers,
            order: Vec::new(),
        };
        g.finish()?;
        Ok(g)
    }

    /// Validates the graph and caches a topological order.
    fn finish(&mut self) -> Result<()> {
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            for &p in &layer.predecessors {
                if p >= idx {
                    return Err(Error::validation(format!(
                        "layer {} depends on layer index {} which does not precede it",
                        layer.id, p
                    )));
                }
            }
            if idx > 0 && layer.predecessors.is_empty() {
                return Err(Error::validation(format!(
                    "layer {} has no predecessors",
                    layer.id
                )));
            }
        }
        self.order = topological_order(&self.layers)?;
        Ok(())
    }

    pub fn from_description(desc: &ModelDescription) -> Result<Self> {
        if desc.batch == 0 {
            return Err(Error::validation("batch must be at least 1"));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut layers = Vec::with_capacity(desc.layers.len());
        for (idx, spec) in desc.layers.iter().enumerate() {
            let mut gemm = lower_layer(spec, desc.batch)?;
            for pred in &spec.predecessors {
                match index.get(pred.as_str()) {
                    Some(&p) => gemm.predecessors.push(p),
                    None => {
                        return Err(Error::validation(format!(
                            "layer {} references {} which is not an earlier layer",
                            spec.id, pred
                        )))
                    }
                }
            }
            if index.insert(spec.id.as_str(), idx).is_some() {
                return Err(Error::validation(format!("duplicate layer id {}", spec.id)));
            }
            layers.push(gemm);
        }
        ModelGraph::new(desc.name.clone(), layers)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(GemmSpec::macs).sum()
    }

    /// Longest-path depth of each layer from the graph sources.
    pub fn levels(&self) -> Vec<usize> {
        let mut level = vec![0usize; self.layers.len()];
        for &idx in &self.order {
            level[idx] = self.layers[idx]
                .predecessors
                .iter()
                .map(|&p| level[p] + 1)
                .max()
                .unwrap_or(0);
        }
        level
    }

    /// Same model with a different batch size; all filter-reuse counts scale.
    pub fn with_batch(&self, batch: usize) -> ModelGraph {
        let mut g = self.clone();
        for layer in &mut g.layers {
            layer.d1 = layer.d1 / layer.batch * batch;
            layer.batch = batch;
        }
        g
    }
}

fn topological_order(layers: &[GemmSpec]) -> Result<Vec<usize>> {
    let n = layers.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, layer) in layers.iter().enumerate() {
        for &p in &layer.predecessors {
            if p >= n {
                return Err(Error::validation(format!("layer {} has dangling predecessor", layer.id)));
            }
            indegree[idx] += 1;
            succ[p].push(idx);
        }
    }
    let mut ready: std::collections::VecDeque<usize> =
        (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_front() {
        order.push(v);
        for &s in &succ[v] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push_back(s);
            }
        }
    }
    if order.len() != n {
        return Err(Error::validation("dependency cycle"));
    }
    Ok(order)
}

pub fn parse_model(text: &str) -> Result<ModelGraph> {
    let desc: ModelDescription =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    ModelGraph::from_description(&desc)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub mean: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub d1: Percentiles,
    pub d2: Percentiles,
    pub d3: Percentiles,
}

fn weighted_percentiles(samples: &mut [(f64, f64)]) -> Percentiles {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let mean = samples.iter().map(|s| s.0 * s.1).sum::<f64>() / total;
    let quantile = |q: f64| {
        let target = q * total;
        let mut acc = 0.0;
        for &(v, w) in samples.iter() {
            acc += w;
            if acc >= target {
                return v;
            }
        }
        samples.last().map(|s| s.0).unwrap_or(0.0)
    };
    Percentiles {
        p10: quantile(0.1),
        mean,
        p90: quantile(0.9),
    }
}

/// MAC-weighted 10th percentile, mean and 90th percentile of each GEMM
/// dimension over all layers of the given models.
pub fn dimension_stats(models: &[ModelGraph]) -> Result<DimensionStats> {
    let layers: Vec<&GemmSpec> = models.iter().flat_map(|m| m.layers.iter()).collect();
    if layers.is_empty() {
        return Err(Error::validation("dimension statistics need at least one layer"));
    }
    let pick = |f: fn(&GemmSpec) -> usize| {
        let mut s: Vec<(f64, f64)> = layers
            .iter()
            .map(|l| (f(l) as f64, l.macs() as f64))
            .collect();
        weighted_percentiles(&mut s)
    };
    Ok(DimensionStats {
        d1: pick(|g| g.d1),
        d2: pick(|g| g.d2),
        d3: pick(|g| g.d3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str, hw: usize, c: usize, k: usize, out: usize, stride: usize, padding: Padding) -> LayerSpec {
        LayerSpec {
            id: id.into(),
            kind: LayerKind::Conv2d(ConvDims {
                in_h: hw,
                in_w: hw,
                in_c: c,
                k_h: k,
                k_w: k,
                out_c: out,
                stride,
                padding,
            }),
            predecessors: vec![],
            post_ops: 1,
        }
    }

    #[test]
    fn pointwise_conv_is_plain_gemm() {
        let g = conv_to_gemm(&conv("c", 56, 64, 1, 256, 1, Padding::Same), 1).unwrap();
        assert_eq!((g.d1, g.d2, g.d3), (3136, 64, 256));
    }

    #[test]
    fn strided_valid_conv() {
        // out = floor((7 - 3) / 2) + 1 = 3 per side
        let g = conv_to_gemm(&conv("c", 7, 4, 3, 8, 2, Padding::Valid), 2).unwrap();
        assert_eq!((g.d1, g.d2, g.d3), (18, 36, 8));
    }

    #[test]
    fn batch_scales_filter_reuse_only() {
        let l = conv("c", 17, 5, 3, 11, 2, Padding::Same);
        let a = conv_to_gemm(&l, 1).unwrap();
        let b = conv_to_gemm(&l, 6).unwrap();
        assert_eq!(b.d1, 6 * a.d1);
        assert_eq!((a.d2, a.d3), (b.d2, b.d3));
    }

    #[test]
    fn degenerate_conv_output_rejected() {
        let err = conv_to_gemm(&conv("c", 2, 4, 3, 8, 1, Padding::Valid), 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn minimal_dense_model() {
        let text = r#"{"name":"tiny","batch":1,"layers":[
            {"id":"fc","kind":"dense","in_features":64,"out_features":64,"seq":100,"predecessors":[]}]}"#;
        let m = parse_model(text).unwrap();
        assert_eq!(m.layers.len(), 1);
        let g = &m.layers[0];
        assert_eq!((g.d1, g.d2, g.d3), (100, 64, 64));
    }

    #[test]
    fn forward_reference_is_rejected() {
        let text = r#"{"name":"bad","batch":1,"layers":[
            {"id":"a","kind":"dense","in_features":4,"out_features":4,"predecessors":["b"]},
            {"id":"b","kind":"dense","in_features":4,"out_features":4,"predecessors":["a"]}]}"#;
        assert!(matches!(parse_model(text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(parse_model("{\"name\": 3"), Err(Error::Parse(_))));
    }

    #[test]
    fn zero_dimension_rejected() {
        let text = r#"{"name":"z","layers":[
            {"id":"a","kind":"matmul","in_features":0,"out_features":4}]}"#;
        assert!(matches!(parse_model(text), Err(Error::Validation(_))));
    }

    #[test]
    fn single_layer_stats_are_degenerate() {
        let m = ModelGraph::new("one", vec![GemmSpec::new("a", 100, 64, 32)]).unwrap();
        let s = dimension_stats(&[m]).unwrap();
        for p in [s.d1, s.d2, s.d3] {
            assert_eq!(p.p10, p.mean);
            assert_eq!(p.p90, p.mean);
        }
        assert_eq!(s.d1.mean, 100.0);
    }

    #[test]
    fn equal_mac_layers_average() {
        let mut b = GemmSpec::new("b", 300, 64, 64);
        b.predecessors = vec![0];
        // equal MACs: 100 * 192 * 64 == 300 * 64 * 64
        let a = GemmSpec::new("a", 100, 192, 64);
        let m = ModelGraph::new("two", vec![a, b]).unwrap();
        let s = dimension_stats(&[m]).unwrap();
        assert!((s.d1.mean - 200.0).abs() < 1e-9);
    }

    #[test]
    fn empty_stats_rejected() {
        assert!(dimension_stats(&[]).is_err());
    }
}
