//! Layer stacks of the benchmark networks, built programmatically and
//! emitted as model descriptions.
//!
//! CNNs follow the Keras application definitions (ResNet v1 bottlenecks with
//! the stride on the first 1x1, DenseNet-BC, Inception-v3). Transformers are
//! BERT encoders with a fused QKV projection and per-head attention matmuls.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::workload::{
    ConvDims, DenseDims, LayerKind, LayerSpec, ModelDescription, ModelGraph, Padding,
};

/// A feature map produced by one or more layers (several layers when the
/// map is a concatenation or a residual sum).
#[derive(Debug, Clone)]
struct Tensor {
    producers: Vec<usize>,
    h: usize,
    w: usize,
    c: usize,
}

struct Builder {
    name: String,
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new(name: impl Into<String>) -> Self {
        Builder {
            name: name.into(),
            layers: Vec::new(),
        }
    }

    fn push(&mut self, id: String, kind: LayerKind, input: Option<&Tensor>) -> usize {
        let predecessors = input
            .map(|t| t.producers.iter().map(|&p| self.layers[p].id.clone()).collect())
            .unwrap_or_default();
        self.layers.push(LayerSpec {
            id,
            kind,
            predecessors,
            post_ops: 1,
        });
        self.layers.len() - 1
    }

    fn input(&self, hw: usize, c: usize) -> Tensor {
        Tensor {
            producers: Vec::new(),
            h: hw,
            w: hw,
            c,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        id: impl Into<String>,
        x: &Tensor,
        k_h: usize,
        k_w: usize,
        out_c: usize,
        stride: usize,
        padding: Padding,
    ) -> Tensor {
        let dims = ConvDims {
            in_h: x.h,
            in_w: x.w,
            in_c: x.c,
            k_h,
            k_w,
            out_c,
            stride,
            padding,
        };
        let (h, w) = match padding {
            Padding::Same => (x.h.div_ceil(stride), x.w.div_ceil(stride)),
            Padding::Valid => ((x.h - k_h) / stride + 1, (x.w - k_w) / stride + 1),
        };
        let input = if x.producers.is_empty() { None } else { Some(x) };
        let idx = self.push(id.into(), LayerKind::Conv2d(dims), input);
        Tensor {
            producers: vec![idx],
            h,
            w,
            c: out_c,
        }
    }

    fn dense(&mut self, id: impl Into<String>, x: &Tensor, rows: usize, out: usize) -> Tensor {
        let kind = LayerKind::Dense(DenseDims {
            in_features: x.c,
            out_features: out,
            seq: rows,
        });
        let input = if x.producers.is_empty() { None } else { Some(x) };
        let idx = self.push(id.into(), kind, input);
        Tensor {
            producers: vec![idx],
            h: rows,
            w: 1,
            c: out,
        }
    }

    fn matmul(&mut self, id: impl Into<String>, inputs: &[&Tensor], rows: usize, inner: usize, out: usize) -> Tensor {
        let producers: Vec<usize> = inputs.iter().flat_map(|t| t.producers.iter().copied()).collect();
        let joined = Tensor {
            producers,
            h: rows,
            w: 1,
            c: inner,
        };
        let kind = LayerKind::Matmul(DenseDims {
            in_features: inner,
            out_features: out,
            seq: rows,
        });
        let idx = self.push(id.into(), kind, Some(&joined));
        Tensor {
            producers: vec![idx],
            h: rows,
            w: 1,
            c: out,
        }
    }

    /// Pooling runs on the post-processors of the producing layers.
    fn pool(&mut self, x: &Tensor, k: usize, stride: usize, padding: Padding) -> Tensor {
        for &p in &x.producers {
            self.layers[p].post_ops += 1;
        }
        let (h, w) = match padding {
            Padding::Same => (x.h.div_ceil(stride), x.w.div_ceil(stride)),
            Padding::Valid => ((x.h - k) / stride + 1, (x.w - k) / stride + 1),
        };
        Tensor { h, w, ..x.clone() }
    }

    fn global_pool(&mut self, x: &Tensor) -> Tensor {
        for &p in &x.producers {
            self.layers[p].post_ops += 1;
        }
        Tensor { h: 1, w: 1, ..x.clone() }
    }

    /// Element-wise residual sum, executed on the post-processors of `a`.
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        for &p in &a.producers {
            self.layers[p].post_ops += 1;
        }
        let mut producers = a.producers.clone();
        producers.extend(b.producers.iter().copied());
        Tensor { producers, ..a.clone() }
    }

    fn concat(&self, parts: &[&Tensor]) -> Tensor {
        Tensor {
            producers: parts.iter().flat_map(|t| t.producers.iter().copied()).collect(),
            h: parts[0].h,
            w: parts[0].w,
            c: parts.iter().map(|t| t.c).sum(),
        }
    }

    fn finish(self, batch: usize) -> ModelDescription {
        ModelDescription {
            name: self.name,
            batch,
            layers: self.layers,
        }
    }
}

use Padding::{Same, Valid};

/// Keras ResNet v1 with bottleneck blocks; `depth` in {50, 101, 152}.
pub fn resnet(depth: usize, image: usize, batch: usize) -> Result<ModelDescription> {
    let blocks: [usize; 4] = match depth {
        50 => [3, 4, 6, 3],
        101 => [3, 4, 23, 3],
        152 => [3, 8, 36, 3],
        _ => return Err(Error::config(format!("unsupported ResNet depth {depth}"))),
    };
    let mut b = Builder::new(format!("resnet{depth}_{image}"));
    let x = b.input(image, 3);
    let x = b.conv("conv1", &x, 7, 7, 64, 2, Same);
    let mut x = b.pool(&x, 3, 2, Same);
    for (stage, &count) in blocks.iter().enumerate() {
        let width = 64 << stage;
        for block in 0..count {
            let stride = if block == 0 && stage > 0 { 2 } else { 1 };
            let name = format!("s{}b{}", stage + 2, block);
            let y = b.conv(format!("{name}_a"), &x, 1, 1, width, stride, Same);
            let y = b.conv(format!("{name}_b"), &y, 3, 3, width, 1, Same);
            let y = b.conv(format!("{name}_c"), &y, 1, 1, 4 * width, 1, Same);
            let shortcut = if block == 0 {
                b.conv(format!("{name}_sc"), &x, 1, 1, 4 * width, stride, Same)
            } else {
                x.clone()
            };
            x = b.add(&y, &shortcut);
        }
    }
    let x = b.global_pool(&x);
    b.dense("fc", &x, 1, 1000);
    Ok(b.finish(batch))
}

/// DenseNet-BC with growth 32 and 4x bottlenecks; `depth` in {121, 169, 201}.
pub fn densenet(depth: usize, image: usize, batch: usize) -> Result<ModelDescription> {
    let blocks: [usize; 4] = match depth {
        121 => [6, 12, 24, 16],
        169 => [6, 12, 32, 32],
        201 => [6, 12, 48, 32],
        _ => return Err(Error::config(format!("unsupported DenseNet depth {depth}"))),
    };
    let growth = 32;
    let mut b = Builder::new(format!("densenet{depth}_{image}"));
    let x = b.input(image, 3);
    let x = b.conv("conv1", &x, 7, 7, 64, 2, Same);
    let mut x = b.pool(&x, 3, 2, Same);
    for (stage, &count) in blocks.iter().enumerate() {
        for layer in 0..count {
            let name = format!("d{}l{}", stage + 1, layer);
            let y = b.conv(format!("{name}_a"), &x, 1, 1, 4 * growth, 1, Same);
            let y = b.conv(format!("{name}_b"), &y, 3, 3, growth, 1, Same);
            x = b.concat(&[&x, &y]);
        }
        if stage + 1 < blocks.len() {
            let t = b.conv(format!("t{}", stage + 1), &x, 1, 1, x.c / 2, 1, Same);
            x = b.pool(&t, 2, 2, Valid);
        }
    }
    let x = b.global_pool(&x);
    b.dense("fc", &x, 1, 1000);
    Ok(b.finish(batch))
}

/// Keras Inception-v3 (299x299 reference resolution; other sizes accepted).
pub fn inception_v3(image: usize, batch: usize) -> Result<ModelDescription> {
    if image < 75 {
        return Err(Error::config("Inception-v3 needs at least 75x75 inputs"));
    }
    let mut b = Builder::new(format!("inception_v3_{image}"));
    let x = b.input(image, 3);
    let x = b.conv("stem1", &x, 3, 3, 32, 2, Valid);
    let x = b.conv("stem2", &x, 3, 3, 32, 1, Valid);
    let x = b.conv("stem3", &x, 3, 3, 64, 1, Same);
    let x = b.pool(&x, 3, 2, Valid);
    let x = b.conv("stem4", &x, 1, 1, 80, 1, Valid);
    let x = b.conv("stem5", &x, 3, 3, 192, 1, Valid);
    let mut x = b.pool(&x, 3, 2, Valid);

    for (m, pool_c) in [(0, 32), (1, 64), (2, 64)] {
        let n = format!("mixed{m}");
        let a = b.conv(format!("{n}_1x1"), &x, 1, 1, 64, 1, Same);
        let c = b.conv(format!("{n}_5x5a"), &x, 1, 1, 48, 1, Same);
        let c = b.conv(format!("{n}_5x5b"), &c, 5, 5, 64, 1, Same);
        let d = b.conv(format!("{n}_dbla"), &x, 1, 1, 64, 1, Same);
        let d = b.conv(format!("{n}_dblb"), &d, 3, 3, 96, 1, Same);
        let d = b.conv(format!("{n}_dblc"), &d, 3, 3, 96, 1, Same);
        let p = b.pool(&x, 3, 1, Same);
        let p = b.conv(format!("{n}_pool"), &p, 1, 1, pool_c, 1, Same);
        x = b.concat(&[&a, &c, &d, &p]);
    }

    {
        let a = b.conv("mixed3_3x3", &x, 3, 3, 384, 2, Valid);
        let d = b.conv("mixed3_dbla", &x, 1, 1, 64, 1, Same);
        let d = b.conv("mixed3_dblb", &d, 3, 3, 96, 1, Same);
        let d = b.conv("mixed3_dblc", &d, 3, 3, 96, 2, Valid);
        let p = b.pool(&x, 3, 2, Valid);
        x = b.concat(&[&a, &d, &p]);
    }

    for (m, c7) in [(4, 128), (5, 160), (6, 160), (7, 192)] {
        let n = format!("mixed{m}");
        let a = b.conv(format!("{n}_1x1"), &x, 1, 1, 192, 1, Same);
        let s = b.conv(format!("{n}_7a"), &x, 1, 1, c7, 1, Same);
        let s = b.conv(format!("{n}_7b"), &s, 1, 7, c7, 1, Same);
        let s = b.conv(format!("{n}_7c"), &s, 7, 1, 192, 1, Same);
        let d = b.conv(format!("{n}_d7a"), &x, 1, 1, c7, 1, Same);
        let d = b.conv(format!("{n}_d7b"), &d, 7, 1, c7, 1, Same);
        let d = b.conv(format!("{n}_d7c"), &d, 1, 7, c7, 1, Same);
        let d = b.conv(format!("{n}_d7d"), &d, 7, 1, c7, 1, Same);
        let d = b.conv(format!("{n}_d7e"), &d, 1, 7, 192, 1, Same);
        let p = b.pool(&x, 3, 1, Same);
        let p = b.conv(format!("{n}_pool"), &p, 1, 1, 192, 1, Same);
        x = b.concat(&[&a, &s, &d, &p]);
    }

    {
        let a = b.conv("mixed8_3a", &x, 1, 1, 192, 1, Same);
        let a = b.conv("mixed8_3b", &a, 3, 3, 320, 2, Valid);
        let s = b.conv("mixed8_7a", &x, 1, 1, 192, 1, Same);
        let s = b.conv("mixed8_7b", &s, 1, 7, 192, 1, Same);
        let s = b.conv("mixed8_7c", &s, 7, 1, 192, 1, Same);
        let s = b.conv("mixed8_7d", &s, 3, 3, 192, 2, Valid);
        let p = b.pool(&x, 3, 2, Valid);
        x = b.concat(&[&a, &s, &p]);
    }

    for m in [9, 10] {
        let n = format!("mixed{m}");
        let a = b.conv(format!("{n}_1x1"), &x, 1, 1, 320, 1, Same);
        let s = b.conv(format!("{n}_3a"), &x, 1, 1, 384, 1, Same);
        let s1 = b.conv(format!("{n}_3b"), &s, 1, 3, 384, 1, Same);
        let s2 = b.conv(format!("{n}_3c"), &s, 3, 1, 384, 1, Same);
        let d = b.conv(format!("{n}_d3a"), &x, 1, 1, 448, 1, Same);
        let d = b.conv(format!("{n}_d3b"), &d, 3, 3, 384, 1, Same);
        let d1 = b.conv(format!("{n}_d3c"), &d, 1, 3, 384, 1, Same);
        let d2 = b.conv(format!("{n}_d3d"), &d, 3, 1, 384, 1, Same);
        let p = b.pool(&x, 3, 1, Same);
        let p = b.conv(format!("{n}_pool"), &p, 1, 1, 192, 1, Same);
        x = b.concat(&[&a, &s1, &s2, &d1, &d2, &p]);
    }

    let x = b.global_pool(&x);
    b.dense("fc", &x, 1, 1000);
    Ok(b.finish(batch))
}

/// BERT encoder stack: (layers, hidden size, attention heads).
pub fn bert_config(variant: &str) -> Option<(usize, usize, usize)> {
    match variant {
        "mini" => Some((4, 256, 4)),
        "small" => Some((4, 512, 8)),
        "medium" => Some((8, 512, 8)),
        "base" => Some((12, 768, 12)),
        "large" => Some((24, 1024, 16)),
        _ => None,
    }
}

pub fn bert(variant: &str, seq: usize, batch: usize) -> Result<ModelDescription> {
    let (depth, hidden, heads) =
        bert_config(variant).ok_or_else(|| Error::config(format!("unknown BERT variant {variant}")))?;
    let head_dim = hidden / heads;
    let mut b = Builder::new(format!("bert_{variant}_{seq}"));
    let mut x = Tensor {
        producers: Vec::new(),
        h: seq,
        w: 1,
        c: hidden,
    };
    for l in 0..depth {
        let qkv = b.dense(format!("l{l}_qkv"), &x, seq, 3 * hidden);
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let score = b.matmul(format!("l{l}_h{h}_score"), &[&qkv], seq, head_dim, seq);
            let ctx = b.matmul(format!("l{l}_h{h}_ctx"), &[&score, &qkv], seq, seq, head_dim);
            contexts.push(ctx);
        }
        let refs: Vec<&Tensor> = contexts.iter().collect();
        let attn = b.concat(&refs);
        let out = b.dense(format!("l{l}_attn_out"), &attn, seq, hidden);
        // residual add and layer norm
        let out = if x.producers.is_empty() { out } else { b.add(&out, &x) };
        for &p in &out.producers[..1] {
            b.layers[p].post_ops += 1;
        }
        let ff = b.dense(format!("l{l}_ffn1"), &out, seq, 4 * hidden);
        let ff2 = b.dense(format!("l{l}_ffn2"), &ff, seq, hidden);
        let y = b.add(&ff2, &out);
        b.layers[y.producers[0]].post_ops += 1;
        x = Tensor {
            producers: vec![y.producers[0]],
            ..y
        };
    }
    Ok(b.finish(batch))
}

/// Builds any shipped benchmark by name, e.g. `resnet50`, `densenet121`,
/// `inception_v3`, `bert_medium`.
pub fn benchmark(name: &str, image: usize, seq: usize, batch: usize) -> Result<ModelDescription> {
    match name {
        "resnet50" => resnet(50, image, batch),
        "resnet101" => resnet(101, image, batch),
        "resnet152" => resnet(152, image, batch),
        "densenet121" => densenet(121, image, batch),
        "densenet169" => densenet(169, image, batch),
        "densenet201" => densenet(201, image, batch),
        "inception_v3" => inception_v3(image, batch),
        _ => match name.strip_prefix("bert_") {
            Some(variant) => bert(variant, seq, batch),
            None => Err(Error::config(format!("unknown benchmark {name}"))),
        },
    }
}

pub fn benchmark_graph(name: &str, image: usize, seq: usize, batch: usize) -> Result<ModelGraph> {
    ModelGraph::from_description(&benchmark(name, image, seq, batch)?)
}

pub const CNN_MODELS: [&str; 7] = [
    "inception_v3",
    "resnet50",
    "resnet101",
    "resnet152",
    "densenet121",
    "densenet169",
    "densenet201",
];
pub const BERT_MODELS: [&str; 5] = ["bert_mini", "bert_small", "bert_medium", "bert_base", "bert_large"];
pub const IMAGE_SIZES: [usize; 3] = [224, 256, 299];
pub const SEQ_LENGTHS: [usize; 10] = [10, 20, 40, 60, 80, 100, 200, 300, 400, 500];

/// Every shipped model description keyed by file stem.
pub fn all_descriptions() -> Result<BTreeMap<String, ModelDescription>> {
    let mut out = BTreeMap::new();
    for name in CNN_MODELS {
        for image in IMAGE_SIZES {
            let d = benchmark(name, image, 0, 1)?;
            out.insert(d.name.clone(), d);
        }
    }
    for name in BERT_MODELS {
        for seq in SEQ_LENGTHS {
            let d = benchmark(name, 0, seq, 1)?;
            out.insert(d.name.clone(), d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_model_lowers() {
        for (name, desc) in all_descriptions().unwrap() {
            let g = ModelGraph::from_description(&desc).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(g.total_macs() > 0);
        }
    }

    #[test]
    fn resnet50_layer_count() {
        // 1 stem + 16 blocks * 3 + 4 projection shortcuts + fc
        let d = resnet(50, 224, 1).unwrap();
        assert_eq!(d.layers.len(), 1 + 48 + 4 + 1);
    }

    #[test]
    fn densenet121_layer_count() {
        // 1 stem + 58 bottleneck pairs + 3 transitions + fc = 121 weighted layers
        let d = densenet(121, 224, 1).unwrap();
        assert_eq!(d.layers.len(), 1 + 2 * 58 + 3 + 1);
    }

    #[test]
    fn inception_v3_output_channels() {
        let g = benchmark_graph("inception_v3", 299, 0, 1).unwrap();
        let fc = g.layers.last().unwrap();
        assert_eq!(fc.d2, 2048);
        assert_eq!(fc.d3, 1000);
    }

    #[test]
    fn bert_base_projection_dims() {
        let g = benchmark_graph("bert_base", 0, 100, 1).unwrap();
        let qkv = &g.layers[0];
        assert_eq!((qkv.d1, qkv.d2, qkv.d3), (100, 768, 2304));
        let score = &g.layers[1];
        assert_eq!((score.d1, score.d2, score.d3), (100, 64, 100));
        assert!(score.dynamic_weights);
    }
}
