//! Layer list parsing, validation, and the default skip architecture.
//!
//! File format: one layer per line, `name kind key=value ...`, `#` starts a
//! comment, declaration order is execution order. A layer's input is the
//! previous line unless `from=` names an earlier layer; `fuse` takes `a=`
//! and `b=`; `crop` takes `from=` and `like=`.

use std::collections::HashMap;
use std::fmt;

use super::NetError;
use crate::graph::{Graph, Node, OpKind};
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input { channels: usize },
    Conv { out: usize, kernel: usize, stride: usize, pad: usize },
    ScoreConv { out: usize, kernel: usize, stride: usize, pad: usize },
    Pool { kernel: usize, stride: usize },
    Relu,
    Mvn,
    Dropout { ratio: f64 },
    Upsample { out: usize, kernel: usize, stride: usize },
    Fuse,
    Crop,
    Softmax,
}

impl LayerKind {
    pub fn key(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::ScoreConv { .. } => "score-conv",
            LayerKind::Pool { .. } => "pool",
            LayerKind::Relu => "relu",
            LayerKind::Mvn => "mvn",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Fuse => "fuse",
            LayerKind::Crop => "crop",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Convolution layers in the architecture-audit sense: feature convs and
    /// 1x1 score convs count, fractional-convolution upsamplers do not.
    pub fn is_counted_conv(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::ScoreConv { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. } | LayerKind::ScoreConv { .. } | LayerKind::Upsample { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Explicit first input; defaults to the previous layer.
    pub from: Option<String>,
    /// Second input of `fuse`.
    pub with: Option<String>,
    /// Spatial-size reference of `crop`.
    pub like: Option<String>,
}

impl LayerSpec {
    fn plain(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            from: None,
            with: None,
            like: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

/// Channel bookkeeping and parameter shapes for one layer.
#[derive(Clone, Debug)]
pub struct ResolvedLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Conv-family: `(out, in, k, k)`; upsample: `(in, out, k, k)`.
    pub weight_shape: Option<Shape>,
    pub bias_len: usize,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub layers: Vec<ResolvedLayer>,
}

impl NetworkSpec {
    pub fn parse(text: &str) -> Result<Self, NetError> {
        let mut layers = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            layers.push(parse_layer(line, line_no + 1)?);
        }
        let spec = NetworkSpec { layers };
        spec.resolve()?;
        Ok(spec)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for layer in &self.layers {
            out.push_str(&layer_line(layer));
            out.push('\n');
        }
        out
    }

    /// Channels of the input layer.
    pub fn in_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l.kind {
                LayerKind::Input { channels } => Some(channels),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Class count: the channel width flowing into the softmax head (or out
    /// of the last layer when no softmax is declared).
    pub fn classes(&self) -> Result<usize, NetError> {
        let resolved = self.resolve()?;
        let idx = self
            .layers
            .iter()
            .position(|l| l.kind == LayerKind::Softmax)
            .unwrap_or(self.layers.len().saturating_sub(1));
        Ok(resolved.layers[idx].out_channels)
    }

    pub fn count_kind(&self, key: &str) -> usize {
        self.layers.iter().filter(|l| l.kind.key() == key).count()
    }

    /// Feature convs plus score convs, the figure quoted for the
    /// architecture; upsampling layers are excluded.
    pub fn counted_conv_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_counted_conv()).count()
    }

    /// Validates names, references, and channel flow; computes parameter
    /// shapes.
    pub fn resolve(&self) -> Result<Resolved, NetError> {
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        let mut resolved: Vec<ResolvedLayer> = Vec::with_capacity(self.layers.len());

        let input_count = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Input { .. }))
            .count();
        if input_count != 1 {
            return Err(NetError::Validation(format!(
                "network must declare exactly one input layer, found {input_count}"
            )));
        }

        for (i, layer) in self.layers.iter().enumerate() {
            if by_name.contains_key(layer.name.as_str()) {
                return Err(NetError::DuplicateName(layer.name.clone()));
            }

            let look = |name: &Option<String>| -> Result<Option<usize>, NetError> {
                match name {
                    None => Ok(None),
                    Some(n) => by_name.get(n.as_str()).copied().map(Some).ok_or_else(|| {
                        NetError::UnknownReference {
                            layer: layer.name.clone(),
                            reference: n.clone(),
                        }
                    }),
                }
            };

            let previous = || -> Result<usize, NetError> {
                if i == 0 {
                    return Err(NetError::Validation(format!(
                        "layer {} has no previous layer to consume",
                        layer.name
                    )));
                }
                Ok(i - 1)
            };

            let inputs: Vec<usize> = match layer.kind {
                LayerKind::Input { .. } => vec![],
                LayerKind::Fuse => {
                    let a = look(&layer.from)?.ok_or_else(|| {
                        NetError::Validation(format!("fuse layer {} needs a=", layer.name))
                    })?;
                    let b = look(&layer.with)?.ok_or_else(|| {
                        NetError::Validation(format!("fuse layer {} needs b=", layer.name))
                    })?;
                    vec![a, b]
                }
                LayerKind::Crop => {
                    let data = match look(&layer.from)? {
                        Some(idx) => idx,
                        None => previous()?,
                    };
                    let like = look(&layer.like)?.ok_or_else(|| {
                        NetError::Validation(format!("crop layer {} needs like=", layer.name))
                    })?;
                    vec![data, like]
                }
                _ => {
                    let from = match look(&layer.from)? {
                        Some(idx) => idx,
                        None => previous()?,
                    };
                    vec![from]
                }
            };

            let in_channels = inputs.first().map(|&j| resolved[j].out_channels).unwrap_or(0);
            let (out_channels, weight_shape, bias_len) = match layer.kind {
                LayerKind::Input { channels } => (channels, None, 0),
                LayerKind::Conv { out, kernel, .. } | LayerKind::ScoreConv { out, kernel, .. } => (
                    out,
                    Some(Shape::new(out, in_channels, kernel, kernel)),
                    out,
                ),
                LayerKind::Upsample { out, kernel, .. } => (
                    out,
                    Some(Shape::new(in_channels, out, kernel, kernel)),
                    out,
                ),
                LayerKind::Fuse => {
                    let (a, b) = (resolved[inputs[0]].out_channels, resolved[inputs[1]].out_channels);
                    if a != b {
                        return Err(NetError::Validation(format!(
                            "fuse layer {} joins {a}- and {b}-channel maps",
                            layer.name
                        )));
                    }
                    (a, None, 0)
                }
                _ => (in_channels, None, 0),
            };

            resolved.push(ResolvedLayer {
                in_channels,
                out_channels,
                weight_shape,
                bias_len,
                inputs,
            });
            by_name.insert(layer.name.as_str(), i);
        }
        Ok(Resolved { layers: resolved })
    }

    /// Lowers the spec to an executable op graph.
    pub fn to_graph(&self) -> Result<Graph, NetError> {
        let resolved = self.resolve()?;
        let nodes = self
            .layers
            .iter()
            .zip(&resolved.layers)
            .map(|(layer, r)| Node {
                name: layer.name.clone(),
                kind: match layer.kind {
                    LayerKind::Input { .. } => OpKind::Input,
                    LayerKind::Conv { stride, pad, .. }
                    | LayerKind::ScoreConv { stride, pad, .. } => OpKind::Conv { stride, pad },
                    LayerKind::Pool { kernel, stride } => OpKind::Pool { kernel, stride },
                    LayerKind::Relu => OpKind::Relu,
                    LayerKind::Mvn => OpKind::Mvn,
                    LayerKind::Dropout { ratio } => OpKind::Dropout { ratio },
                    LayerKind::Upsample { stride, .. } => OpKind::Deconv { stride },
                    LayerKind::Fuse => OpKind::Add,
                    LayerKind::Crop => OpKind::Crop,
                    LayerKind::Softmax => OpKind::Softmax,
                },
                inputs: r.inputs.clone(),
            })
            .collect();
        Ok(Graph::new(nodes)?)
    }
}

/// Total weight and bias element count across all layers.
pub fn count_params(spec: &NetworkSpec) -> usize {
    if spec.layers.is_empty() {
        return 0;
    }
    let resolved = match spec.resolve() {
        Ok(r) => r,
        Err(_) => return 0,
    };
    resolved
        .layers
        .iter()
        .map(|r| r.weight_shape.map(|s| s.numel()).unwrap_or(0) + r.bias_len)
        .sum()
}

fn parse_layer(line: &str, line_no: usize) -> Result<LayerSpec, NetError> {
    let err = |msg: String| NetError::Parse { line: line_no, msg };
    let mut tokens = line.split_whitespace();
    let name = tokens.next().ok_or_else(|| err("missing layer name".into()))?;
    let kind_key = tokens
        .next()
        .ok_or_else(|| err(format!("layer {name} missing kind")))?;

    let mut attrs: HashMap<&str, &str> = HashMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {tok}")))?;
        attrs.insert(k, v);
    }
    let usize_attr = |key: &str, default: Option<usize>| -> Result<usize, NetError> {
        match attrs.get(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| err(format!("bad integer for {key}: {v}"))),
            None => default.ok_or_else(|| err(format!("layer {name} missing {key}="))),
        }
    };

    let kind = match kind_key {
        "input" => LayerKind::Input {
            channels: usize_attr("channels", Some(1))?,
        },
        "conv" | "score-conv" => {
            let out = usize_attr("out", None)?;
            let kernel = usize_attr("kernel", None)?;
            let stride = usize_attr("stride", Some(1))?;
            let pad = usize_attr("pad", Some(0))?;
            if kind_key == "conv" {
                LayerKind::Conv { out, kernel, stride, pad }
            } else {
                LayerKind::ScoreConv { out, kernel, stride, pad }
            }
        }
        "pool" => LayerKind::Pool {
            kernel: usize_attr("kernel", Some(3))?,
            stride: usize_attr("stride", Some(2))?,
        },
        "relu" => LayerKind::Relu,
        "mvn" => LayerKind::Mvn,
        "dropout" => {
            let ratio = attrs
                .get("ratio")
                .ok_or_else(|| err(format!("layer {name} missing ratio=")))?
                .parse::<f64>()
                .map_err(|_| err("bad dropout ratio".into()))?;
            LayerKind::Dropout { ratio }
        }
        "upsample" => LayerKind::Upsample {
            out: usize_attr("out", None)?,
            kernel: usize_attr("kernel", Some(4))?,
            stride: usize_attr("stride", Some(2))?,
        },
        "fuse" => LayerKind::Fuse,
        "crop" => LayerKind::Crop,
        "softmax" => LayerKind::Softmax,
        other => return Err(err(format!("unknown layer kind {other}"))),
    };

    Ok(LayerSpec {
        name: name.to_string(),
        kind,
        from: attrs
            .get(if kind_key == "fuse" { "a" } else { "from" })
            .map(|s| s.to_string()),
        with: attrs.get("b").map(|s| s.to_string()),
        like: attrs.get("like").map(|s| s.to_string()),
    })
}

fn layer_line(layer: &LayerSpec) -> String {
    let mut s = format!("{} {}", layer.name, layer.kind.key());
    match layer.kind {
        LayerKind::Input { channels } => {
            s += &format!(" channels={channels}");
        }
        LayerKind::Conv { out, kernel, stride, pad }
        | LayerKind::ScoreConv { out, kernel, stride, pad } => {
            s += &format!(" out={out} kernel={kernel} stride={stride} pad={pad}");
        }
        LayerKind::Pool { kernel, stride } => {
            s += &format!(" kernel={kernel} stride={stride}");
        }
        LayerKind::Dropout { ratio } => {
            s += &format!(" ratio={ratio}");
        }
        LayerKind::Upsample { out, kernel, stride } => {
            s += &format!(" out={out} kernel={kernel} stride={stride}");
        }
        _ => {}
    }
    if let Some(from) = &layer.from {
        s += &format!(" {}={}", if layer.kind == LayerKind::Fuse { "a" } else { "from" }, from);
    }
    if let Some(with) = &layer.with {
        s += &format!(" b={with}");
    }
    if let Some(like) = &layer.like {
        s += &format!(" like={like}");
    }
    s
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

/// The default skip architecture: five conv blocks (64-64, 128-128, 256x3,
/// 512x3, 384-384, all 3x3 pad 1, each conv followed by ReLU and MVN), three
/// overlapping stride-2 pools after the first three blocks, dropout after
/// both block-5 convs, 1x1 score heads from block 5 and from both early
/// pools, and three learnable x2 upsampling stages fused FCN-style before a
/// final crop back to the input extent.
pub fn default_spec(classes: usize, in_channels: usize) -> NetworkSpec {
    use LayerKind as K;
    let mut layers: Vec<LayerSpec> = vec![LayerSpec::plain(
        "data",
        K::Input { channels: in_channels },
    )];

    let conv_block = |layers: &mut Vec<LayerSpec>, block: usize, widths: &[usize]| {
        for (j, &out) in widths.iter().enumerate() {
            let tag = format!("{}_{}", block, j + 1);
            layers.push(LayerSpec::plain(
                &format!("conv{tag}"),
                K::Conv { out, kernel: 3, stride: 1, pad: 1 },
            ));
            layers.push(LayerSpec::plain(&format!("relu{tag}"), K::Relu));
            layers.push(LayerSpec::plain(&format!("mvn{tag}"), K::Mvn));
            if block == 5 {
                layers.push(LayerSpec::plain(
                    &format!("drop{tag}"),
                    K::Dropout { ratio: 0.5 },
                ));
            }
        }
    };

    conv_block(&mut layers, 1, &[64, 64]);
    layers.push(LayerSpec::plain("pool1", K::Pool { kernel: 3, stride: 2 }));
    conv_block(&mut layers, 2, &[128, 128]);
    layers.push(LayerSpec::plain("pool2", K::Pool { kernel: 3, stride: 2 }));
    conv_block(&mut layers, 3, &[256, 256, 256]);
    layers.push(LayerSpec::plain("pool3", K::Pool { kernel: 3, stride: 2 }));
    conv_block(&mut layers, 4, &[512, 512, 512]);
    conv_block(&mut layers, 5, &[384, 384]);

    let score = |name: &str, from: &str| LayerSpec {
        name: name.to_string(),
        kind: K::ScoreConv { out: classes, kernel: 1, stride: 1, pad: 0 },
        from: Some(from.to_string()),
        with: None,
        like: None,
    };
    let upsample = |name: &str, from: Option<&str>| LayerSpec {
        name: name.to_string(),
        kind: K::Upsample { out: classes, kernel: 4, stride: 2 },
        from: from.map(|s| s.to_string()),
        with: None,
        like: None,
    };
    let crop = |name: &str, from: &str, like: &str| LayerSpec {
        name: name.to_string(),
        kind: K::Crop,
        from: Some(from.to_string()),
        with: None,
        like: Some(like.to_string()),
    };
    let fuse = |name: &str, a: &str, b: &str| LayerSpec {
        name: name.to_string(),
        kind: K::Fuse,
        from: Some(a.to_string()),
        with: Some(b.to_string()),
        like: None,
    };

    layers.push(score("score5", "drop5_2"));
    layers.push(upsample("up5", None));
    layers.push(score("score_pool2", "pool2"));
    layers.push(crop("crop5", "up5", "score_pool2"));
    layers.push(fuse("fuse2", "crop5", "score_pool2"));
    layers.push(upsample("up2", Some("fuse2")));
    layers.push(score("score_pool1", "pool1"));
    layers.push(crop("crop2", "up2", "score_pool1"));
    layers.push(fuse("fuse1", "crop2", "score_pool1"));
    layers.push(upsample("up1", Some("fuse1")));
    layers.push(crop("crop_final", "up1", "data"));
    layers.push(LayerSpec::plain("prob", K::Softmax));

    NetworkSpec { layers }
}
