//! The channel-scaled U-Net family as an explicit layer DAG: construction,
//! parameter/operation counting, deterministic initialization, and the float
//! reference forward pass.
//!
//! The scale parameter `c` sets every feature-map width: encoder stages are
//! (c, 2c, 4c, 8c) with a 16c bottleneck, and the decoder mirrors them.
//! c = 32 is the original U-Net. 3x3 convolutions carry no bias (each is
//! followed by batch norm); transposed convolutions and the final 1x1
//! classifier do carry one.

mod forward;
mod init;

pub use forward::{forward, forward_in_order, forward_with};
pub use init::init_params;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SUPPORTED_SCALES: [usize; 5] = [2, 4, 8, 16, 32];

/// Decoder upsampling flavor.
///
/// `Nearest` replaces each learnable 2x2 transposed convolution with nearest
/// upsampling followed by a bias-free 1x1 channel-reduction convolution, so
/// the decoder's 3x3 convolutions keep the same widths in both variants and
/// the nearest variant has strictly fewer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Tconv,
    Nearest,
}

impl std::fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UpsampleMode::Tconv => write!(f, "tconv"),
            UpsampleMode::Nearest => write!(f, "nearest"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channel scale; one of {2, 4, 8, 16, 32}.
    pub c: usize,
    pub upsample_mode: UpsampleMode,
    pub in_channels: usize,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
}

impl ModelConfig {
    pub fn new(c: usize, upsample_mode: UpsampleMode) -> Result<Self> {
        if !SUPPORTED_SCALES.contains(&c) {
            return Err(Error::Config(format!(
                "unsupported channel scale {c}; expected one of {SUPPORTED_SCALES:?}"
            )));
        }
        Ok(Self { c, upsample_mode, in_channels: 3, num_classes: 2, input_hw: (256, 256) })
    }
}

/// Layer node kinds. Parameter slots live inside the variant.
#[derive(Debug, Clone)]
pub enum LayerKind {
    Input,
    /// Weights [out, in, 3, 3]; bias appears only after BN folding.
    Conv3x3 { weights: Tensor, bias: Option<Vec<f32>> },
    /// Weights [out, in, 1, 1]; only the final classifier carries a bias.
    Conv1x1 { weights: Tensor, bias: Option<Vec<f32>> },
    BatchNorm { gamma: Vec<f32>, beta: Vec<f32>, mean: Vec<f32>, var: Vec<f32>, eps: f32 },
    Relu,
    MaxPool2x2,
    UpsampleNearest2x,
    /// Weights [in, out, 2, 2], stride 2, with bias.
    TConv2x2 { weights: Tensor, bias: Vec<f32> },
    /// Two inputs; channels of `inputs[0]` first, then `inputs[1]`.
    Concat,
    Output,
}

impl LayerKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv3x3 { .. } => "conv3x3",
            LayerKind::Conv1x1 { .. } => "conv1x1",
            LayerKind::BatchNorm { .. } => "bn",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2x2 => "maxpool2x2",
            LayerKind::UpsampleNearest2x => "upsample_nearest2x",
            LayerKind::TConv2x2 { .. } => "tconv2x2",
            LayerKind::Concat => "concat",
            LayerKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub kind: LayerKind,
    /// Producer node ids, in input-slot order.
    pub inputs: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Node {
    /// Learnable parameter count of this node.
    pub fn param_count(&self) -> u64 {
        match &self.kind {
            LayerKind::Conv3x3 { bias, .. } => {
                (9 * self.in_channels * self.out_channels
                    + bias.as_ref().map_or(0, |b| b.len())) as u64
            }
            LayerKind::Conv1x1 { bias, .. } => {
                (self.in_channels * self.out_channels + bias.as_ref().map_or(0, |b| b.len()))
                    as u64
            }
            LayerKind::BatchNorm { .. } => 2 * self.out_channels as u64,
            LayerKind::TConv2x2 { .. } => {
                (4 * self.in_channels * self.out_channels + self.out_channels) as u64
            }
            _ => 0,
        }
    }
}

/// The model as an ordered DAG; node order is topological.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub config: ModelConfig,
    pub nodes: Vec<Node>,
    /// (encoder producer node, decoder concat node) per skip connection,
    /// outermost first.
    pub skip_edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelStats {
    pub param_count: u64,
    /// Multiply-accumulate count of the conv/tconv layers at their true
    /// spatial resolutions for the given input size.
    pub mac_count: u64,
    /// 2 ops per MAC; elementwise ops excluded.
    pub gops: f64,
}

/// Build the scaled U-Net graph: 4 encoder stages, bottleneck, 4 mirrored
/// decoder stages, final 1x1 classifier. Decoder concat order is fixed:
/// upsampled decoder channels first, encoder skip channels second.
pub fn build_model(cfg: ModelConfig) -> Result<ModelGraph> {
    if !SUPPORTED_SCALES.contains(&cfg.c) {
        return Err(Error::Config(format!(
            "unsupported channel scale {}; expected one of {SUPPORTED_SCALES:?}",
            cfg.c
        )));
    }
    let mut b = Builder { nodes: Vec::new() };
    let c = cfg.c;
    let widths = [c, 2 * c, 4 * c, 8 * c];
    let bottleneck = 16 * c;

    let input = b.push("input", LayerKind::Input, vec![], cfg.in_channels, cfg.in_channels);

    // Encoder: remember each stage's final activation for the skip edges.
    let mut skips = Vec::new();
    let mut cur = input;
    let mut cur_ch = cfg.in_channels;
    for (i, &w) in widths.iter().enumerate() {
        let stage = format!("enc{}", i + 1);
        cur = b.double_conv(&stage, cur, cur_ch, w);
        skips.push(cur);
        cur = b.push(&format!("pool{}", i + 1), LayerKind::MaxPool2x2, vec![cur], w, w);
        cur_ch = w;
    }
    cur = b.double_conv("bottleneck", cur, cur_ch, bottleneck);
    cur_ch = bottleneck;

    // Decoder, deepest stage first.
    let mut skip_edges = Vec::new();
    for (i, &w) in widths.iter().enumerate().rev() {
        let stage = format!("dec{}", i + 1);
        let up = match cfg.upsample_mode {
            UpsampleMode::Tconv => b.push(
                &format!("{stage}_up"),
                LayerKind::TConv2x2 {
                    weights: Tensor::zeros_f32(crate::tensor::TensorShape::new(cur_ch, w, 2, 2)),
                    bias: vec![0.0; w],
                },
                vec![cur],
                cur_ch,
                w,
            ),
            UpsampleMode::Nearest => {
                let us = b.push(
                    &format!("{stage}_up"),
                    LayerKind::UpsampleNearest2x,
                    vec![cur],
                    cur_ch,
                    cur_ch,
                );
                b.push(
                    &format!("{stage}_upconv"),
                    LayerKind::Conv1x1 {
                        weights: Tensor::zeros_f32(crate::tensor::TensorShape::new(w, cur_ch, 1, 1)),
                        bias: None,
                    },
                    vec![us],
                    cur_ch,
                    w,
                )
            }
        };
        let concat = b.push(
            &format!("{stage}_concat"),
            LayerKind::Concat,
            vec![up, skips[i]],
            2 * w,
            2 * w,
        );
        skip_edges.push((skips[i], concat));
        cur = b.double_conv(&stage, concat, 2 * w, w);
        cur_ch = w;
    }
    skip_edges.reverse();

    let final_conv = b.push(
        "final_conv",
        LayerKind::Conv1x1 {
            weights: Tensor::zeros_f32(crate::tensor::TensorShape::new(
                cfg.num_classes,
                cur_ch,
                1,
                1,
            )),
            bias: Some(vec![0.0; cfg.num_classes]),
        },
        vec![cur],
        cur_ch,
        cfg.num_classes,
    );
    b.push("output", LayerKind::Output, vec![final_conv], cfg.num_classes, cfg.num_classes);

    Ok(ModelGraph { config: cfg, nodes: b.nodes, skip_edges })
}

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn push(
        &mut self,
        name: &str,
        kind: LayerKind,
        inputs: Vec<usize>,
        in_channels: usize,
        out_channels: usize,
    ) -> usize {
        self.nodes.push(Node { name: name.to_string(), kind, inputs, in_channels, out_channels });
        self.nodes.len() - 1
    }

    /// conv3x3 -> bn -> relu, twice.
    fn double_conv(&mut self, stage: &str, mut prev: usize, in_ch: usize, out_ch: usize) -> usize {
        let mut cur_in = in_ch;
        for k in 1..=2 {
            let conv = self.push(
                &format!("{stage}_conv{k}"),
                LayerKind::Conv3x3 {
                    weights: Tensor::zeros_f32(crate::tensor::TensorShape::new(
                        out_ch, cur_in, 3, 3,
                    )),
                    bias: None,
                },
                vec![prev],
                cur_in,
                out_ch,
            );
            let bn = self.push(
                &format!("{stage}_bn{k}"),
                LayerKind::BatchNorm {
                    gamma: vec![1.0; out_ch],
                    beta: vec![0.0; out_ch],
                    mean: vec![0.0; out_ch],
                    var: vec![1.0; out_ch],
                    eps: 1e-5,
                },
                vec![conv],
                out_ch,
                out_ch,
            );
            prev = self.push(&format!("{stage}_relu{k}"), LayerKind::Relu, vec![bn], out_ch, out_ch);
            cur_in = out_ch;
        }
        prev
    }
}

impl ModelGraph {
    pub fn param_count(&self) -> u64 {
        self.nodes.iter().map(Node::param_count).sum()
    }

    /// Spatial size of every node's output for the given input size.
    pub(crate) fn node_resolutions(&self, input_hw: (usize, usize)) -> Vec<(usize, usize)> {
        let mut res = vec![(0usize, 0usize); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            res[i] = match node.kind {
                LayerKind::Input => input_hw,
                LayerKind::MaxPool2x2 => {
                    let (h, w) = res[node.inputs[0]];
                    (h / 2, w / 2)
                }
                LayerKind::UpsampleNearest2x | LayerKind::TConv2x2 { .. } => {
                    let (h, w) = res[node.inputs[0]];
                    (h * 2, w * 2)
                }
                _ => res[node.inputs[0]],
            };
        }
        res
    }

    /// Deterministic one-node-per-line description: name, kind, channel
    /// mapping, output resolution, parameter count.
    pub fn dump(&self, input_hw: (usize, usize)) -> String {
        let res = self.node_resolutions(input_hw);
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {}->{} {}x{} {}\n",
                node.name,
                node.kind.kind_name(),
                node.in_channels,
                node.out_channels,
                res[i].0,
                res[i].1,
                node.param_count()
            ));
        }
        out
    }
}

/// Parameter and MAC accounting for a given input size. Requires the input
/// to be divisible by 16 (four pooling stages).
pub fn count_stats(graph: &ModelGraph, input_hw: (usize, usize)) -> Result<ModelStats> {
    if !input_hw.0.is_multiple_of(16) || !input_hw.1.is_multiple_of(16) {
        return Err(Error::Shape(format!(
            "input {}x{} must be divisible by 16",
            input_hw.0, input_hw.1
        )));
    }
    let res = graph.node_resolutions(input_hw);
    let mut macs: u64 = 0;
    for (i, node) in graph.nodes.iter().enumerate() {
        let (h, w) = res[i];
        let px = (h * w) as u64;
        macs += match node.kind {
            LayerKind::Conv3x3 { .. } => px * 9 * (node.in_channels * node.out_channels) as u64,
            LayerKind::Conv1x1 { .. } => px * (node.in_channels * node.out_channels) as u64,
            // Stride-2 2x2 transposed conv: one kernel tap per output pixel.
            LayerKind::TConv2x2 { .. } => px * (node.in_channels * node.out_channels) as u64,
            _ => 0,
        };
    }
    Ok(ModelStats {
        param_count: graph.param_count(),
        mac_count: macs,
        gops: 2.0 * macs as f64 / 1e9,
    })
}
