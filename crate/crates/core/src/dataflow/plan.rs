//! Stage planning: map each layer of a quantized graph to a hardware stage,
//! size every inter-stage FIFO, and account for buffers, MAC lanes, and
//! off-chip traffic.

use super::{DataflowConfig, SkipPlacement};
use crate::error::{Error, Result};
use crate::quant::{QNodeKind, QuantizedGraph};

/// 36 kilobit block-RAM granularity.
pub const BRAM_BITS: u64 = 36_864;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOp {
    Source,
    Conv3x3,
    Conv1x1,
    TConv,
    Relu,
    MaxPool,
    Upsample,
    Concat,
    Sink,
}

#[derive(Debug, Clone)]
pub struct StageInfo {
    pub node: usize,
    pub name: String,
    pub op: StageOp,
    /// Input spatial size (of input slot 0).
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Multiply-accumulates per output pixel (all output channels).
    pub macs_per_pixel: u64,
    /// Parallel MAC lanes; ceil(macs_per_pixel / folding).
    pub lanes: u64,
    /// Cycles to produce one output pixel.
    pub cycles_per_pixel: u32,
    /// Window/row storage bits local to this stage.
    pub line_buffer_bits: u64,
    /// Weight, bias, and requant storage bits (always on chip).
    pub weight_bits: u64,
}

impl StageInfo {
    pub fn out_pixels(&self) -> u64 {
        (self.out_h * self.out_w) as u64
    }
}

#[derive(Debug, Clone)]
pub struct EdgeInfo {
    pub src: usize,
    pub dst: usize,
    pub dst_slot: usize,
    pub name: String,
    pub channels: usize,
    /// Tokens (pixels) per frame.
    pub frame_pixels: u64,
    pub is_skip: bool,
    /// True when this edge routes through external memory.
    pub off_chip: bool,
    /// On-chip FIFO capacity in pixels (bridge depth per side when
    /// off-chip).
    pub capacity_pixels: usize,
    /// Computed reconvergence depth in pixels (skip edges only).
    pub reconvergence_lag: u64,
}

impl EdgeInfo {
    pub fn bytes_per_frame(&self) -> u64 {
        self.frame_pixels * self.channels as u64
    }
}

/// A fully sized stage plan plus its resource ledger.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub graph: QuantizedGraph,
    pub config: DataflowConfig,
    pub input_hw: (usize, usize),
    pub stages: Vec<StageInfo>,
    pub edges: Vec<EdgeInfo>,
    pub onchip_buffer_bits: u64,
    pub bram36k_estimate: u64,
    pub dsp_estimate: u64,
}

/// Number of input tokens (raster order, slot `slot`) that must have been
/// consumed before output pixel `o` of this stage can be produced.
pub(crate) fn required_inputs(stage: &StageInfo, slot: usize, o: u64) -> u64 {
    let (w_out, w_in, h_in) = (stage.out_w as u64, stage.in_w as u64, stage.in_h as u64);
    let (y, x) = (o / w_out, o % w_out);
    match stage.op {
        StageOp::Source => 0,
        StageOp::Conv3x3 => {
            let yy = (y + 1).min(h_in - 1);
            let xx = (x + 1).min(w_in - 1);
            yy * w_in + xx + 1
        }
        StageOp::Conv1x1 | StageOp::Relu | StageOp::Sink => o + 1,
        StageOp::MaxPool => (2 * y + 1) * w_in + 2 * x + 2,
        StageOp::Upsample | StageOp::TConv => (y / 2) * w_in + x / 2 + 1,
        StageOp::Concat => {
            let _ = slot; // both slots advance in lockstep
            o + 1
        }
    }
}

/// How far ahead of output `o` this stage may draw input tokens: the
/// sliding-window stages buffer up to their line-buffer capacity, everything
/// else draws exactly what the pending output needs.
pub(crate) fn pop_limit(stage: &StageInfo, slot: usize, o: u64) -> u64 {
    match stage.op {
        StageOp::Conv3x3 => {
            let (w_out, w_in) = (stage.out_w as u64, stage.in_w as u64);
            let (y, x) = (o / w_out, o % w_out);
            // Oldest input pixel the window for `o` still needs.
            let first = y.saturating_sub(1) * w_in + x.saturating_sub(1);
            let total = (stage.in_h * stage.in_w) as u64;
            (first + 2 * w_in + 3).min(total)
        }
        _ => required_inputs(stage, slot, o),
    }
}

fn stage_op(kind: &QNodeKind) -> StageOp {
    match kind {
        QNodeKind::Input => StageOp::Source,
        QNodeKind::Conv3x3(_) => StageOp::Conv3x3,
        QNodeKind::Conv1x1(_) => StageOp::Conv1x1,
        QNodeKind::TConv2x2(_) => StageOp::TConv,
        QNodeKind::Relu => StageOp::Relu,
        QNodeKind::MaxPool2x2 => StageOp::MaxPool,
        QNodeKind::UpsampleNearest2x => StageOp::Upsample,
        QNodeKind::Concat { .. } => StageOp::Concat,
        QNodeKind::Output => StageOp::Sink,
    }
}

/// Build the stage plan for one input size. Skip FIFO depths come from a
/// unit-rate symbolic schedule (max producer/consumer imbalance), padded by
/// the configured safety factor and capped at the full tensor. Explicit
/// per-edge overrides below the computed reconvergence depth are rejected
/// as provable deadlocks.
pub fn plan(
    graph: &QuantizedGraph,
    config: &DataflowConfig,
    input_hw: (usize, usize),
) -> Result<StagePlan> {
    let (h, w) = input_hw;
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Shape(format!("input {h}x{w} must be divisible by 16")));
    }
    if config.skip_safety < 1.0 {
        return Err(Error::InvalidParam(format!(
            "skip_safety must be >= 1, got {}",
            config.skip_safety
        )));
    }
    if config.offchip.read_bw_bytes_per_cycle <= 0.0
        || config.offchip.write_bw_bytes_per_cycle <= 0.0
    {
        return Err(Error::InvalidParam(
            "off-chip port bandwidths must be positive".into(),
        ));
    }

    // Stage geometry and timing.
    let mut stages: Vec<StageInfo> = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let (in_h, in_w) = if node.inputs.is_empty() {
            (h, w)
        } else {
            let s = &stages[node.inputs[0]];
            (s.out_h, s.out_w)
        };
        let op = stage_op(&node.kind);
        let (out_h, out_w) = match op {
            StageOp::MaxPool => (in_h / 2, in_w / 2),
            StageOp::Upsample | StageOp::TConv => (in_h * 2, in_w * 2),
            _ => (in_h, in_w),
        };
        let macs_per_pixel = match op {
            StageOp::Conv3x3 => 9 * node.in_channels as u64 * node.out_channels as u64,
            StageOp::Conv1x1 | StageOp::TConv => {
                node.in_channels as u64 * node.out_channels as u64
            }
            _ => 0,
        };
        let folding =
            *config.folding.get(&node.name).unwrap_or(&config.default_folding).max(&1) as u64;
        let (lanes, cycles_per_pixel) = if macs_per_pixel > 0 {
            let lanes = macs_per_pixel.div_ceil(folding);
            (lanes, macs_per_pixel.div_ceil(lanes) as u32)
        } else {
            (0, 1)
        };
        let act_bits = 8u64;
        let line_buffer_bits = match op {
            StageOp::Conv3x3 => (2 * in_w as u64 + 3) * node.in_channels as u64 * act_bits,
            StageOp::MaxPool => (in_w as u64 / 2) * node.in_channels as u64 * act_bits,
            StageOp::Upsample | StageOp::TConv => in_w as u64 * node.in_channels as u64 * act_bits,
            _ => 0,
        };
        let weight_bits = match &node.kind {
            QNodeKind::Conv3x3(c) | QNodeKind::Conv1x1(c) | QNodeKind::TConv2x2(c) => {
                c.weights.len() as u64 * graph.weight_bits as u64
                    + c.bias_q.len() as u64 * 32
                    + c.requant.len() as u64 * 64
                    + c.dequant_scale.len() as u64 * 32
            }
            _ => 0,
        };
        stages.push(StageInfo {
            node: stages.len(),
            name: node.name.clone(),
            op,
            in_h,
            in_w,
            out_h,
            out_w,
            in_channels: node.in_channels,
            out_channels: node.out_channels,
            macs_per_pixel,
            lanes,
            cycles_per_pixel,
            line_buffer_bits,
            weight_bits,
        });
    }

    // Edges.
    let mut edges: Vec<EdgeInfo> = Vec::new();
    for (dst, node) in graph.nodes.iter().enumerate() {
        for (slot, &src) in node.inputs.iter().enumerate() {
            let is_skip = graph.skip_edges.contains(&(src, dst));
            edges.push(EdgeInfo {
                src,
                dst,
                dst_slot: slot,
                name: format!("{}->{}", graph.nodes[src].name, graph.nodes[dst].name),
                channels: graph.nodes[src].out_channels,
                frame_pixels: stages[src].out_pixels(),
                is_skip,
                off_chip: is_skip && config.skip_placement == SkipPlacement::OffChip,
                capacity_pixels: 0,
                reconvergence_lag: 0,
            });
        }
    }

    // Unit-rate symbolic schedule with unbounded FIFOs: track, per skip
    // edge, the maximum number of produced-but-unconsumed pixels.
    let lags = symbolic_lags(&stages, &edges);
    for (e, lag) in edges.iter_mut().zip(&lags) {
        e.reconvergence_lag = *lag;
    }

    // FIFO capacities.
    for e in &mut edges {
        let default_pixels = 4usize;
        let override_elems = config.stream_depths.get(&e.name).copied();
        if e.is_skip {
            let lag = e.reconvergence_lag.max(1);
            let cap = if let Some(elems) = override_elems {
                let pixels = elems.div_ceil(e.channels);
                if (pixels as u64) < lag {
                    return Err(Error::Plan {
                        edge: e.name.clone(),
                        required_depth: lag as usize * e.channels,
                    });
                }
                pixels
            } else {
                // The safety margin also covers back-to-back frames: a lag
                // close to the full tensor grows into a double buffer so
                // the next frame's encoder is not serialized against the
                // decoder's drain.
                ((lag as f64 * config.skip_safety).ceil() as u64).min(2 * e.frame_pixels) as usize
            };
            e.capacity_pixels = if e.off_chip { config.bridge_depth_pixels.max(1) } else { cap };
        } else {
            e.capacity_pixels = match (override_elems, config.default_stream_depth) {
                (Some(elems), _) => elems.div_ceil(e.channels).max(1),
                (None, 0) => default_pixels,
                (None, elems) => elems.div_ceil(e.channels).max(1),
            };
        }
    }

    // Resource ledger: each FIFO, line buffer, and weight store is a
    // physical buffer rounded up to whole BRAMs.
    let act_bits = 8u64;
    let mut onchip_buffer_bits = 0u64;
    let mut bram = 0u64;
    let mut add_buffer = |bits: u64| {
        if bits > 0 {
            onchip_buffer_bits += bits;
            bram += bits.div_ceil(BRAM_BITS);
        }
    };
    for s in &stages {
        add_buffer(s.line_buffer_bits);
        add_buffer(s.weight_bits);
    }
    for e in &edges {
        let fifo_bits = e.capacity_pixels as u64 * e.channels as u64 * act_bits;
        if e.off_chip {
            // Bridge buffer on each side of the external port.
            add_buffer(fifo_bits);
            add_buffer(fifo_bits);
        } else {
            add_buffer(fifo_bits);
        }
    }
    let dsp_estimate = stages.iter().map(|s| s.lanes).sum();

    Ok(StagePlan {
        graph: graph.clone(),
        config: config.clone(),
        input_hw,
        stages,
        edges,
        onchip_buffer_bits,
        bram36k_estimate: bram,
        dsp_estimate,
    })
}

/// Ideal unit-rate schedule: every stage emits one pixel per cycle as soon
/// as its input windows are complete, FIFOs unbounded. Returns the maximum
/// occupancy seen on every edge.
fn symbolic_lags(stages: &[StageInfo], edges: &[EdgeInfo]) -> Vec<u64> {
    let n = stages.len();
    let totals: Vec<u64> = stages.iter().map(|s| s.out_pixels()).collect();
    let mut emitted = vec![0u64; n];
    let in_edges: Vec<Vec<usize>> = {
        let mut v = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            v[e.dst].push(i);
        }
        v
    };
    let mut lags = vec![0u64; edges.len()];
    loop {
        let mut progressed = false;
        let snapshot = emitted.clone();
        for (id, stage) in stages.iter().enumerate() {
            if emitted[id] >= totals[id] {
                continue;
            }
            let ready = in_edges[id].iter().all(|&ei| {
                let e = &edges[ei];
                snapshot[e.src] >= required_inputs(stage, e.dst_slot, emitted[id])
            });
            if ready {
                emitted[id] += 1;
                progressed = true;
            }
        }
        for (i, e) in edges.iter().enumerate() {
            // A consumer drains its FIFO up to what the pending output
            // needs; everything the producer emitted beyond that sits in
            // the FIFO and bounds its required depth.
            let consumed = if emitted[e.dst] >= totals[e.dst] {
                emitted[e.src]
            } else {
                required_inputs(&stages[e.dst], e.dst_slot, emitted[e.dst]).min(emitted[e.src])
            };
            lags[i] = lags[i].max(emitted[e.src] - consumed);
        }
        if !progressed {
            break;
        }
    }
    lags
}

/// Steady-state throughput from the bottleneck stage:
/// fps = clock / max_s(out_pixels(s) * cycles_per_pixel(s)).
pub fn estimate_throughput(plan: &StagePlan) -> f64 {
    let cycles_per_frame = estimate_cycles_per_frame(plan);
    plan.config.clock_mhz * 1e6 / cycles_per_frame as f64
}

pub fn estimate_cycles_per_frame(plan: &StagePlan) -> u64 {
    plan.stages
        .iter()
        .map(|s| s.out_pixels() * s.cycles_per_pixel as u64)
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Deterministic one-stage-per-line description for golden tests.
pub fn plan_dump(plan: &StagePlan) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "plan {}x{} skips={} clock_mhz={} bits={}\n",
        plan.input_hw.0,
        plan.input_hw.1,
        plan.config.skip_placement,
        plan.config.clock_mhz,
        plan.graph.weight_bits,
    ));
    for s in &plan.stages {
        out.push_str(&format!(
            "stage {} op={:?} {}x{}->{}x{} ch={}->{} mpp={} lanes={} cpp={} linebuf={} wbits={}\n",
            s.name,
            s.op,
            s.in_h,
            s.in_w,
            s.out_h,
            s.out_w,
            s.in_channels,
            s.out_channels,
            s.macs_per_pixel,
            s.lanes,
            s.cycles_per_pixel,
            s.line_buffer_bits,
            s.weight_bits
        ));
    }
    for e in &plan.edges {
        out.push_str(&format!(
            "edge {} ch={} pixels={} cap={} skip={} offchip={} lag={}\n",
            e.name, e.channels, e.frame_pixels, e.capacity_pixels, e.is_skip, e.off_chip,
            e.reconvergence_lag
        ));
    }
    out.push_str(&format!(
        "buffers bits={} bram36k={} dsp={}\n",
        plan.onchip_buffer_bits, plan.bram36k_estimate, plan.dsp_estimate
    ));
    out
}
