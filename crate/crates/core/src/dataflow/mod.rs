//! Cycle-approximate simulator of the fully pipelined streaming accelerator:
//! one hardware stage per layer, bounded on-chip streams between stages,
//! line-buffered sliding windows, and skip connections held either in
//! on-chip FIFOs or routed through external memory behind small bridge
//! buffers. Stages start computing as soon as their input windows are
//! complete, so all layers operate concurrently.
//!
//! The simulator is functionally exact: its logits are bit-identical to
//! [`crate::quant::integer_forward`] on the same quantized graph. Timing is
//! element-level token passing with per-stage cycles-per-pixel derived from
//! the folding factor; it ranks designs and exposes deadlocks rather than
//! modeling bit-level hardware timing.

mod plan;
mod sim;


pub use plan::{estimate_throughput, plan, plan_dump, EdgeInfo, StageInfo, StagePlan};
pub use sim::{simulate, simulate_frames, simulate_frames_scheduled, SimReport};

use std::collections::BTreeMap;

/// Where skip-connection tensors live during a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipPlacement {
    /// Skip FIFOs sized to the reconvergence depth (or the full tensor) in
    /// on-chip memory.
    OnChip,
    /// Skip tensors round-trip through external memory; only small bridge
    /// buffers remain on chip.
    OffChip,
}

impl std::fmt::Display for SkipPlacement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipPlacement::OnChip => write!(f, "on_chip"),
            SkipPlacement::OffChip => write!(f, "off_chip"),
        }
    }
}

/// External-memory port model: fixed latency plus a per-cycle byte budget.
/// Every skip connection gets an independent read and write port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffchipConfig {
    pub read_bw_bytes_per_cycle: f64,
    pub write_bw_bytes_per_cycle: f64,
    pub latency_cycles: u64,
}

impl Default for OffchipConfig {
    fn default() -> Self {
        Self { read_bw_bytes_per_cycle: 16.0, write_bw_bytes_per_cycle: 16.0, latency_cycles: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataflowConfig {
    pub skip_placement: SkipPlacement,
    pub clock_mhz: f64,
    /// Time-multiplexing degree per layer: a stage with folding f takes
    /// about f cycles per output pixel using ceil(macs_per_pixel / f)
    /// parallel MAC lanes. Keyed by node name; unlisted layers use
    /// `default_folding`.
    pub default_folding: u32,
    pub folding: BTreeMap<String, u32>,
    /// Default inter-stage FIFO capacity in elements (int8 activations).
    pub default_stream_depth: usize,
    /// Per-edge capacity overrides in elements, keyed by "src->dst".
    pub stream_depths: BTreeMap<String, usize>,
    /// Safety factor applied to the computed skip reconvergence depth.
    pub skip_safety: f64,
    /// On-chip bridge buffer depth (pixels) on each side of an off-chip
    /// skip port.
    pub bridge_depth_pixels: usize,
    pub offchip: OffchipConfig,
}

impl Default for DataflowConfig {
    fn default() -> Self {
        Self {
            skip_placement: SkipPlacement::OnChip,
            clock_mhz: 300.0,
            default_folding: 1,
            folding: BTreeMap::new(),
            default_stream_depth: 0, // 0 = planner picks 4 pixels per edge
            stream_depths: BTreeMap::new(),
            skip_safety: 2.0,
            bridge_depth_pixels: 8,
            offchip: OffchipConfig::default(),
        }
    }
}

impl DataflowConfig {
    pub fn on_chip() -> Self {
        Self::default()
    }

    pub fn off_chip() -> Self {
        Self { skip_placement: SkipPlacement::OffChip, ..Self::default() }
    }
}
