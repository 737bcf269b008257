//! The cycle loop: deterministic dataflow with bounded FIFOs and two-phase
//! commit. Every stage observes start-of-cycle FIFO state and commits its
//! pops and pushes at the end of the cycle, so results and cycle counts are
//! identical under any stage-visitation order.

use std::collections::VecDeque;

use super::plan::{pop_limit, required_inputs, StageOp, StagePlan};
use crate::error::{Error, Result};
use crate::quant::{self, QNodeKind};
use crate::tensor::{DType, Tensor, TensorShape};

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub frames: usize,
    pub total_cycles: u64,
    pub first_frame_latency: u64,
    pub steady_cycles_per_frame: u64,
    pub fps: f64,
    pub onchip_buffer_bits: u64,
    pub bram36k_estimate: u64,
    pub dsp_estimate: u64,
    pub offchip_traffic_bytes: u64,
    pub total_stall_cycles: u64,
    /// Per-stage blocked-cycle counts, in stage order.
    pub stage_stalls: Vec<(String, u64)>,
    /// Per-edge (pushed, popped) token counters at completion, in edge
    /// order; both equal frames x frame_pixels when conservation holds.
    pub edge_transfers: Vec<(String, u64, u64)>,
    pub deadlock: bool,
    pub deadlock_edges: Vec<String>,
}

impl SimReport {
    pub const CSV_HEADER: &'static str = "frames,total_cycles,first_frame_latency,\
steady_cycles_per_frame,fps,onchip_buffer_bits,bram36k_estimate,dsp_estimate,\
offchip_traffic_bytes,total_stall_cycles,deadlock";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{:.2},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.frames,
            self.total_cycles,
            self.first_frame_latency,
            self.steady_cycles_per_frame,
            self.fps,
            self.onchip_buffer_bits,
            self.bram36k_estimate,
            self.dsp_estimate,
            self.offchip_traffic_bytes,
            self.total_stall_cycles,
            self.deadlock
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "frames                 {}\n\
             total cycles           {}\n\
             first frame latency    {}\n\
             steady cycles/frame    {}\n\
             throughput             {:.2} fps\n\
             on-chip buffer bits    {}\n\
             BRAM36K estimate       {}\n\
             DSP estimate           {}\n\
             off-chip traffic       {} bytes\n\
             stall cycles           {}\n\
             deadlock               {}\n",
            self.frames,
            self.total_cycles,
            self.first_frame_latency,
            self.steady_cycles_per_frame,
            self.fps,
            self.onchip_buffer_bits,
            self.bram36k_estimate,
            self.dsp_estimate,
            self.offchip_traffic_bytes,
            self.total_stall_cycles,
            self.deadlock
        )
    }
}

/// Ordinal-counter FIFO; token data lives in the producer's output store.
#[derive(Debug, Clone, Default)]
struct Fifo {
    cap: usize,
    pushed: u64,
    popped: u64,
    f_pushed: u64,
    f_popped: u64,
}

impl Fifo {
    fn new(cap: usize) -> Self {
        Fifo { cap, ..Default::default() }
    }
    fn freeze(&mut self) {
        self.f_pushed = self.pushed;
        self.f_popped = self.popped;
    }
    /// Space as seen at cycle start, accounting for own pushes this cycle.
    fn has_space(&self) -> bool {
        (self.pushed - self.f_popped) < self.cap as u64
    }
    /// Tokens available to pop as seen at cycle start.
    fn available(&self) -> bool {
        self.f_pushed > self.popped
    }
}

#[derive(Debug)]
struct OffchipLink {
    /// Consumer-side bridge buffer; the producer-side bridge is the edge's
    /// `prod` FIFO.
    read_bridge: Fifo,
    /// Ready cycles of pixels in flight between the bridges.
    inflight: VecDeque<u64>,
    write_credit: f64,
    read_credit: f64,
    bytes_written: u64,
    bytes_read: u64,
}

#[derive(Debug)]
struct EdgeRun {
    /// Producer-side FIFO: the stream itself for on-chip edges, the write
    /// bridge for off-chip edges.
    prod: Fifo,
    off: Option<OffchipLink>,
}

impl EdgeRun {
    fn freeze(&mut self) {
        self.prod.freeze();
        if let Some(off) = &mut self.off {
            off.read_bridge.freeze();
        }
    }
    fn consumer_fifo(&self) -> &Fifo {
        match &self.off {
            Some(off) => &off.read_bridge,
            None => &self.prod,
        }
    }
    fn consumer_fifo_mut(&mut self) -> &mut Fifo {
        match &mut self.off {
            Some(off) => &mut off.read_bridge,
            None => &mut self.prod,
        }
    }
    fn popped(&self) -> u64 {
        self.consumer_fifo().popped
    }
}

#[derive(Debug)]
struct StageRun {
    frame: usize,
    o: u64,
    busy: u32,
    stalls: u64,
    in_edges: Vec<usize>,
    out_edges: Vec<usize>,
}

/// Simulate a single frame.
pub fn simulate(plan: &StagePlan, input: &Tensor) -> Result<(Tensor, SimReport)> {
    let (mut logits, report) = simulate_frames(plan, std::slice::from_ref(input))?;
    Ok((logits.pop().unwrap(), report))
}

/// Simulate frames streamed back to back, in the natural stage order.
pub fn simulate_frames(plan: &StagePlan, inputs: &[Tensor]) -> Result<(Vec<Tensor>, SimReport)> {
    let schedule: Vec<usize> = (0..plan.stages.len()).collect();
    simulate_frames_scheduled(plan, inputs, &schedule)
}

/// Simulate with an explicit stage-visitation order. Any permutation yields
/// identical logits, counters, and cycle counts.
pub fn simulate_frames_scheduled(
    plan: &StagePlan,
    inputs: &[Tensor],
    schedule: &[usize],
) -> Result<(Vec<Tensor>, SimReport)> {
    if inputs.is_empty() {
        return Err(Error::InvalidParam("simulate requires at least one input frame".into()));
    }
    {
        let mut seen = vec![false; plan.stages.len()];
        for &s in schedule {
            seen[s] = true;
        }
        if schedule.len() != plan.stages.len() || seen.iter().any(|&v| !v) {
            return Err(Error::InvalidParam("schedule must visit every stage exactly once".into()));
        }
    }
    let (h, w) = plan.input_hw;
    let in_qp = plan.graph.input_qp();
    let mut source_frames: Vec<Vec<i8>> = Vec::with_capacity(inputs.len());
    for input in inputs {
        if input.dtype() != DType::I8 {
            return Err(Error::InvalidParam("simulate expects int8 input frames".into()));
        }
        match &input.quant {
            Some(qp)
                if qp.scales[0] == in_qp.scale && qp.zero_points[0] == in_qp.zero_point => {}
            _ => {
                return Err(Error::InvalidParam(
                    "input is not quantized with the graph's input-edge parameters".into(),
                ))
            }
        }
        let s = input.shape;
        if s.n != 1 || s.c != plan.graph.config.in_channels || s.h != h || s.w != w {
            return Err(Error::Shape(format!(
                "input {s} does not match planned frame 1x{}x{h}x{w}",
                plan.graph.config.in_channels
            )));
        }
        // Planar NCHW to pixel-major for streaming.
        let x = input.as_i8()?;
        let c = s.c;
        let mut pm = vec![0i8; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                pm[p * c + ch] = x[ch * h * w + p];
            }
        }
        source_frames.push(pm);
    }

    let n_stages = plan.stages.len();
    let n_frames = inputs.len();
    let mut stages: Vec<StageRun> = (0..n_stages)
        .map(|id| StageRun {
            frame: 0,
            o: 0,
            busy: plan.stages[id].cycles_per_pixel,
            stalls: 0,
            in_edges: plan
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.dst == id)
                .map(|(i, _)| i)
                .collect(),
            out_edges: plan
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.src == id)
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();
    // Input slots arrive in edge order; sort by slot for indexed access.
    for s in &mut stages {
        s.in_edges.sort_by_key(|&ei| plan.edges[ei].dst_slot);
    }

    let mut edges: Vec<EdgeRun> = plan
        .edges
        .iter()
        .map(|e| EdgeRun {
            prod: Fifo::new(e.capacity_pixels),
            off: e.off_chip.then(|| OffchipLink {
                read_bridge: Fifo::new(e.capacity_pixels),
                inflight: VecDeque::new(),
                write_credit: 0.0,
                read_credit: 0.0,
                bytes_written: 0,
                bytes_read: 0,
            }),
        })
        .collect();

    let mut store_i8: Vec<Vec<i8>> = vec![Vec::new(); n_stages];
    let mut store_f32: Vec<Vec<f32>> = vec![Vec::new(); n_stages];
    let mut completions: Vec<u64> = Vec::with_capacity(n_frames);
    let mut source_bytes = 0u64;
    let mut sink_bytes = 0u64;

    let cycle_limit: u64 = 1_000_000
        + 64 * super::plan::estimate_cycles_per_frame(plan) * (n_frames as u64 + 2);
    let mut cycle: u64 = 0;

    while completions.len() < n_frames {
        for e in &mut edges {
            e.freeze();
        }
        let mut progressed = false;

        for &sid in schedule {
            let info = &plan.stages[sid];
            let total = info.out_pixels();
            let frame_done_for_stage = |st: &StageRun| st.frame >= n_frames;

            // Pops: draw what the pending output still needs, one token per
            // edge per cycle. Once the current frame's tokens are fully
            // drawn, prefetch the next frame's first window so frames
            // stream back to back without a refill bubble.
            {
                let st = &stages[sid];
                if !frame_done_for_stage(st) {
                    let (frame, o) = (st.frame, st.o);
                    for k in 0..st.in_edges.len() {
                        let ei = stages[sid].in_edges[k];
                        let e = &plan.edges[ei];
                        let base = e.frame_pixels * frame as u64;
                        let mut need = base + pop_limit(info, e.dst_slot, o);
                        let run = &mut edges[ei];
                        if frame + 1 < n_frames && run.popped() >= base + e.frame_pixels {
                            need = base + e.frame_pixels + pop_limit(info, e.dst_slot, 0);
                        }
                        if run.popped() < need && run.consumer_fifo().available() {
                            run.consumer_fifo_mut().popped += 1;
                            progressed = true;
                        }
                    }
                }
            }

            match info.op {
                StageOp::Source => {
                    let st = &mut stages[sid];
                    if st.frame < n_frames {
                        let space =
                            st.out_edges.iter().all(|&ei| edges[ei].prod.has_space());
                        if space {
                            for &ei in &st.out_edges {
                                edges[ei].prod.pushed += 1;
                            }
                            let frame = &source_frames[st.frame];
                            let c = info.out_channels;
                            let p = st.o as usize;
                            store_i8[sid].extend_from_slice(&frame[p * c..(p + 1) * c]);
                            source_bytes += c as u64;
                            st.o += 1;
                            progressed = true;
                            if st.o == total {
                                st.o = 0;
                                st.frame += 1;
                            }
                        } else {
                            st.stalls += 1;
                        }
                    }
                }
                StageOp::Sink => {
                    // Pop handled above; account and detect completion.
                    let st = &mut stages[sid];
                    if st.frame < n_frames {
                        let ei = st.in_edges[0];
                        let done = edges[ei].popped();
                        let want = st.frame as u64 * total + st.o + 1;
                        if done >= want {
                            st.o += 1;
                            sink_bytes += 1;
                            progressed = true;
                            if st.o == total {
                                completions.push(cycle + 1);
                                st.o = 0;
                                st.frame += 1;
                            }
                        }
                    }
                }
                _ => {
                    let st = &stages[sid];
                    if frame_done_for_stage(st) {
                        continue;
                    }
                    let (frame, o) = (st.frame, st.o);
                    let deps_ready = st.in_edges.iter().all(|&ei| {
                        let e = &plan.edges[ei];
                        let need =
                            e.frame_pixels * frame as u64 + required_inputs(info, e.dst_slot, o);
                        edges[ei].popped() >= need
                    });
                    if !deps_ready {
                        stages[sid].stalls += 1;
                        continue;
                    }
                    if stages[sid].busy > 1 {
                        stages[sid].busy -= 1;
                        progressed = true;
                        continue;
                    }
                    let space = stages[sid]
                        .out_edges
                        .iter()
                        .all(|&ei| edges[ei].prod.has_space());
                    if !space {
                        stages[sid].stalls += 1;
                        continue;
                    }
                    compute_pixel(plan, sid, frame, o, &mut store_i8, &mut store_f32);
                    for k in 0..stages[sid].out_edges.len() {
                        let ei = stages[sid].out_edges[k];
                        edges[ei].prod.pushed += 1;
                    }
                    let st = &mut stages[sid];
                    st.o += 1;
                    st.busy = info.cycles_per_pixel;
                    progressed = true;
                    if st.o == total {
                        st.o = 0;
                        st.frame += 1;
                    }
                }
            }
        }

        // External-memory ports: move pixels between bridges under the
        // per-port byte budget and latency.
        for (ei, run) in edges.iter_mut().enumerate() {
            let ch = plan.edges[ei].channels as f64;
            if let Some(off) = &mut run.off {
                let cfg = &plan.config.offchip;
                off.write_credit =
                    (off.write_credit + cfg.write_bw_bytes_per_cycle).min(ch + cfg.write_bw_bytes_per_cycle);
                while off.write_credit >= ch && run.prod.f_pushed > run.prod.popped {
                    run.prod.popped += 1;
                    off.inflight.push_back(cycle + cfg.latency_cycles);
                    off.write_credit -= ch;
                    off.bytes_written += ch as u64;
                    progressed = true;
                }
                off.read_credit =
                    (off.read_credit + cfg.read_bw_bytes_per_cycle).min(ch + cfg.read_bw_bytes_per_cycle);
                while off.read_credit >= ch
                    && off.inflight.front().is_some_and(|&ready| ready <= cycle)
                    && (off.read_bridge.pushed - off.read_bridge.f_popped)
                        < off.read_bridge.cap as u64
                {
                    off.inflight.pop_front();
                    off.read_bridge.pushed += 1;
                    off.read_credit -= ch;
                    off.bytes_read += ch as u64;
                    progressed = true;
                }
            }
        }

        if !progressed {
            // External-memory links that are merely waiting on transfer
            // latency or on bandwidth credit will make progress in a later
            // cycle; only a stall with nothing in flight is a deadlock.
            let waiting = edges.iter().enumerate().any(|(ei, e)| {
                let ch = plan.edges[ei].channels as f64;
                e.off.as_ref().is_some_and(|o| {
                    let write_pending =
                        e.prod.pushed > e.prod.popped && o.write_credit < ch;
                    let latency_pending = o.inflight.front().is_some_and(|&r| r > cycle);
                    let read_credit_pending = o.inflight.front().is_some_and(|&r| r <= cycle)
                        && o.read_credit < ch
                        && (o.read_bridge.pushed - o.read_bridge.popped)
                            < o.read_bridge.cap as u64;
                    write_pending || latency_pending || read_credit_pending
                })
            });
            if !waiting {
                let blocked = diagnose(plan, &stages, &edges, n_frames);
                return Err(Error::Deadlock(blocked));
            }
        }
        cycle += 1;
        if cycle > cycle_limit {
            return Err(Error::Deadlock(vec![format!(
                "no completion after {cycle} cycles (livelock guard)"
            )]));
        }
    }

    // Collect logits per frame from the final conv's store.
    let out_node = plan
        .stages
        .iter()
        .position(|s| s.op == StageOp::Sink)
        .ok_or_else(|| Error::Structure("plan has no sink stage".into()))?;
    let final_conv = plan.edges[stages[out_node].in_edges[0]].src;
    let classes = plan.graph.config.num_classes;
    let fs = &store_f32[final_conv];
    let mut logits = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let shape = TensorShape::new(1, classes, h, w);
        let mut planar = vec![0.0f32; shape.num_elements()];
        let base = f * h * w * classes;
        for p in 0..h * w {
            for ch in 0..classes {
                planar[ch * h * w + p] = fs[base + p * classes + ch];
            }
        }
        logits.push(Tensor::from_f32(shape, planar));
    }

    let offchip_traffic_bytes = source_bytes
        + sink_bytes
        + edges
            .iter()
            .filter_map(|e| e.off.as_ref())
            .map(|o| o.bytes_written + o.bytes_read)
            .sum::<u64>();
    let first = completions[0];
    let steady = if n_frames > 1 {
        completions[n_frames - 1] - completions[n_frames - 2]
    } else {
        completions[0]
    };
    let report = SimReport {
        frames: n_frames,
        total_cycles: completions[n_frames - 1],
        first_frame_latency: first,
        steady_cycles_per_frame: steady,
        fps: plan.config.clock_mhz * 1e6 / steady as f64,
        onchip_buffer_bits: plan.onchip_buffer_bits,
        bram36k_estimate: plan.bram36k_estimate,
        dsp_estimate: plan.dsp_estimate,
        offchip_traffic_bytes,
        total_stall_cycles: stages.iter().map(|s| s.stalls).sum(),
        stage_stalls: plan
            .stages
            .iter()
            .zip(&stages)
            .map(|(info, st)| (info.name.clone(), st.stalls))
            .collect(),
        edge_transfers: plan
            .edges
            .iter()
            .zip(&edges)
            .map(|(info, run)| {
                let popped = run.consumer_fifo().popped;
                let pushed = run.prod.pushed;
                (info.name.clone(), pushed, popped)
            })
            .collect(),
        deadlock: false,
        deadlock_edges: Vec::new(),
    };
    Ok((logits, report))
}

/// Produce output pixel `o` of stage `sid` into its store. Reads only
/// tokens already popped from the input FIFOs.
fn compute_pixel(
    plan: &StagePlan,
    sid: usize,
    frame: usize,
    o: u64,
    store_i8: &mut [Vec<i8>],
    store_f32: &mut [Vec<f32>],
) {
    let info = &plan.stages[sid];
    let node = &plan.graph.nodes[sid];
    let (out_w, in_h, in_w) = (info.out_w, info.in_h, info.in_w);
    let (y, x) = ((o / out_w as u64) as usize, (o % out_w as u64) as usize);
    let src0 = node.inputs.first().copied();
    let in_c = info.in_channels;
    let fbase = |pixels: usize| frame * pixels;

    match &node.kind {
        QNodeKind::Input | QNodeKind::Output => unreachable!("handled by the cycle loop"),
        QNodeKind::Relu => {
            let src = src0.unwrap();
            let zp = node.out_qp.zero_point as i8;
            let base = (fbase(in_h * in_w) + y * in_w + x) * in_c;
            let pix: Vec<i8> =
                store_i8[src][base..base + in_c].iter().map(|&q| q.max(zp)).collect();
            store_i8[sid].extend_from_slice(&pix);
        }
        QNodeKind::MaxPool2x2 => {
            let src = src0.unwrap();
            let fb = fbase(in_h * in_w);
            let mut pix = vec![i8::MIN; in_c];
            for dy in 0..2 {
                for dx in 0..2 {
                    let p = fb + (2 * y + dy) * in_w + 2 * x + dx;
                    for ch in 0..in_c {
                        pix[ch] = pix[ch].max(store_i8[src][p * in_c + ch]);
                    }
                }
            }
            store_i8[sid].extend_from_slice(&pix);
        }
        QNodeKind::UpsampleNearest2x => {
            let src = src0.unwrap();
            let p = fbase(in_h * in_w) + (y / 2) * in_w + x / 2;
            let pix = store_i8[src][p * in_c..(p + 1) * in_c].to_vec();
            store_i8[sid].extend_from_slice(&pix);
        }
        QNodeKind::Concat { requant } => {
            let (a, b) = (node.inputs[0], node.inputs[1]);
            let (ca, cb) =
                (plan.graph.nodes[a].out_channels, plan.graph.nodes[b].out_channels);
            let zp_out = node.out_qp.zero_point;
            let p = fbase(in_h * in_w) + y * in_w + x;
            let mut pix = Vec::with_capacity(ca + cb);
            let zp_a = plan.graph.nodes[a].out_qp.zero_point;
            for ch in 0..ca {
                pix.push(quant::engine_concat_requant(
                    store_i8[a][p * ca + ch],
                    zp_a,
                    requant[0],
                    zp_out,
                ));
            }
            let zp_b = plan.graph.nodes[b].out_qp.zero_point;
            for ch in 0..cb {
                pix.push(quant::engine_concat_requant(
                    store_i8[b][p * cb + ch],
                    zp_b,
                    requant[1],
                    zp_out,
                ));
            }
            store_i8[sid].extend_from_slice(&pix);
        }
        QNodeKind::Conv3x3(conv) | QNodeKind::Conv1x1(conv) | QNodeKind::TConv2x2(conv) => {
            let kind = match &node.kind {
                QNodeKind::Conv3x3(_) => quant::EngineConvKind::K3x3,
                QNodeKind::Conv1x1(_) => quant::EngineConvKind::K1x1,
                _ => quant::EngineConvKind::TConv,
            };
            let src = src0.unwrap();
            let zp_in = plan.graph.nodes[src].out_qp.zero_point;
            let fb = fbase(in_h * in_w);
            let src_store = &store_i8[src];
            let get =
                |ic: usize, yy: usize, xx: usize| src_store[(fb + yy * in_w + xx) * in_c + ic];
            if node.emits_f32 {
                let mut pix = vec![0.0f32; info.out_channels];
                quant::engine_conv_pixel_f32(kind, conv, zp_in, in_h, in_w, &get, y, x, &mut pix);
                store_f32[sid].extend_from_slice(&pix);
            } else {
                let zp_out = node.out_qp.zero_point;
                let mut pix = vec![0i8; info.out_channels];
                quant::engine_conv_pixel_i8(
                    kind, conv, zp_in, zp_out, in_h, in_w, &get, y, x, &mut pix,
                );
                store_i8[sid].extend_from_slice(&pix);
            }
        }
    }
}

fn diagnose(
    plan: &StagePlan,
    stages: &[StageRun],
    edges: &[EdgeRun],
    n_frames: usize,
) -> Vec<String> {
    let mut blocked = Vec::new();
    for (sid, st) in stages.iter().enumerate() {
        if st.frame >= n_frames {
            continue;
        }
        let info = &plan.stages[sid];
        for &ei in &st.in_edges {
            let e = &plan.edges[ei];
            let need =
                e.frame_pixels * st.frame as u64 + required_inputs(info, e.dst_slot, st.o);
            if edges[ei].popped() < need {
                blocked.push(format!("{} (empty)", e.name));
            }
        }
        for &ei in &st.out_edges {
            if !edges[ei].prod.has_space() {
                blocked.push(format!("{} (full)", plan.edges[ei].name));
            }
        }
    }
    blocked.sort();
    blocked.dedup();
    blocked
}
