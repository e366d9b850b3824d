//! Timing model of one compute cluster and analytic scaling to the
//! full part.
//!
//! A cluster is eight single-issue in-order worker cores plus one DMA
//! control core sharing a banked 128 KiB SPM. Worker issue is modeled
//! at slot granularity: every issue slot costs one cycle, hardware-loop
//! regions replay their body with zero per-iteration overhead, and
//! stream-fed FPU ops never wait for operands except on SPM bank
//! conflicts. DMA transfers are modeled by a bandwidth/startup formula
//! and overlap with compute through software-pipelined double
//! buffering.
//!
//! One simulation instance is strictly single-threaded and
//! deterministic; independent instances may run concurrently.

use crate::minifloat::FloatFormat;
use crate::spm::bank_of;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error("hardware loop body may only contain FPU or SU-driven slots, found {0:?}")]
    BadLoopBody(SlotKind),
    #[error("empty hardware loop body")]
    EmptyLoopBody,
    #[error("zero-byte DMA request")]
    EmptyDma,
    #[error("overlap schedule needs at least one tile")]
    NoTiles,
    #[error("unknown config key '{0}'")]
    UnknownConfigKey(String),
    #[error("bad value for config key '{key}': {value}")]
    BadConfigValue { key: String, value: String },
}

/// Machine parameters. Defaults reproduce the part's topology: 2
/// chiplets x 6 groups x 4 clusters x (8 workers + 1 DMA core), 128 KiB
/// of SPM per cluster, 64 GB/s of HBM bandwidth per group at 1.0 GHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub n_workers: u32,
    pub spm_bytes: u32,
    pub spm_banks: u32,
    pub freq_hz: f64,
    pub group_bw_bytes_per_s: f64,
    pub n_clusters_per_group: u32,
    pub n_groups_per_chiplet: u32,
    pub n_chiplets: u32,
    /// Fixed per-request DMA startup cost, cycles.
    pub dma_startup_cycles: u64,
    /// Cluster DMA port width (512-bit interconnect).
    pub dma_port_bytes_per_cycle: u32,
    /// Clusters concurrently pulling on the group's HBM bandwidth.
    pub active_clusters: u32,
    /// Operand FIFO depth of each stream unit. Transient bank conflicts
    /// on stream-fed slots are absorbed by FIFO occupancy; only
    /// sustained oversubscription stalls the consumer.
    pub su_fifo_depth: u32,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_workers: 8,
            spm_bytes: 128 * 1024,
            spm_banks: 32,
            freq_hz: 1.0e9,
            group_bw_bytes_per_s: 64.0e9,
            n_clusters_per_group: 4,
            n_groups_per_chiplet: 6,
            n_chiplets: 2,
            dma_startup_cycles: 100,
            dma_port_bytes_per_cycle: 64,
            active_clusters: 1,
            su_fifo_depth: 8,
        }
    }
}

impl ClusterConfig {
    pub fn total_clusters(&self) -> u32 {
        self.n_clusters_per_group * self.n_groups_per_chiplet * self.n_chiplets
    }

    pub fn total_workers(&self) -> u32 {
        self.total_clusters() * self.n_workers
    }

    /// All cores including the per-cluster DMA control cores.
    pub fn total_cores(&self) -> u32 {
        self.total_clusters() * (self.n_workers + 1)
    }

    /// Peak chip FLOP/s for a format: one SIMD FMA per worker per cycle,
    /// 2 flops per lane.
    pub fn peak_chip_flops(&self, format: FloatFormat) -> f64 {
        self.total_workers() as f64 * 2.0 * format.lanes() as f64 * self.freq_hz
    }

    /// Peak chip index comparisons per second: one comparator per
    /// worker at one comparison per cycle.
    pub fn peak_chip_comps(&self) -> f64 {
        self.total_workers() as f64 * self.freq_hz
    }

    /// DMA bytes per cycle available to one cluster: the 512-bit port,
    /// capped by a fair share of the group bandwidth among active
    /// clusters.
    pub fn dma_bytes_per_cycle(&self) -> f64 {
        let share = self.group_bw_bytes_per_s / self.active_clusters.max(1) as f64 / self.freq_hz;
        (self.dma_port_bytes_per_cycle as f64).min(share)
    }

    /// Apply one `key=value` override from a flat config document.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), MachineError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, MachineError> {
            value.trim().parse().map_err(|_| MachineError::BadConfigValue {
                key: key.into(),
                value: value.into(),
            })
        }
        match key.trim() {
            "n_workers" => self.n_workers = parse(key, value)?,
            "spm_bytes" => self.spm_bytes = parse(key, value)?,
            "spm_banks" => self.spm_banks = parse(key, value)?,
            "freq_hz" => self.freq_hz = parse(key, value)?,
            "group_bw_bytes_per_s" => self.group_bw_bytes_per_s = parse(key, value)?,
            "n_clusters_per_group" => self.n_clusters_per_group = parse(key, value)?,
            "n_groups_per_chiplet" => self.n_groups_per_chiplet = parse(key, value)?,
            "n_chiplets" => self.n_chiplets = parse(key, value)?,
            "dma_startup_cycles" => self.dma_startup_cycles = parse(key, value)?,
            "dma_port_bytes_per_cycle" => self.dma_port_bytes_per_cycle = parse(key, value)?,
            "active_clusters" => self.active_clusters = parse(key, value)?,
            "su_fifo_depth" => self.su_fifo_depth = parse(key, value)?,
            other => return Err(MachineError::UnknownConfigKey(other.into())),
        }
        Ok(())
    }

    /// Parse a flat `key=value` config document (# starts a comment).
    pub fn apply_document(&mut self, text: &str) -> Result<(), MachineError> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| MachineError::BadConfigValue {
                key: line.into(),
                value: "expected key=value".into(),
            })?;
            self.apply_override(k, v)?;
        }
        Ok(())
    }
}

/// One issue slot of a worker core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    IntOp,
    Load,
    Store,
    FpuFma(FloatFormat),
    FpuSdotp(FloatFormat, FloatFormat),
    FpuAdd3(FloatFormat),
    SuConfig,
    Comparison,
    Stall,
}

impl SlotKind {
    /// FMA-equivalent flops issued by this slot (2 per SIMD lane, in
    /// the slot's source format). Sum-dot-products keep the same flop
    /// rate as SIMD FMA at the source width.
    pub fn flops(self) -> u64 {
        match self {
            SlotKind::FpuFma(f) | SlotKind::FpuAdd3(f) => 2 * f.lanes() as u64,
            SlotKind::FpuSdotp(src, _) => 2 * src.lanes() as u64,
            _ => 0,
        }
    }

    /// Slots whose SPM traffic flows through the stream units' FIFOs
    /// (as opposed to direct core loads/stores).
    pub fn stream_fed(self) -> bool {
        matches!(
            self,
            SlotKind::FpuFma(_)
                | SlotKind::FpuSdotp(_, _)
                | SlotKind::FpuAdd3(_)
                | SlotKind::Comparison
        )
    }

    /// Slots the hardware loop buffer may replay without integer-core
    /// issue: FPU-class ops and SU-driven comparisons.
    pub fn loopable(self) -> bool {
        matches!(
            self,
            SlotKind::FpuFma(_)
                | SlotKind::FpuSdotp(_, _)
                | SlotKind::FpuAdd3(_)
                | SlotKind::Comparison
        )
    }
}

/// A worker's issue stream: straight-line slots plus hardware-loop
/// regions whose body replays `iters` times with zero loop overhead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceItem {
    Slot(SlotKind),
    Loop { body: Vec<SlotKind>, iters: u64 },
}

/// Per-worker ordered issue streams for one cluster-run.
#[derive(Clone, Debug, Default)]
pub struct IssueTrace {
    pub workers: Vec<Vec<TraceItem>>,
}

/// Slot accounting for one worker.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub cycles: u64,
    pub flops: u64,
    pub fpu_slots: u64,
    pub int_slots: u64,
    pub load_slots: u64,
    pub store_slots: u64,
    pub su_config_slots: u64,
    pub comparison_slots: u64,
    pub stall_slots: u64,
}

impl WorkerStats {
    pub fn push(&mut self, kind: SlotKind) {
        self.push_n(kind, 1);
    }

    pub fn push_n(&mut self, kind: SlotKind, n: u64) {
        self.cycles += n;
        self.flops += kind.flops() * n;
        match kind {
            SlotKind::IntOp => self.int_slots += n,
            SlotKind::Load => self.load_slots += n,
            SlotKind::Store => self.store_slots += n,
            SlotKind::FpuFma(_) | SlotKind::FpuSdotp(_, _) | SlotKind::FpuAdd3(_) => {
                self.fpu_slots += n
            }
            SlotKind::SuConfig => self.su_config_slots += n,
            SlotKind::Comparison => self.comparison_slots += n,
            SlotKind::Stall => self.stall_slots += n,
        }
    }

    pub fn add_stalls(&mut self, n: u64) {
        self.cycles += n;
        self.stall_slots += n;
    }

    pub fn merge(&mut self, other: &WorkerStats) {
        self.cycles += other.cycles;
        self.flops += other.flops;
        self.fpu_slots += other.fpu_slots;
        self.int_slots += other.int_slots;
        self.load_slots += other.load_slots;
        self.store_slots += other.store_slots;
        self.su_config_slots += other.su_config_slots;
        self.comparison_slots += other.comparison_slots;
        self.stall_slots += other.stall_slots;
    }

    /// FPU utilization of this worker against one full-width FPU op per
    /// cycle in `format`.
    pub fn fpu_util(&self, format: FloatFormat) -> f64 {
        if self.cycles == 0 {
            return 0.0;
        }
        self.flops as f64 / (2.0 * format.lanes() as f64 * self.cycles as f64)
    }
}

/// Single-issue in-order model over one worker's trace: each slot costs
/// one cycle, loop regions issue their body once per iteration.
pub fn simulate_worker(items: &[TraceItem]) -> Result<WorkerStats, MachineError> {
    let mut stats = WorkerStats::default();
    for item in items {
        match item {
            TraceItem::Slot(kind) => stats.push(*kind),
            TraceItem::Loop { body, iters } => {
                if body.is_empty() {
                    return Err(MachineError::EmptyLoopBody);
                }
                for kind in body {
                    if !kind.loopable() {
                        return Err(MachineError::BadLoopBody(*kind));
                    }
                    stats.push_n(*kind, *iters);
                }
            }
        }
    }
    Ok(stats)
}

/// Cluster-level accounting: per-worker stats plus the cluster cycle
/// count (the slowest worker).
#[derive(Clone, Debug, Default)]
pub struct ClusterStats {
    pub per_worker: Vec<WorkerStats>,
}

impl ClusterStats {
    pub fn cycles(&self) -> u64 {
        self.per_worker.iter().map(|w| w.cycles).max().unwrap_or(0)
    }

    pub fn flops(&self) -> u64 {
        self.per_worker.iter().map(|w| w.flops).sum()
    }

    pub fn comparisons(&self) -> u64 {
        self.per_worker.iter().map(|w| w.comparison_slots).sum()
    }
}

pub fn simulate_cluster(trace: &IssueTrace) -> Result<ClusterStats, MachineError> {
    let per_worker = trace
        .workers
        .iter()
        .map(|w| simulate_worker(w))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClusterStats { per_worker })
}

/// Stall cycles for one cycle's worth of concurrent SPM accesses:
/// word-interleaved banks, one access per bank per cycle, each excess
/// access costs its requester one stall.
pub fn spm_contention(addresses: &[u32], cfg: &ClusterConfig) -> u64 {
    let mut counts = vec![0u64; cfg.spm_banks as usize];
    for &a in addresses {
        counts[bank_of(a, cfg.spm_banks) as usize] += 1;
    }
    counts.iter().map(|&c| c.saturating_sub(1)).sum()
}

/// One executed slot of a kernel's per-worker step stream, carrying the
/// SPM accesses the slot performs (at most three: two operand streams
/// plus an index or write-back access).
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub kind: SlotKind,
    n_addrs: u8,
    addrs: [u32; 3],
}

impl Step {
    pub fn new(kind: SlotKind) -> Step {
        Step {
            kind,
            n_addrs: 0,
            addrs: [0; 3],
        }
    }

    pub fn with_addrs(kind: SlotKind, addrs: &[u32]) -> Step {
        debug_assert!(addrs.len() <= 3);
        let mut s = Step::new(kind);
        s.n_addrs = addrs.len() as u8;
        s.addrs[..addrs.len()].copy_from_slice(addrs);
        s
    }

    pub fn addrs(&self) -> &[u32] {
        &self.addrs[..self.n_addrs as usize]
    }
}

/// Cycle-lockstep executor for one cluster: every worker consumes its
/// step stream one slot per cycle while the SPM banks arbitrate the
/// slots' concurrent accesses. A worker whose access loses arbitration
/// stalls one cycle per excess access. Arbitration priority rotates
/// with the cycle counter.
///
/// Kernels feed the engine chunk by chunk (one chunk per SPM tile);
/// `sync` closes a chunk with a barrier, the way double-buffered tile
/// swaps do.
pub struct LockstepEngine {
    n_banks: u32,
    fifo_depth: u32,
    next_free: Vec<u64>,
    credits: Vec<u32>,
    chunk_start: u64,
    bank_used: Vec<u64>,
    pub stats: Vec<WorkerStats>,
}

impl LockstepEngine {
    pub fn new(cfg: &ClusterConfig) -> LockstepEngine {
        let n = cfg.n_workers as usize;
        LockstepEngine {
            n_banks: cfg.spm_banks,
            fifo_depth: cfg.su_fifo_depth,
            next_free: vec![0; n],
            credits: vec![cfg.su_fifo_depth; n],
            chunk_start: 0,
            bank_used: vec![u64::MAX; cfg.spm_banks as usize],
            stats: vec![WorkerStats::default(); n],
        }
    }

    /// Execute one chunk of per-worker step streams to completion.
    pub fn run_chunk(&mut self, chunk: Vec<Vec<Step>>) {
        let n = self.next_free.len();
        debug_assert_eq!(chunk.len(), n);
        let mut pos = vec![0usize; n];
        loop {
            let mut cycle = u64::MAX;
            for w in 0..n {
                if pos[w] < chunk[w].len() {
                    cycle = cycle.min(self.next_free[w]);
                }
            }
            if cycle == u64::MAX {
                break;
            }
            for k in 0..n {
                let w = (k + cycle as usize) % n;
                if self.next_free[w] != cycle || pos[w] >= chunk[w].len() {
                    continue;
                }
                let step = chunk[w][pos[w]];
                pos[w] += 1;
                let mut conflicts = 0u32;
                for &a in step.addrs() {
                    let b = bank_of(a, self.n_banks) as usize;
                    if self.bank_used[b] == cycle {
                        conflicts += 1;
                    } else {
                        self.bank_used[b] = cycle;
                    }
                }
                let stalls = if step.kind.stream_fed() {
                    // FIFO occupancy hides transient conflicts; only
                    // what the drained FIFO cannot cover stalls
                    let absorbed = conflicts.min(self.credits[w]);
                    self.credits[w] -= absorbed;
                    conflicts - absorbed
                } else {
                    conflicts
                };
                if conflicts == 0 {
                    self.credits[w] = (self.credits[w] + 1).min(self.fifo_depth);
                }
                self.stats[w].push(step.kind);
                self.stats[w].add_stalls(stalls as u64);
                self.next_free[w] = cycle + 1 + stalls as u64;
            }
        }
    }

    /// Barrier at a tile boundary. Returns the chunk's cluster cycles
    /// (slowest worker since the previous sync).
    pub fn sync(&mut self) -> u64 {
        let end = self.next_free.iter().copied().max().unwrap_or(0);
        for nf in &mut self.next_free {
            *nf = end;
        }
        let cycles = end - self.chunk_start;
        self.chunk_start = end;
        cycles
    }

    pub fn finish(self) -> ClusterStats {
        ClusterStats {
            per_worker: self.stats,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmaKind {
    D1,
    D2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemSide {
    Spm,
    Hbm,
}

/// A 1D or 2D block transfer issued by the cluster's DMA core. A 1D
/// transfer is a 2D transfer with one row.
#[derive(Clone, Copy, Debug)]
pub struct DmaRequest {
    pub kind: DmaKind,
    pub rows: u64,
    pub row_bytes: u64,
    pub src: MemSide,
    pub dst: MemSide,
}

impl DmaRequest {
    pub fn d1(bytes: u64, src: MemSide, dst: MemSide) -> DmaRequest {
        DmaRequest {
            kind: DmaKind::D1,
            rows: 1,
            row_bytes: bytes,
            src,
            dst,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows * self.row_bytes
    }
}

/// Cycles for one DMA request: bandwidth-limited streaming plus a fixed
/// startup. Short 2D rows (below the port width) pay one startup per
/// row; otherwise rows stream back to back.
pub fn dma_cycles(req: &DmaRequest, cfg: &ClusterConfig) -> Result<u64, MachineError> {
    let total = req.total_bytes();
    if total == 0 {
        return Err(MachineError::EmptyDma);
    }
    let rows = if req.kind == DmaKind::D1 { 1 } else { req.rows };
    let bpc = cfg.dma_bytes_per_cycle();
    let stream = (total as f64 / bpc).ceil() as u64;
    let mut cycles = stream + cfg.dma_startup_cycles;
    if rows > 1 && req.row_bytes < cfg.dma_port_bytes_per_cycle as u64 {
        cycles += (rows - 1) * cfg.dma_startup_cycles;
    }
    Ok(cycles)
}

/// Per-tile cycle counts consumed by the double-buffering schedule.
#[derive(Clone, Copy, Debug, Default)]
pub struct TilePhases {
    pub compute: u64,
    pub dma_in: u64,
    pub dma_out: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Total with software-pipelined double buffering.
    pub total: u64,
    /// Total with no compute/DMA overlap at all.
    pub serial_total: u64,
}

/// Software-pipelined double buffering over a tile sequence: tile t's
/// compute overlaps tile t+1's fill and tile t-1's drain.
pub fn overlap_schedule(tiles: &[TilePhases]) -> Result<OverlapReport, MachineError> {
    if tiles.is_empty() {
        return Err(MachineError::NoTiles);
    }
    let n = tiles.len();
    let mut total = tiles[0].dma_in;
    for t in 0..n {
        let next_in = if t + 1 < n { tiles[t + 1].dma_in } else { 0 };
        let prev_out = if t > 0 { tiles[t - 1].dma_out } else { 0 };
        total += tiles[t].compute.max(next_in + prev_out);
    }
    total += tiles[n - 1].dma_out;
    let serial_total = tiles
        .iter()
        .map(|t| t.compute + t.dma_in + t.dma_out)
        .sum();
    Ok(OverlapReport {
        total,
        serial_total,
    })
}

/// The outcome of one timed kernel run on one cluster.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct KernelReport {
    pub format: Option<FloatFormat>,
    /// End-to-end cluster cycles including double-buffered DMA.
    pub cycles: u64,
    /// Compute-only cluster cycles (max over workers).
    pub compute_cycles: u64,
    pub flops: u64,
    pub comparisons: u64,
    pub fpu_util: f64,
    pub comp_util: f64,
    pub chip_gflops: f64,
    pub chip_gcomps: f64,
    pub dma_bytes: u64,
    pub dma_cycles: u64,
    pub overlap_total_cycles: u64,
    pub serial_total_cycles: u64,
    /// Bank-conflict stalls actually charged across all workers.
    pub stall_cycles: u64,
}

impl KernelReport {
    /// Assemble a report from cluster stats and the DMA schedule.
    /// `compute_cycles` is the sum of per-tile cluster cycles (barriers
    /// included), which the overlap schedule's compute phases add up to.
    pub fn from_run(
        format: FloatFormat,
        stats: &ClusterStats,
        compute_cycles: u64,
        overlap: OverlapReport,
        dma_bytes: u64,
        dma_cycles: u64,
        cfg: &ClusterConfig,
    ) -> KernelReport {
        let cycles = overlap.total.max(compute_cycles);
        let flops = stats.flops();
        let comparisons = stats.comparisons();
        let denom = cfg.n_workers as f64 * cycles as f64;
        let fpu_util = if cycles == 0 {
            0.0
        } else {
            flops as f64 / (2.0 * format.lanes() as f64 * denom)
        };
        let comp_util = if cycles == 0 {
            0.0
        } else {
            comparisons as f64 / denom
        };
        let stall_cycles = stats.per_worker.iter().map(|w| w.stall_slots).sum();
        let mut rep = KernelReport {
            format: Some(format),
            cycles,
            compute_cycles,
            flops,
            comparisons,
            fpu_util,
            comp_util,
            dma_bytes,
            dma_cycles,
            overlap_total_cycles: overlap.total,
            serial_total_cycles: overlap.serial_total,
            stall_cycles,
            ..KernelReport::default()
        };
        rep.fill_chip_figures(cfg);
        rep
    }

    fn fill_chip_figures(&mut self, cfg: &ClusterConfig) {
        if let Some(fmt) = self.format {
            self.chip_gflops = self.fpu_util * cfg.peak_chip_flops(fmt) / 1e9;
        }
        self.chip_gcomps = self.comp_util * cfg.peak_chip_comps() / 1e9;
    }
}

/// Scale a per-cluster report to chip level: utilization carries over
/// to all clusters running the same data-parallel tile pattern, so the
/// chip throughput is utilization times the chip peak. The per-cluster
/// run must already account for the chip-level DMA fair share via
/// `active_clusters`.
pub fn scale_to_chip(report: &KernelReport, cfg: &ClusterConfig) -> KernelReport {
    let mut chip = report.clone();
    chip.fill_chip_figures(cfg);
    chip
}

#[cfg(test)]
mod tests {
    use super::*;
    use FloatFormat::*;

    #[test]
    fn default_topology_matches_part() {
        let cfg = ClusterConfig::default();
        assert_eq!(cfg.total_clusters(), 48);
        assert_eq!(cfg.total_workers(), 384);
        assert_eq!(cfg.total_cores(), 432);
        assert_eq!(cfg.peak_chip_flops(Fp64), 768e9);
        assert_eq!(cfg.peak_chip_flops(Fp32), 1536e9);
        assert_eq!(cfg.peak_chip_flops(Fp16), 3072e9);
        assert_eq!(cfg.peak_chip_flops(Fp8), 6144e9);
    }

    #[test]
    fn config_overrides() {
        let mut cfg = ClusterConfig::default();
        cfg.apply_document("spm_banks = 16\nfreq_hz=0.8e9 # boost off\n\n")
            .unwrap();
        assert_eq!(cfg.spm_banks, 16);
        assert_eq!(cfg.freq_hz, 0.8e9);
        assert!(matches!(
            cfg.apply_override("nope", "1"),
            Err(MachineError::UnknownConfigKey(_))
        ));
        assert!(cfg.apply_override("spm_banks", "x").is_err());
    }

    #[test]
    fn back_to_back_fma_loop_is_full_utilization() {
        let n = 1000;
        let stats = simulate_worker(&[TraceItem::Loop {
            body: vec![SlotKind::FpuFma(Fp64)],
            iters: n,
        }])
        .unwrap();
        assert_eq!(stats.cycles, n);
        assert_eq!(stats.fpu_util(Fp64), 1.0);
    }

    #[test]
    fn baseline_sparse_dot_slot_structure() {
        // the plain-ISA inner loop: index load, address add, value
        // load, dense operand load, FMA -> 5 cycles per element
        let n = 64;
        let body = vec![
            TraceItem::Slot(SlotKind::Load),
            TraceItem::Slot(SlotKind::IntOp),
            TraceItem::Slot(SlotKind::Load),
            TraceItem::Slot(SlotKind::Load),
            TraceItem::Slot(SlotKind::FpuFma(Fp64)),
        ];
        let items: Vec<TraceItem> = (0..n).flat_map(|_| body.clone()).collect();
        let stats = simulate_worker(&items).unwrap();
        assert_eq!(stats.cycles, 5 * n);
        assert!((stats.fpu_util(Fp64) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_trace_is_zero_cycles() {
        let stats = simulate_worker(&[]).unwrap();
        assert_eq!(stats.cycles, 0);
    }

    #[test]
    fn loop_body_restrictions() {
        let bad = simulate_worker(&[TraceItem::Loop {
            body: vec![SlotKind::FpuFma(Fp64), SlotKind::Load],
            iters: 2,
        }]);
        assert!(matches!(bad, Err(MachineError::BadLoopBody(SlotKind::Load))));
        assert!(matches!(
            simulate_worker(&[TraceItem::Loop {
                body: vec![],
                iters: 1
            }]),
            Err(MachineError::EmptyLoopBody)
        ));
        // comparisons are SU-driven and allowed under the loop buffer
        let ok = simulate_worker(&[TraceItem::Loop {
            body: vec![SlotKind::Comparison],
            iters: 7,
        }])
        .unwrap();
        assert_eq!(ok.comparison_slots, 7);
    }

    #[test]
    fn stalls_never_increase_util() {
        let base = simulate_worker(&[TraceItem::Loop {
            body: vec![SlotKind::FpuFma(Fp64)],
            iters: 100,
        }])
        .unwrap();
        let mut with_stalls = base;
        with_stalls.add_stalls(25);
        assert!(with_stalls.fpu_util(Fp64) < base.fpu_util(Fp64));
    }

    #[test]
    fn contention_examples() {
        let cfg = ClusterConfig::default();
        // 8 workers reading 8 consecutive words: distinct banks
        let seq: Vec<u32> = (0..8).map(|i| i * 8).collect();
        assert_eq!(spm_contention(&seq, &cfg), 0);
        // all on one address: one bank serves serially
        assert_eq!(spm_contention(&[64; 8], &cfg), 7);
        // strided pattern hitting 2 banks from 8 workers
        let two: Vec<u32> = (0..8).map(|i| (i % 2) * 8).collect();
        assert_eq!(spm_contention(&two, &cfg), 6);
    }

    #[test]
    fn lockstep_engine_charges_conflicts() {
        let cfg = ClusterConfig::default();
        let mut eng = LockstepEngine::new(&cfg);
        // all eight workers read the same address in the same cycle:
        // one is served, the seven excess accesses stall their workers
        // one cycle each (the spm_contention accounting, distributed)
        let chunk: Vec<Vec<Step>> = (0..8)
            .map(|_| vec![Step::with_addrs(SlotKind::Load, &[64])])
            .collect();
        eng.run_chunk(chunk);
        let cycles = eng.sync();
        assert_eq!(cycles, 2); // losers retire one cycle late
        let stats = eng.finish();
        let stalls: u64 = stats.per_worker.iter().map(|w| w.stall_slots).sum();
        assert_eq!(stalls, 7);
    }

    #[test]
    fn lockstep_engine_conflict_free_runs_at_one_slot_per_cycle() {
        let cfg = ClusterConfig::default();
        let mut eng = LockstepEngine::new(&cfg);
        let chunk: Vec<Vec<Step>> = (0..8u32)
            .map(|w| vec![Step::with_addrs(SlotKind::Load, &[w * 8]); 10])
            .collect();
        eng.run_chunk(chunk);
        assert_eq!(eng.sync(), 10);
    }

    #[test]
    fn dma_examples() {
        let cfg = ClusterConfig::default();
        let req = DmaRequest::d1(65536, MemSide::Hbm, MemSide::Spm);
        // sole active cluster: full 64 B/cycle port
        assert_eq!(dma_cycles(&req, &cfg).unwrap(), 65536 / 64 + 100);
        // four active clusters share the group bandwidth: 16 B/cycle
        let mut shared = cfg.clone();
        shared.active_clusters = 4;
        assert_eq!(dma_cycles(&req, &shared).unwrap(), 65536 / 16 + 100);
        // a one-row 2D request equals a 1D request of the same size
        let d2 = DmaRequest {
            kind: DmaKind::D2,
            rows: 1,
            row_bytes: 65536,
            src: MemSide::Hbm,
            dst: MemSide::Spm,
        };
        assert_eq!(
            dma_cycles(&d2, &cfg).unwrap(),
            dma_cycles(&req, &cfg).unwrap()
        );
        assert!(matches!(
            dma_cycles(&DmaRequest::d1(0, MemSide::Hbm, MemSide::Spm), &cfg),
            Err(MachineError::EmptyDma)
        ));
    }

    #[test]
    fn dma_short_rows_pay_per_row_startup() {
        let cfg = ClusterConfig::default();
        let req = DmaRequest {
            kind: DmaKind::D2,
            rows: 4,
            row_bytes: 32,
            src: MemSide::Hbm,
            dst: MemSide::Spm,
        };
        // 128 bytes at 64 B/cycle = 2 cycles, plus 4 startups
        assert_eq!(dma_cycles(&req, &cfg).unwrap(), 2 + 4 * 100);
        let wide = DmaRequest {
            kind: DmaKind::D2,
            rows: 4,
            row_bytes: 128,
            src: MemSide::Hbm,
            dst: MemSide::Spm,
        };
        assert_eq!(dma_cycles(&wide, &cfg).unwrap(), 8 + 100);
    }

    #[test]
    fn dma_is_monotone() {
        let cfg = ClusterConfig::default();
        let mut prev = 0;
        for bytes in [64, 128, 4096, 65536, 1 << 20] {
            let c = dma_cycles(&DmaRequest::d1(bytes, MemSide::Hbm, MemSide::Spm), &cfg).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        let mut prev = 0;
        for active in 1..=4 {
            let mut c = cfg.clone();
            c.active_clusters = active;
            let cyc = dma_cycles(&DmaRequest::d1(65536, MemSide::Hbm, MemSide::Spm), &c).unwrap();
            assert!(cyc >= prev);
            prev = cyc;
        }
    }

    #[test]
    fn overlap_examples() {
        let mk = |compute, dma_in, dma_out| TilePhases {
            compute,
            dma_in,
            dma_out,
        };
        // compute-bound: fills hide behind compute
        let r = overlap_schedule(&[mk(1000, 600, 0); 4]).unwrap();
        assert_eq!(r.total, 600 + 4 * 1000);
        // one tile: strictly serial
        let r = overlap_schedule(&[mk(700, 200, 300)]).unwrap();
        assert_eq!(r.total, 1200);
        assert_eq!(r.total, r.serial_total);
        // dma-bound
        let r = overlap_schedule(&[mk(300, 600, 0); 4]).unwrap();
        assert_eq!(r.total, 600 + 3 * 600 + 300);
        assert!(overlap_schedule(&[]).is_err());
    }

    #[test]
    fn overlap_never_exceeds_serial() {
        let tiles = [
            TilePhases {
                compute: 500,
                dma_in: 300,
                dma_out: 200,
            },
            TilePhases {
                compute: 100,
                dma_in: 900,
                dma_out: 50,
            },
            TilePhases {
                compute: 800,
                dma_in: 10,
                dma_out: 700,
            },
        ];
        let r = overlap_schedule(&tiles).unwrap();
        assert!(r.total <= r.serial_total);
        assert!(r.total < r.serial_total); // all phases nonzero, >1 tile
    }

    #[test]
    fn chip_scaling_examples() {
        let cfg = ClusterConfig::default();
        let mut rep = KernelReport {
            format: Some(Fp64),
            fpu_util: 1.0,
            comp_util: 0.49,
            ..KernelReport::default()
        };
        rep = scale_to_chip(&rep, &cfg);
        assert!((rep.chip_gflops - 768.0).abs() < 1e-9);
        assert!((rep.chip_gcomps - 188.16).abs() < 1e-9);
        // one cluster at half utilization: 8 workers x 2 flops x 0.5
        let one = ClusterConfig {
            n_clusters_per_group: 1,
            n_groups_per_chiplet: 1,
            n_chiplets: 1,
            ..ClusterConfig::default()
        };
        let rep = scale_to_chip(
            &KernelReport {
                format: Some(Fp64),
                fpu_util: 0.5,
                ..KernelReport::default()
            },
            &one,
        );
        assert!((rep.chip_gflops - 8.0).abs() < 1e-9);
    }
}
