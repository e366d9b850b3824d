//! Peak-arithmetic microbenchmark: back-to-back independent SIMD FMAs
//! replayed from the hardware loop buffer on every worker. Utilization
//! approaches 1 as the iteration count grows; chip-scaled throughput
//! lands on the part's peak numbers per format.

use super::{KernelError, Variant};
use crate::machine::{
    overlap_schedule, ClusterConfig, KernelReport, LockstepEngine, SlotKind, Step, TilePhases,
};
use crate::minifloat::{self, FloatFormat, SimdVector};

pub struct PeakRun {
    /// Final accumulator lanes of worker 0 (a convergence checksum).
    pub checksum: Vec<f64>,
    pub report: KernelReport,
}

pub fn peak_fma(
    format: FloatFormat,
    iters: u64,
    cfg: &ClusterConfig,
) -> Result<PeakRun, KernelError> {
    if iters == 0 {
        return Err(KernelError::Plan("peak_fma needs at least one iteration".into()));
    }
    if iters > 1 << 24 {
        return Err(KernelError::Plan("peak_fma iteration count capped at 2^24".into()));
    }
    let _ = Variant::Su; // the microbenchmark only exists in SU form
    let n_workers = cfg.n_workers as usize;
    let mut engine = LockstepEngine::new(cfg);
    let mut steps: Vec<Vec<Step>> = vec![Vec::new(); n_workers];
    for ws in &mut steps {
        for _ in 0..12 {
            ws.push(Step::new(SlotKind::SuConfig));
        }
        ws.push(Step::new(SlotKind::IntOp));
        ws.push(Step::new(SlotKind::IntOp));
        for _ in 0..iters {
            ws.push(Step::new(SlotKind::FpuFma(format)));
        }
    }

    // the functional chain x <- a*x + c converges; run it for real
    let a = SimdVector::splat(format, minifloat::encode(format, 0.5));
    let c = SimdVector::splat(format, minifloat::encode(format, 0.25));
    let mut x = SimdVector::splat(format, minifloat::encode(format, 1.0));
    for _ in 0..iters.min(4096) {
        x = a.fma(&x, &c);
    }
    let checksum: Vec<f64> = x.lanes().iter().map(|b| b.to_f64()).collect();

    engine.run_chunk(steps);
    let compute = engine.sync();
    let overlap = overlap_schedule(&[TilePhases {
        compute,
        dma_in: 0,
        dma_out: 0,
    }])?;
    let stats = engine.finish();
    let report = KernelReport::from_run(format, &stats, compute, overlap, 0, 0, cfg);
    Ok(PeakRun { checksum, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utilization_approaches_one() {
        let cfg = ClusterConfig::default();
        let run = peak_fma(FloatFormat::Fp64, 4096, &cfg).unwrap();
        assert!(run.report.fpu_util > 0.995);
        assert!((run.report.chip_gflops - 768.0).abs() / 768.0 < 0.005);
        // one iteration pays the setup overhead
        let one = peak_fma(FloatFormat::Fp64, 1, &cfg).unwrap();
        assert!(one.report.fpu_util < 1.0);
    }

    #[test]
    fn narrow_formats_scale_with_lanes() {
        let cfg = ClusterConfig::default();
        let fp8 = peak_fma(FloatFormat::Fp8, 4096, &cfg).unwrap();
        assert!((fp8.report.chip_gflops - 6144.0).abs() / 6144.0 < 0.005);
        let fp16 = peak_fma(FloatFormat::Fp16, 4096, &cfg).unwrap();
        assert!((fp16.report.chip_gflops - 3072.0).abs() / 3072.0 < 0.005);
    }

    #[test]
    fn checksum_converges() {
        let cfg = ClusterConfig::default();
        let run = peak_fma(FloatFormat::Fp32, 4096, &cfg).unwrap();
        for v in run.checksum {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }
}
