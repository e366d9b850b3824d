//! The sparse-dense dot product microkernel whose two issue traces
//! calibrate the baseline-vs-SU model: one worker, one sparse vector
//! against one dense vector resident in the SPM.

use super::{idx_per_word, KernelError, Variant};
use crate::data::DenseTensor;
use crate::machine::{
    dma_cycles, overlap_schedule, ClusterConfig, DmaRequest, KernelReport, LockstepEngine,
    MemSide, SlotKind, Step, TilePhases,
};
use crate::minifloat::{self, Bits, FloatFormat};
use crate::spm::{Spm, SpmAlloc};

pub struct SparseDotRun {
    pub value: Bits,
    pub report: KernelReport,
}

pub fn sparse_dot(
    idx: &[u32],
    vals: &[f64],
    b: &DenseTensor,
    variant: Variant,
    cfg: &ClusterConfig,
) -> Result<SparseDotRun, KernelError> {
    if idx.len() != vals.len() {
        return Err(KernelError::Plan("index/value length mismatch".into()));
    }
    if b.dims.len() != 1 {
        return Err(KernelError::Plan("dense operand must be 1D".into()));
    }
    if b.format != FloatFormat::Fp64 {
        return Err(KernelError::Plan("sparse_dot runs FP64 only".into()));
    }
    let n = b.dims[0];
    for w in idx.windows(2) {
        if w[1] <= w[0] {
            return Err(KernelError::Plan("indices must be strictly increasing".into()));
        }
    }
    if let Some(&last) = idx.last() {
        if last as usize >= n {
            return Err(KernelError::Plan(format!(
                "index {last} out of range for dense length {n}"
            )));
        }
    }
    let fmt = FloatFormat::Fp64;
    let nnz = idx.len();
    let iwb = 4u32;
    let ipw = idx_per_word(iwb);

    let mut spm = Spm::new(cfg.spm_bytes);
    let mut alloc = SpmAlloc::new(cfg.spm_bytes);
    let b_base = alloc.alloc((n * 8) as u32)?;
    let aval_base = alloc.alloc((nnz * 8).max(8) as u32)?;
    let aidx_base = alloc.alloc((nnz as u32 * iwb).max(8))?;
    for (k, &v) in b.raw.iter().enumerate() {
        spm.write_u64(b_base + (k * 8) as u32, v)?;
    }
    let val_bits: Vec<Bits> = vals.iter().map(|&v| minifloat::encode(fmt, v)).collect();
    for (k, vb) in val_bits.iter().enumerate() {
        spm.write_u64(aval_base + (k * 8) as u32, vb.raw())?;
        spm.write_u32(aidx_base + k as u32 * iwb, idx[k])?;
    }

    let mut engine = LockstepEngine::new(cfg);
    let mut steps: Vec<Vec<Step>> = vec![Vec::new(); cfg.n_workers as usize];
    let ws = &mut steps[0];
    let mut acc = Bits::zero(fmt);
    match variant {
        Variant::Su => {
            for _ in 0..12 {
                ws.push(Step::new(SlotKind::SuConfig));
            }
            ws.push(Step::new(SlotKind::IntOp));
            ws.push(Step::new(SlotKind::IntOp));
        }
        Variant::Baseline => {
            for _ in 0..4 {
                ws.push(Step::new(SlotKind::IntOp));
            }
        }
    }
    for k in 0..nnz {
        let aval_addr = aval_base + (k * 8) as u32;
        let idx_addr = aidx_base + (k / ipw * 8) as u32;
        let gather = b_base + (idx[k] as usize * 8) as u32;
        let bval = Bits::new(fmt, spm.read_u64(gather)?).unwrap();
        acc = minifloat::fma(fmt, val_bits[k], bval, acc);
        match variant {
            Variant::Su => {
                let addrs = if k % ipw == 0 {
                    vec![aval_addr, gather, idx_addr]
                } else {
                    vec![aval_addr, gather]
                };
                ws.push(Step::with_addrs(SlotKind::FpuFma(fmt), &addrs));
            }
            Variant::Baseline => {
                ws.push(Step::with_addrs(SlotKind::Load, &[idx_addr]));
                ws.push(Step::new(SlotKind::Stall));
                ws.push(Step::new(SlotKind::IntOp)); // shift
                ws.push(Step::new(SlotKind::IntOp)); // add
                ws.push(Step::with_addrs(SlotKind::Load, &[gather]));
                ws.push(Step::with_addrs(SlotKind::Load, &[aval_addr]));
                ws.push(Step::new(SlotKind::Stall));
                ws.push(Step::new(SlotKind::FpuFma(fmt)));
            }
        }
    }
    ws.push(Step::new(SlotKind::IntOp)); // retire the accumulator

    engine.run_chunk(steps);
    let compute = engine.sync();
    let in_bytes = (n * 8 + nnz * (8 + iwb as usize)) as u64;
    let dma_in = dma_cycles(&DmaRequest::d1(in_bytes, MemSide::Hbm, MemSide::Spm), cfg)?;
    let dma_out = dma_cycles(&DmaRequest::d1(8, MemSide::Spm, MemSide::Hbm), cfg)?;
    let overlap = overlap_schedule(&[TilePhases {
        compute,
        dma_in,
        dma_out,
    }])?;
    let stats = engine.finish();
    let report = KernelReport::from_run(
        fmt,
        &stats,
        compute,
        overlap,
        in_bytes + 8,
        dma_in + dma_out,
        cfg,
    );
    Ok(SparseDotRun { value: acc, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_random_dense;
    use crate::kernels::golden_sparse_dot;

    fn cfg() -> ClusterConfig {
        ClusterConfig::default()
    }

    fn dense(n: usize, seed: u64) -> DenseTensor {
        let d = gen_random_dense(n, 1, seed);
        DenseTensor {
            dims: vec![n],
            ..d
        }
    }

    #[test]
    fn empty_sparse_vector_is_zero() {
        let b = dense(32, 1);
        let run = sparse_dot(&[], &[], &b, Variant::Su, &cfg()).unwrap();
        assert_eq!(run.value.to_f64(), 0.0);
    }

    #[test]
    fn unit_basis_selects_element() {
        let b = dense(32, 2);
        let run = sparse_dot(&[7], &[1.0], &b, Variant::Su, &cfg()).unwrap();
        assert_eq!(run.value.to_f64().to_bits(), b.get(7).to_f64().to_bits());
    }

    #[test]
    fn matches_golden_and_variants_agree() {
        let b = dense(256, 3);
        let idx: Vec<u32> = (0..64).map(|i| i * 4).collect();
        let vals: Vec<f64> = (0..64).map(|i| 0.25 + i as f64 * 0.01).collect();
        let su = sparse_dot(&idx, &vals, &b, Variant::Su, &cfg()).unwrap();
        let base = sparse_dot(&idx, &vals, &b, Variant::Baseline, &cfg()).unwrap();
        assert_eq!(su.value, base.value);
        let bf = b.to_f64s();
        let golden = golden_sparse_dot(&idx, &vals, &bf);
        assert_eq!(su.value.to_f64().to_bits(), golden.to_bits());
    }

    #[test]
    fn large_n_cycle_ratio_reflects_issue_structure() {
        let n = 8192usize;
        let b = dense(n, 4);
        let idx: Vec<u32> = (0..2048).map(|i| (i * 4) as u32).collect();
        let vals: Vec<f64> = (0..2048).map(|i| 0.5 + (i % 7) as f64 * 0.05).collect();
        let su = sparse_dot(&idx, &vals, &b, Variant::Su, &cfg()).unwrap();
        let base = sparse_dot(&idx, &vals, &b, Variant::Baseline, &cfg()).unwrap();
        let ratio = base.report.compute_cycles as f64 / su.report.compute_cycles as f64;
        // 8 baseline cycles per element (6 issue slots plus 2 load-use
        // stalls) against one streamed FMA per element
        assert!(ratio > 6.0 && ratio < 8.5, "ratio {ratio}");
    }

    #[test]
    fn out_of_range_index_errors() {
        let b = dense(16, 5);
        assert!(sparse_dot(&[16], &[1.0], &b, Variant::Su, &cfg()).is_err());
    }
}
