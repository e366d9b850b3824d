//! Sparse-sparse matrix multiply via sorted-index intersection.
//!
//! The right operand is pre-transposed (untimed, like operand staging)
//! so every output element C[i,j] is a sparse-sparse dot product of two
//! sorted index lists. The SU variant runs the two-pointer intersection
//! on the cooperating index streams at one comparison per cycle;
//! matched value pairs are multiply-accumulated by the FPU in the
//! comparator's shadow, and the third SU writes the joint column
//! indices of the result row. The baseline runs the merge in software:
//! every step pays the head reload, its load-use stall, and the flush
//! bubbles of a data-dependent branch.
//!
//! Output elements exist where the intersection is nonempty; empty
//! intersections store nothing. Only columns with any stored element in
//! the right operand are visited (the column list falls out of the
//! untimed transpose).

use super::{idx_per_word, KernelError, Variant};
use crate::data::CsrMatrix;
use crate::machine::{
    dma_cycles, overlap_schedule, ClusterConfig, DmaRequest, KernelReport, LockstepEngine,
    MemSide, SlotKind, Step, TilePhases,
};
use crate::minifloat::{self, Bits, FloatFormat};
use crate::spm::{Spm, SpmAlloc};
use crate::streams::merge_sorted_with_steps;
use crate::streams::MergeMode;

pub struct SpmSpmRun {
    pub out: CsrMatrix,
    pub report: KernelReport,
    pub row_block: usize,
}

pub fn spmspm(
    a: &CsrMatrix,
    b: &CsrMatrix,
    variant: Variant,
    cfg: &ClusterConfig,
) -> Result<SpmSpmRun, KernelError> {
    if a.cols != b.rows {
        return Err(KernelError::Plan(format!(
            "dimension mismatch: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.format != FloatFormat::Fp64 || b.format != FloatFormat::Fp64 {
        return Err(KernelError::Plan("spmspm runs FP64 only".into()));
    }
    a.validate()?;
    b.validate()?;
    let fmt = FloatFormat::Fp64;

    // CSC view of the right operand, built outside the timed region.
    let bt = b.transposed();
    let cols: Vec<u32> = (0..bt.rows).filter(|&j| !bt.row_range(j).is_empty()).collect();

    let iwb: u32 = if a.cols <= u16::MAX as u32 + 1 { 2 } else { 4 };
    let ipw = idx_per_word(iwb);

    let m = a.rows as usize;
    let n_workers = cfg.n_workers as usize;

    // Per-row output upper bound: every element of the A row can match
    // at most the population of its B row, capped by the column count.
    let row_bound = |i: u32| -> usize {
        let s: usize = a.row_range(i)
            .map(|k| b.row_range(a.col_idx[k]).len())
            .sum();
        s.min(cols.len())
    };

    let bt_idx_bytes = (bt.nnz() as u32) * iwb;
    let bt_val_bytes = (bt.nnz() * 8) as u32;
    let mut mb = 128.min(m).max(1);
    let (a_val_bytes, a_idx_bytes, c_blk_bytes) = loop {
        let mut worst_nnz = 0usize;
        let mut worst_c = 0usize;
        for i0 in (0..m).step_by(mb) {
            let i1 = (i0 + mb).min(m);
            let nnz = (a.row_ptr[i1] - a.row_ptr[i0]) as usize;
            let bound: usize = (i0..i1).map(|i| row_bound(i as u32)).sum();
            worst_nnz = worst_nnz.max(nnz);
            worst_c = worst_c.max(bound * (8 + iwb as usize));
        }
        let total = bt_idx_bytes as usize
            + bt_val_bytes as usize
            + 2 * (worst_nnz * (8 + iwb as usize) + worst_c)
            + (b.cols as usize + 1) * 4;
        if total <= cfg.spm_bytes as usize {
            break (
                (worst_nnz * 8) as u32,
                worst_nnz as u32 * iwb,
                worst_c as u32,
            );
        }
        if mb == 1 {
            return Err(KernelError::Plan(format!(
                "spmspm operands need {total} bytes of SPM, have {}",
                cfg.spm_bytes
            )));
        }
        mb = (mb / 2).max(1);
    };

    let mut spm = Spm::new(cfg.spm_bytes);
    let mut alloc = SpmAlloc::new(cfg.spm_bytes);
    let btidx_base = alloc.alloc(bt_idx_bytes.max(8))?;
    let btval_base = alloc.alloc(bt_val_bytes.max(8))?;
    let aval_base = [alloc.alloc(a_val_bytes.max(8))?, alloc.alloc(a_val_bytes.max(8))?];
    let aidx_base = [alloc.alloc(a_idx_bytes.max(8))?, alloc.alloc(a_idx_bytes.max(8))?];
    let c_base = [alloc.alloc(c_blk_bytes.max(8))?, alloc.alloc(c_blk_bytes.max(8))?];

    // stage the resident CSC operand
    for k in 0..bt.nnz() {
        let ia = btidx_base + k as u32 * iwb;
        if iwb == 2 {
            spm.write_u16(ia, bt.col_idx[k] as u16)?;
        } else {
            spm.write_u32(ia, bt.col_idx[k])?;
        }
        spm.write_u64(btval_base + (k * 8) as u32, bt.values[k])?;
    }

    let mut engine = LockstepEngine::new(cfg);
    let mut out_row_ptr = vec![0u32];
    let mut out_col_idx: Vec<u32> = Vec::new();
    let mut out_values: Vec<u64> = Vec::new();
    let mut tiles = Vec::new();
    let mut dma_bytes = 0u64;
    let mut dma_total_cycles = 0u64;
    let mut total_comparisons = 0u64;
    let mut total_matches = 0u64;
    let mut extra_flops = vec![0u64; n_workers];

    for (tile_no, i0) in (0..m).step_by(mb).enumerate() {
        let i1 = (i0 + mb).min(m);
        let buf = tile_no % 2;
        let blk_start = a.row_ptr[i0] as usize;
        let blk_nnz = a.row_ptr[i1] as usize - blk_start;

        for (kb, kk) in (blk_start..blk_start + blk_nnz).enumerate() {
            let ia = aidx_base[buf] + kb as u32 * iwb;
            if iwb == 2 {
                spm.write_u16(ia, a.col_idx[kk] as u16)?;
            } else {
                spm.write_u32(ia, a.col_idx[kk])?;
            }
            spm.write_u64(aval_base[buf] + (kb * 8) as u32, a.values[kk])?;
        }

        let mut steps: Vec<Vec<Step>> = vec![Vec::new(); n_workers];
        let mut configured = vec![false; n_workers];
        let mut c_emit = 0u32; // bytes into the C block
        let mut rows_out: Vec<Vec<(u32, u64)>> = vec![Vec::new(); i1 - i0];

        for i in i0..i1 {
            let wk = i % n_workers;
            let ws = &mut steps[wk];
            let arange = a.row_range(i as u32);
            if arange.is_empty() {
                ws.push(Step::new(SlotKind::IntOp));
                ws.push(Step::new(SlotKind::IntOp));
                continue;
            }
            if !configured[wk] {
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
                configured[wk] = true;
            }
            // repoint the left (A row) index/value streams
            let row_slots = if variant == Variant::Su { 4 } else { 2 };
            for _ in 0..row_slots {
                ws.push(Step::new(SlotKind::IntOp));
            }

            let a_idx_row = &a.col_idx[arange.clone()];
            let a_off = arange.start - blk_start;

            for &j in &cols {
                let brange = bt.row_range(j);
                let b_idx_row = &bt.col_idx[brange.clone()];
                let (merged, msteps) =
                    merge_sorted_with_steps(a_idx_row, b_idx_row, MergeMode::Intersect)?;
                total_comparisons += merged.comparisons;

                match variant {
                    Variant::Su => {
                        for _ in 0..4 {
                            ws.push(Step::new(SlotKind::IntOp));
                        }
                        let mut last_lw = usize::MAX;
                        let mut last_rw = usize::MAX;
                        for s in &msteps {
                            let mut addrs = [0u32; 3];
                            let mut na = 0;
                            if s.matched() {
                                addrs[na] = aval_base[buf]
                                    + ((a_off + s.left_pos as usize) * 8) as u32;
                                na += 1;
                                addrs[na] = btval_base
                                    + ((brange.start + s.right_pos as usize) * 8) as u32;
                                na += 1;
                            }
                            let lw = (a_off + s.left_pos as usize) / ipw;
                            if lw != last_lw && na < 3 {
                                last_lw = lw;
                                addrs[na] = aidx_base[buf] + (lw * 8) as u32;
                                na += 1;
                            }
                            let rw = (brange.start + s.right_pos as usize) / ipw;
                            if rw != last_rw && na < 3 {
                                last_rw = rw;
                                addrs[na] = btidx_base + (rw * 8) as u32;
                                na += 1;
                            }
                            ws.push(Step::with_addrs(SlotKind::Comparison, &addrs[..na]));
                        }
                    }
                    Variant::Baseline => {
                        // pointer init and first head loads
                        ws.push(Step::new(SlotKind::IntOp));
                        ws.push(Step::new(SlotKind::IntOp));
                        ws.push(Step::with_addrs(
                            SlotKind::Load,
                            &[aidx_base[buf] + (a_off / ipw * 8) as u32],
                        ));
                        ws.push(Step::with_addrs(
                            SlotKind::Load,
                            &[btidx_base + (brange.start / ipw * 8) as u32],
                        ));
                        ws.push(Step::new(SlotKind::Stall));
                        for s in &msteps {
                            ws.push(Step::new(SlotKind::IntOp)); // compare-branch
                            ws.push(Step::new(SlotKind::Stall)); // flush
                            ws.push(Step::new(SlotKind::Stall)); // flush
                            let next = if s.advance_left {
                                aidx_base[buf] + ((a_off + s.left_pos as usize + 1) / ipw * 8) as u32
                            } else {
                                btidx_base
                                    + ((brange.start + s.right_pos as usize + 1) / ipw * 8) as u32
                            };
                            ws.push(Step::with_addrs(SlotKind::Load, &[next]));
                            ws.push(Step::new(SlotKind::Stall)); // load-use
                            ws.push(Step::new(SlotKind::IntOp)); // bump
                            if s.matched() {
                                ws.push(Step::with_addrs(
                                    SlotKind::Load,
                                    &[aval_base[buf] + ((a_off + s.left_pos as usize) * 8) as u32],
                                ));
                                ws.push(Step::with_addrs(
                                    SlotKind::Load,
                                    &[btval_base
                                        + ((brange.start + s.right_pos as usize) * 8) as u32],
                                ));
                                ws.push(Step::new(SlotKind::Stall));
                                ws.push(Step::new(SlotKind::FpuFma(fmt)));
                            }
                        }
                    }
                }

                if !merged.entries.is_empty() {
                    // accumulate matched pairs in index order
                    let mut acc = Bits::zero(fmt);
                    for e in &merged.entries {
                        let av = a.value_bits(arange.start + e.left_pos.unwrap() as usize);
                        let bv = bt.value_bits(brange.start + e.right_pos.unwrap() as usize);
                        acc = minifloat::fma(fmt, av, bv, acc);
                    }
                    total_matches += merged.entries.len() as u64;
                    if variant == Variant::Su {
                        extra_flops[wk] += 2 * merged.entries.len() as u64;
                    }
                    // third SU (or the store path) writes the joint
                    // column index and the value
                    let c_addr = c_base[buf] + c_emit;
                    if iwb == 2 {
                        spm.write_u16(c_addr, j as u16)?;
                    } else {
                        spm.write_u32(c_addr, j)?;
                    }
                    spm.write_u64(c_addr + iwb, acc.raw())?;
                    c_emit += iwb + 8;
                    if variant == Variant::Baseline {
                        ws.push(Step::with_addrs(SlotKind::Store, &[c_addr]));
                        ws.push(Step::new(SlotKind::Store));
                        ws.push(Step::new(SlotKind::IntOp));
                    }
                    rows_out[i - i0].push((j, acc.raw()));
                }
            }
        }

        engine.run_chunk(steps);
        let compute = engine.sync();

        for r in &rows_out {
            for &(j, v) in r {
                out_col_idx.push(j);
                out_values.push(v);
            }
            out_row_ptr.push(out_col_idx.len() as u32);
        }

        let mut in_bytes = (blk_nnz * (8 + iwb as usize)) as u64;
        if tile_no == 0 {
            in_bytes += (bt.nnz() * (8 + iwb as usize) + (b.cols as usize + 1) * 4) as u64;
        }
        let out_bytes = c_emit.max(8) as u64;
        let dma_in = dma_cycles(&DmaRequest::d1(in_bytes, MemSide::Hbm, MemSide::Spm), cfg)?;
        let dma_out = dma_cycles(&DmaRequest::d1(out_bytes, MemSide::Spm, MemSide::Hbm), cfg)?;
        dma_bytes += in_bytes + out_bytes;
        dma_total_cycles += dma_in + dma_out;
        tiles.push(TilePhases {
            compute,
            dma_in,
            dma_out,
        });
    }

    let compute_cycles: u64 = tiles.iter().map(|t| t.compute).sum();
    let overlap = overlap_schedule(&tiles)?;
    let mut stats = engine.finish();
    for (w, extra) in extra_flops.iter().enumerate() {
        stats.per_worker[w].flops += extra;
    }
    debug_assert_eq!(stats.comparisons(), if variant == Variant::Su { total_comparisons } else { 0 });
    debug_assert_eq!(stats.flops(), 2 * total_matches);
    let mut report = KernelReport::from_run(
        fmt,
        &stats,
        compute_cycles,
        overlap,
        dma_bytes,
        dma_total_cycles,
        cfg,
    );
    if variant == Variant::Baseline {
        // the software merge performs the same index comparisons, one
        // per merge step, on the integer core
        report.comparisons = total_comparisons;
    }

    let out = CsrMatrix {
        rows: a.rows,
        cols: b.cols,
        row_ptr: out_row_ptr,
        col_idx: out_col_idx,
        index_width: crate::streams::IndexWidth::W32,
        format: fmt,
        values: out_values,
    };
    out.validate()?;
    Ok(SpmSpmRun {
        out,
        report,
        row_block: mb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_random_sparse;
    use crate::kernels::golden_spmspm;

    fn cfg() -> ClusterConfig {
        ClusterConfig::default()
    }

    #[test]
    fn identity_right_returns_a() {
        let a = gen_random_sparse(24, 24, 0.15, 3).unwrap();
        let b = CsrMatrix::identity(24, FloatFormat::Fp64);
        let run = spmspm(&a, &b, Variant::Su, &cfg()).unwrap();
        assert_eq!(run.out.row_ptr, a.row_ptr);
        assert_eq!(run.out.col_idx, a.col_idx);
        assert_eq!(run.out.values, a.values);
    }

    #[test]
    fn disjoint_sparsity_yields_empty_output_with_comparisons() {
        // A only touches even k, B rows only exist for odd k
        let a = CsrMatrix {
            rows: 4,
            cols: 8,
            row_ptr: vec![0, 2, 4, 6, 8],
            col_idx: vec![0, 2, 4, 6, 0, 2, 4, 6],
            index_width: crate::streams::IndexWidth::W32,
            format: FloatFormat::Fp64,
            values: vec![minifloat::encode(FloatFormat::Fp64, 1.5).raw(); 8],
        };
        let b = CsrMatrix {
            rows: 8,
            cols: 4,
            row_ptr: vec![0, 0, 1, 1, 2, 2, 3, 3, 4],
            col_idx: vec![0, 1, 2, 3],
            index_width: crate::streams::IndexWidth::W32,
            format: FloatFormat::Fp64,
            values: vec![minifloat::encode(FloatFormat::Fp64, 2.0).raw(); 4],
        };
        let run = spmspm(&a, &b, Variant::Su, &cfg()).unwrap();
        assert_eq!(run.out.nnz(), 0);
        assert_eq!(run.report.flops, 0);
        assert!(run.report.comparisons > 0);
    }

    #[test]
    fn matches_dense_oracle() {
        let a = gen_random_sparse(64, 64, 0.1, 21).unwrap();
        let b = gen_random_sparse(64, 64, 0.01, 22).unwrap();
        for variant in [Variant::Baseline, Variant::Su] {
            let run = spmspm(&a, &b, variant, &cfg()).unwrap();
            // no cancellation to exact zero occurs with these operands
            assert!(run.out.values.iter().all(|&v| v != 0));
            let golden = golden_spmspm(&a, &b);
            let got: Vec<(u32, u32, f64)> = run
                .out
                .to_coo()
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, v))
                .collect();
            assert_eq!(got.len(), golden.len());
            for (g, w) in got.iter().zip(&golden) {
                assert_eq!((g.0, g.1), (w.0, w.1));
                assert_eq!(g.2.to_bits(), w.2.to_bits());
            }
        }
    }

    #[test]
    fn variants_bit_identical_su_no_slower() {
        let a = gen_random_sparse(48, 48, 0.12, 31).unwrap();
        let b = gen_random_sparse(48, 48, 0.02, 32).unwrap();
        let su = spmspm(&a, &b, Variant::Su, &cfg()).unwrap();
        let base = spmspm(&a, &b, Variant::Baseline, &cfg()).unwrap();
        assert_eq!(su.out, base.out);
        assert_eq!(su.report.comparisons, base.report.comparisons);
        assert!(su.report.cycles <= base.report.cycles);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = gen_random_sparse(8, 9, 0.5, 1).unwrap();
        let b = gen_random_sparse(8, 8, 0.5, 2).unwrap();
        assert!(matches!(
            spmspm(&a, &b, Variant::Su, &cfg()),
            Err(KernelError::Plan(_))
        ));
    }
}
