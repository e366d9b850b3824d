//! Sparse-dense matrix multiply: C[i,j] = sum_k A[i,k] * B[k,j],
//! accumulated in column-index order per row.
//!
//! The dense operand is tiled over columns, the sparse operand over row
//! blocks; each (column tile, row block) pair is one double-buffered
//! SPM tile. In the SU variant one indirect stream gathers the B
//! operands through A's column indices, an affine stream supplies A's
//! values, and the third SU writes C, leaving one FMA slot per stored
//! element under the hardware loop. The baseline issues the
//! load/address/load/load/FMA element pattern of plain-ISA sparse code
//! plus its load-use stalls.
//!
//! Narrow formats run SIMD over groups of `lanes` consecutive columns;
//! the column count must divide into full lanes.

use super::{idx_per_word, odd_words, KernelError, Variant};
use crate::data::{CsrMatrix, DenseTensor};
use crate::machine::{
    dma_cycles, overlap_schedule, ClusterConfig, DmaRequest, KernelReport, LockstepEngine,
    MemSide, SlotKind, Step, TilePhases,
};
use crate::minifloat::{self, Bits};
use crate::spm::{Spm, SpmAlloc};

pub struct SpmmRun {
    pub out: DenseTensor,
    pub report: KernelReport,
    pub col_tile: usize,
    pub row_block: usize,
}

struct Plan {
    wt: usize,
    mb: usize,
    pitch_col: usize,
    pitch_row: usize,
    pitch_c: usize,
}

fn plan(a: &CsrMatrix, n: usize, cfg: &ClusterConfig) -> Result<Plan, KernelError> {
    let eb = a.format.width_bytes() as usize;
    let lanes = a.format.lanes() as usize;
    let iwb = a.index_width.bytes() as usize;
    let k = a.cols as usize;
    let mut wt = (8 * lanes).min(n);
    loop {
        let pitch_col = odd_words(k);
        let pitch_row = odd_words((wt * eb).div_ceil(8));
        let pitch_c = odd_words((wt * eb).div_ceil(8));
        let b_tile = if lanes == 1 {
            wt * pitch_col * 8
        } else {
            k * pitch_row * 8
        };
        let mut mb = 128.min(a.rows as usize).max(1);
        loop {
            let max_nnz = (0..a.rows as usize)
                .step_by(mb)
                .map(|i0| {
                    let i1 = (i0 + mb).min(a.rows as usize);
                    (a.row_ptr[i1] - a.row_ptr[i0]) as usize
                })
                .max()
                .unwrap_or(0);
            let a_block = max_nnz * (eb + iwb) + mb * 4;
            let c_block = mb * pitch_c * 8;
            if 2 * (b_tile + a_block + c_block) <= cfg.spm_bytes as usize {
                return Ok(Plan {
                    wt,
                    mb,
                    pitch_col,
                    pitch_row,
                    pitch_c,
                });
            }
            if mb <= 8 {
                break;
            }
            mb /= 2;
        }
        if wt > lanes {
            wt = (wt / 2).max(lanes);
        } else {
            return Err(KernelError::Plan(format!(
                "spmm operands do not fit the SPM even at column tile {lanes} and row block 8"
            )));
        }
    }
}

pub fn spmm(
    a: &CsrMatrix,
    b: &DenseTensor,
    variant: Variant,
    cfg: &ClusterConfig,
) -> Result<SpmmRun, KernelError> {
    if b.dims.len() != 2 {
        return Err(KernelError::Plan("dense operand must be 2D".into()));
    }
    if a.cols as usize != b.dims[0] {
        return Err(KernelError::Plan(format!(
            "dimension mismatch: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.dims[0], b.dims[1]
        )));
    }
    if a.format != b.format {
        return Err(KernelError::Plan("operand formats differ".into()));
    }
    a.validate()?;
    let fmt = a.format;
    let eb = fmt.width_bytes() as usize;
    let lanes = fmt.lanes() as usize;
    let n = b.dims[1];
    if n % lanes != 0 {
        return Err(KernelError::Plan(format!(
            "column count {n} is not a multiple of the {lanes} SIMD lanes of {fmt}"
        )));
    }
    let p = plan(a, n, cfg)?;
    let iwb = a.index_width.bytes();
    let ipw = idx_per_word(iwb);
    let lane_mask = if eb == 8 { u64::MAX } else { (1u64 << (eb * 8)) - 1 };

    let m = a.rows as usize;
    let mut out = DenseTensor::zeros(fmt, &[m, n]);
    let mut engine = LockstepEngine::new(cfg);
    let n_workers = cfg.n_workers as usize;

    let mut spm = Spm::new(cfg.spm_bytes);
    let mut alloc = SpmAlloc::new(cfg.spm_bytes);
    let b_tile_bytes = if lanes == 1 {
        p.wt * p.pitch_col * 8
    } else {
        a.cols as usize * p.pitch_row * 8
    } as u32;
    let max_blk_nnz = (0..m)
        .step_by(p.mb)
        .map(|i0| {
            let i1 = (i0 + p.mb).min(m);
            (a.row_ptr[i1] - a.row_ptr[i0]) as usize
        })
        .max()
        .unwrap_or(0);
    let b_base = [alloc.alloc(b_tile_bytes)?, alloc.alloc(b_tile_bytes)?];
    let aval_base = [
        alloc.alloc((max_blk_nnz * eb) as u32)?,
        alloc.alloc((max_blk_nnz * eb) as u32)?,
    ];
    let aidx_base = [
        alloc.alloc(max_blk_nnz as u32 * iwb)?,
        alloc.alloc(max_blk_nnz as u32 * iwb)?,
    ];
    let c_base = [
        alloc.alloc((p.mb * p.pitch_c * 8) as u32)?,
        alloc.alloc((p.mb * p.pitch_c * 8) as u32)?,
    ];

    let bv = &b.raw;
    let mut tiles = Vec::new();
    let mut dma_bytes = 0u64;
    let mut dma_total_cycles = 0u64;
    let mut tile_no = 0usize;

    for j0 in (0..n).step_by(p.wt) {
        let wt = p.wt.min(n - j0);
        for i0 in (0..m).step_by(p.mb) {
            let mb = p.mb.min(m - i0);
            let buf = tile_no % 2;
            tile_no += 1;
            let blk_start = a.row_ptr[i0] as usize;
            let blk_nnz = a.row_ptr[i0 + mb] as usize - blk_start;

            // stage the B column tile
            if lanes == 1 {
                for jj in 0..wt {
                    for k in 0..a.cols as usize {
                        let addr = b_base[buf] + ((jj * p.pitch_col + k) * 8) as u32;
                        spm.write_u64(addr, bv[k * n + j0 + jj])?;
                    }
                }
            } else {
                for k in 0..a.cols as usize {
                    for jj in 0..wt {
                        let byte = b_base[buf] + (k * p.pitch_row * 8 + jj * eb) as u32;
                        spm.write_elem(byte, eb as u8, bv[k * n + j0 + jj] & lane_mask)?;
                    }
                }
            }
            // stage the A block (values + indices)
            for (kb, kk) in (blk_start..blk_start + blk_nnz).enumerate() {
                spm.write_elem(
                    aval_base[buf] + (kb * eb) as u32,
                    eb as u8,
                    a.values[kk] & lane_mask,
                )?;
                let ia = aidx_base[buf] + kb as u32 * iwb;
                match iwb {
                    1 => spm.write_u8(ia, a.col_idx[kk] as u8)?,
                    2 => spm.write_u16(ia, a.col_idx[kk] as u16)?,
                    _ => spm.write_u32(ia, a.col_idx[kk])?,
                }
            }

            let mut steps: Vec<Vec<Step>> = vec![Vec::new(); n_workers];
            let mut configured = vec![false; n_workers];
            for i in i0..i0 + mb {
                let wk = i % n_workers;
                let ws = &mut steps[wk];
                let row = a.row_range(i as u32);
                if row.is_empty() {
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
                let il = i - i0;
                for g in 0..wt / lanes {
                    // per output group: repoint the gather base, reset
                    // the accumulator, retire the result, loop control
                    match variant {
                        Variant::Su => {
                            for _ in 0..5 {
                                ws.push(Step::new(SlotKind::IntOp));
                            }
                        }
                        Variant::Baseline => {
                            ws.push(Step::new(SlotKind::IntOp));
                        }
                    }
                    let mut acc = vec![Bits::zero(fmt); lanes];
                    let c_addr = c_base[buf] + (il * p.pitch_c * 8 + g * 8) as u32;
                    let row_len = row.len();
                    for (e, kk) in row.clone().enumerate() {
                        let kb = kk - blk_start;
                        let col = a.col_idx[kk] as usize;
                        let aval_addr = aval_base[buf] + (kb * eb) as u32;
                        let idx_addr = aidx_base[buf] + (kb / ipw * 8) as u32;
                        let gather = if lanes == 1 {
                            b_base[buf] + ((g * p.pitch_col + col) * 8) as u32
                        } else {
                            b_base[buf] + (col * p.pitch_row * 8 + g * 8) as u32
                        };

                        let a_bits = Bits::new(fmt, spm.read_elem(aval_addr, eb as u8)?).unwrap();
                        for l in 0..lanes {
                            let braw = spm.read_elem(gather + (l * eb) as u32, eb as u8)?;
                            let b_bits = Bits::new(fmt, braw).unwrap();
                            acc[l] = minifloat::fma(fmt, a_bits, b_bits, acc[l]);
                        }

                        match variant {
                            Variant::Su => {
                                let mut addrs = [0u32; 3];
                                addrs[0] = aval_addr;
                                addrs[1] = gather;
                                let mut na = 2;
                                if e % ipw == 0 {
                                    addrs[2] = idx_addr;
                                    na = 3;
                                } else if e == row_len - 1 {
                                    addrs[2] = c_addr;
                                    na = 3;
                                }
                                ws.push(Step::with_addrs(SlotKind::FpuFma(fmt), &addrs[..na]));
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
                    if variant == Variant::Baseline {
                        ws.push(Step::with_addrs(SlotKind::Store, &[c_addr]));
                        ws.push(Step::new(SlotKind::IntOp));
                        ws.push(Step::new(SlotKind::IntOp));
                    }
                    // retire the group's accumulators
                    let mut word = 0u64;
                    for l in 0..lanes {
                        word |= (acc[l].raw() & lane_mask) << (l * eb * 8);
                        out.raw[i * n + j0 + g * lanes + l] = acc[l].raw();
                    }
                    spm.write_u64(c_addr, word)?;
                }
            }

            engine.run_chunk(steps);
            let compute = engine.sync();

            let mut in_bytes = (blk_nnz * (eb + iwb as usize) + mb * 4) as u64;
            if i0 == 0 {
                in_bytes += (a.cols as usize * wt * eb) as u64;
            }
            let out_bytes = (mb * wt * eb) as u64;
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
    }

    let compute_cycles: u64 = tiles.iter().map(|t| t.compute).sum();
    let overlap = overlap_schedule(&tiles)?;
    let stats = engine.finish();
    debug_assert_eq!(stats.flops(), 2 * a.nnz() as u64 * n as u64);
    let report = KernelReport::from_run(
        fmt,
        &stats,
        compute_cycles,
        overlap,
        dma_bytes,
        dma_total_cycles,
        cfg,
    );
    Ok(SpmmRun {
        out,
        report,
        col_tile: p.wt,
        row_block: p.mb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_random_dense, gen_random_sparse};
    use crate::kernels::golden_spmm;
    use crate::minifloat::FloatFormat;

    fn cfg() -> ClusterConfig {
        ClusterConfig::default()
    }

    #[test]
    fn identity_returns_b_bit_exactly() {
        let a = CsrMatrix::identity(16, FloatFormat::Fp64);
        let b = gen_random_dense(16, 8, 1);
        let run = spmm(&a, &b, Variant::Su, &cfg()).unwrap();
        assert_eq!(run.out.raw, b.raw);
    }

    #[test]
    fn flops_are_closed_form() {
        let a = gen_random_sparse(4, 4, 0.5, 2).unwrap();
        let b = gen_random_dense(4, 4, 3);
        let run = spmm(&a, &b, Variant::Su, &cfg()).unwrap();
        assert_eq!(run.report.flops, 2 * a.nnz() as u64 * 4);
    }

    #[test]
    fn matches_golden_bit_exactly() {
        let a = gen_random_sparse(64, 64, 0.05, 5).unwrap();
        let b = gen_random_dense(64, 16, 6);
        for variant in [Variant::Baseline, Variant::Su] {
            let run = spmm(&a, &b, variant, &cfg()).unwrap();
            let golden = golden_spmm(&a, &b);
            let got = run.out.to_f64s();
            for (g, w) in got.iter().zip(&golden) {
                assert_eq!(g.to_bits(), w.to_bits());
            }
        }
    }

    #[test]
    fn variants_bit_identical_su_no_slower() {
        let a = gen_random_sparse(96, 96, 0.08, 9).unwrap();
        let b = gen_random_dense(96, 32, 10);
        let su = spmm(&a, &b, Variant::Su, &cfg()).unwrap();
        let base = spmm(&a, &b, Variant::Baseline, &cfg()).unwrap();
        assert_eq!(su.out.raw, base.out.raw);
        assert!(su.report.cycles <= base.report.cycles);
    }

    #[test]
    fn narrow_format_simd_variants_agree() {
        let a = gen_random_sparse(32, 32, 0.2, 4).unwrap().convert_format(FloatFormat::Fp16);
        let b = gen_random_dense(32, 16, 7).convert_format(FloatFormat::Fp16);
        let su = spmm(&a, &b, Variant::Su, &cfg()).unwrap();
        let base = spmm(&a, &b, Variant::Baseline, &cfg()).unwrap();
        assert_eq!(su.out.raw, base.out.raw);
        // 4 lanes of fp16: flops still 2*nnz*N
        assert_eq!(su.report.flops, 2 * a.nnz() as u64 * 16);
    }

    #[test]
    fn lane_mismatch_is_planning_error() {
        let a = gen_random_sparse(8, 8, 0.5, 1).unwrap().convert_format(FloatFormat::Fp16);
        let b = gen_random_dense(8, 6, 2).convert_format(FloatFormat::Fp16);
        assert!(matches!(
            spmm(&a, &b, Variant::Su, &cfg()),
            Err(KernelError::Plan(_))
        ));
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = gen_random_sparse(8, 9, 0.5, 1).unwrap();
        let b = gen_random_dense(8, 8, 2);
        assert!(matches!(
            spmm(&a, &b, Variant::Su, &cfg()),
            Err(KernelError::Plan(_))
        ));
    }

    #[test]
    fn tiling_invariance() {
        let a = gen_random_sparse(80, 64, 0.1, 12).unwrap();
        let b = gen_random_dense(64, 32, 13);
        let big = spmm(&a, &b, Variant::Su, &cfg()).unwrap();
        let mut small_cfg = cfg();
        small_cfg.spm_bytes = 48 * 1024; // forces smaller tiles
        let small = spmm(&a, &b, Variant::Su, &small_cfg).unwrap();
        assert_eq!(big.out.raw, small.out.raw);
    }
}
