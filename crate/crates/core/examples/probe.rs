//! Scratch probe for model calibration during development.

use susim_core::data::{gen_grid, gen_random_dense, gen_random_sparse, GridMode};
use susim_core::kernels::{spmm, spmspm, stencil, StencilSpec, Variant};
use susim_core::machine::ClusterConfig;

fn main() {
    let cfg = ClusterConfig::default();

    println!("== stencil j3d27pt ==");
    for dims in [[18usize, 18, 18], [26, 26, 26], [34, 34, 34], [40, 40, 40]] {
        let grid = gen_grid(&dims, GridMode::Random { seed: 1 });
        let su = stencil(&StencilSpec::j3d27pt(), &grid, Variant::Su, &cfg, None).unwrap();
        let base = stencil(&StencilSpec::j3d27pt(), &grid, Variant::Baseline, &cfg, None).unwrap();
        println!(
            "grid {dims:?} tz={} util={:.3} speedup={:.2} (compute-only {:.2}) su_cycles={} compute={} stalls_su={} stalls_base={}",
            su.tile_z,
            su.report.fpu_util,
            base.report.cycles as f64 / su.report.cycles as f64,
            base.report.compute_cycles as f64 / su.report.compute_cycles as f64,
            su.report.cycles,
            su.report.compute_cycles,
            su.report.stall_cycles,
            base.report.stall_cycles,
        );
    }

    println!("== spmm fp64 ==");
    for (m, k, n, d) in [
        (512u32, 512u32, 64usize, 0.008),
        (512, 512, 64, 0.009),
        (512, 512, 64, 0.010),
        (512, 512, 64, 0.011),
        (512, 512, 64, 0.012),
        (384, 512, 64, 0.010),
        (768, 512, 64, 0.009),
        (512, 512, 128, 0.010),
    ] {
        let a = gen_random_sparse(m, k, d, 42).unwrap();
        let b = gen_random_dense(k as usize, n, 43);
        let su = spmm(&a, &b, Variant::Su, &cfg).unwrap();
        let base = spmm(&a, &b, Variant::Baseline, &cfg).unwrap();
        println!(
            "{m}x{k} d={d} nnz/row={:.1} N={n}: util={:.3} speedup={:.2} (wt={} mb={})",
            a.nnz() as f64 / m as f64,
            su.report.fpu_util,
            base.report.cycles as f64 / su.report.cycles as f64,
            su.col_tile,
            su.row_block,
        );
    }

    println!("== spmspm fp64, right 1% ==");
    for (m, k, n, da) in [
        (256u32, 256u32, 256u32, 0.010),
        (256, 256, 256, 0.015),
        (256, 256, 256, 0.020),
        (256, 256, 512, 0.020),
        (384, 256, 256, 0.015),
        (256, 256, 384, 0.012),
    ] {
        let a = gen_random_sparse(m, k, da, 7).unwrap();
        let b = gen_random_sparse(k, n, 0.01, 8).unwrap();
        let su = spmspm(&a, &b, Variant::Su, &cfg).unwrap();
        let base = spmspm(&a, &b, Variant::Baseline, &cfg).unwrap();
        println!(
            "{m}x{k}x{n} dA={da}: comp_util={:.3} speedup={:.2} cmp={} out_nnz={}",
            su.report.comp_util,
            base.report.cycles as f64 / su.report.cycles as f64,
            su.report.comparisons,
            su.out.nnz(),
        );
    }
}
