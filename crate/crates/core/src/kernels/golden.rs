//! Golden references for the FP64 kernels.
//!
//! Plain nested loops over native f64 with `mul_add` (a correctly
//! rounded fused multiply-add), accumulating in exactly the order the
//! kernels contract to. The kernels reach their results through the
//! emulated FPU and stream-resolved addresses; agreement must be
//! bit-exact.

use super::stencil::StencilSpec;
use crate::data::{CsrMatrix, DenseTensor};

/// Interior of the stencil applied to a 3D grid, tap order identical
/// to the kernels (coefficient times neighbor, FMA chain from +0).
pub fn golden_stencil(spec: &StencilSpec, grid: &DenseTensor) -> Vec<f64> {
    let [d, h, w] = [grid.dims[0], grid.dims[1], grid.dims[2]];
    let (hz, hy, hx) = spec.halo();
    let g = grid.to_f64s();
    let (di, hi, wi) = (d - 2 * hz, h - 2 * hy, w - 2 * hx);
    let mut out = Vec::with_capacity(di * hi * wi);
    for z in 0..di {
        for y in 0..hi {
            for x in 0..wi {
                let (cz, cy, cx) = (z + hz, y + hy, x + hx);
                let mut acc = 0.0f64;
                for (t, &(dz, dy, dx)) in spec.taps.iter().enumerate() {
                    let zz = (cz as i64 + dz as i64) as usize;
                    let yy = (cy as i64 + dy as i64) as usize;
                    let xx = (cx as i64 + dx as i64) as usize;
                    acc = spec.coeffs[t].mul_add(g[(zz * h + yy) * w + xx], acc);
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Sparse-dense matrix product in column-index order per row.
pub fn golden_spmm(a: &CsrMatrix, b: &DenseTensor) -> Vec<f64> {
    let n = b.dims[1];
    let bv = b.to_f64s();
    let mut c = vec![0.0f64; a.rows as usize * n];
    for i in 0..a.rows {
        for j in 0..n {
            let mut acc = 0.0f64;
            for k in a.row_range(i) {
                let col = a.col_idx[k] as usize;
                acc = a.value_bits(k).to_f64().mul_add(bv[col * n + j], acc);
            }
            c[i as usize * n + j] = acc;
        }
    }
    c
}

/// Dense multiply-then-sparsify oracle for the sparse-sparse product:
/// full k-order accumulation, exact zeros dropped. Returns (row, col,
/// value) triples in row-major order.
pub fn golden_spmspm(a: &CsrMatrix, b: &CsrMatrix) -> Vec<(u32, u32, f64)> {
    let (m, k, n) = (a.rows as usize, a.cols as usize, b.cols as usize);
    let mut ad = vec![0.0f64; m * k];
    for i in 0..a.rows {
        for p in a.row_range(i) {
            ad[i as usize * k + a.col_idx[p] as usize] = a.value_bits(p).to_f64();
        }
    }
    let mut bd = vec![0.0f64; k * n];
    for i in 0..b.rows {
        for p in b.row_range(i) {
            bd[i as usize * n + b.col_idx[p] as usize] = b.value_bits(p).to_f64();
        }
    }
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for kk in 0..k {
                acc = ad[i * k + kk].mul_add(bd[kk * n + j], acc);
            }
            if acc != 0.0 {
                out.push((i as u32, j as u32, acc));
            }
        }
    }
    out
}

/// Sparse-dense dot product in index order.
pub fn golden_sparse_dot(idx: &[u32], vals: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (p, &i) in idx.iter().enumerate() {
        acc = vals[p].mul_add(b[i as usize], acc);
    }
    acc
}
