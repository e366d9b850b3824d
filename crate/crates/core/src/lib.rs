//! Functional and timing model of one compute cluster of a stream-unit
//! accelerated RISC-V manycore, with analytic scaling to the full
//! two-chiplet part.
//!
//! The crate is organized around five concerns:
//!
//! * [`minifloat`] — bit-exact emulation of the worker FPU's number
//!   formats and instruction families (FMA, widening sum-dot-product,
//!   three-addend summation).
//! * [`streams`] — functional semantics of the three per-core stream
//!   units: affine and indirect address generation, sorted-index
//!   intersection/union, joint-index write-out.
//! * [`machine`] — the cluster timing model: issue traces, the hardware
//!   loop buffer, SPM bank contention, DMA transfers, double buffering,
//!   and chip-level scaling.
//! * [`data`] — operand ingestion and generation: Matrix Market parsing,
//!   CSR conversion, random sparse matrices, grid initialization.
//! * [`kernels`] — the measured workloads (stencil, SpMM, SpMSpM,
//!   sparse dot product, peak FMA), each in a baseline and a
//!   stream-unit variant producing a verified result plus a timing
//!   report.

pub mod data;
pub mod kernels;
pub mod machine;
pub mod minifloat;
pub mod spm;
pub mod streams;
