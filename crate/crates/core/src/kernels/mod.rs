//! The measured workloads, each in a baseline (plain-ISA) and a
//! stream-unit variant.
//!
//! Every kernel produces a functional result plus a [`crate::machine::KernelReport`]
//! from the cluster timing model. Baseline and SU variants accumulate
//! in the same operand order, so their outputs are bit-identical; only
//! the issue streams differ.
//!
//! Issue-cost conventions shared by the sparse kernels:
//!
//! * A baseline sparse element costs 7 cycles: index load, a load-use
//!   stall, address add, operand loads, a second load-use stall, FMA.
//!   The in-order core cannot hide the serial index -> address -> value
//!   dependence.
//! * A baseline merge step costs 6 cycles: head load, load-use stall,
//!   compare-branch, two flush bubbles (the branch direction is data
//!   dependent and effectively unpredictable), pointer bump.
//! * Stream-unit inner loops run under the hardware loop buffer: one
//!   FPU or comparator slot per element with no loop overhead. Each SU
//!   reconfiguration costs integer-core slots outside the loop.
//! * Loop control in baseline inner loops is assumed unrolled
//!   (predictable branches are free); only data-dependent branches pay.
//!
//! Work is partitioned row-wise round-robin across the eight workers,
//! so traces and results are reproducible.

mod golden;
mod peak;
mod sparse_dot;
mod spmm;
mod spmspm;
mod stencil;

pub use golden::{golden_sparse_dot, golden_spmm, golden_spmspm, golden_stencil};
pub use peak::{peak_fma, PeakRun};
pub use sparse_dot::{sparse_dot, SparseDotRun};
pub use spmm::{spmm, SpmmRun};
pub use spmspm::{spmspm, SpmSpmRun};
pub use stencil::{stencil, StencilRun, StencilSpec};

use crate::data::DataError;
use crate::machine::MachineError;
use crate::spm::SpmError;
use crate::streams::StreamError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel planning failed: {0}")]
    Plan(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Spm(#[from] SpmError),
}

/// Which implementation of a kernel to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Assembly-style plain-ISA code: explicit loads, address
    /// arithmetic and stores on the single-issue core.
    Baseline,
    /// Stream units feed the FPU; inner loops replay from the hardware
    /// loop buffer.
    Su,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(Variant::Baseline),
            "su" => Some(Variant::Su),
            _ => None,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Su => "su",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Round a word count up to the next odd value. Odd pitches are
/// coprime to the power-of-two bank interleave, so parallel workers
/// walking different rows land on rotating banks instead of colliding.
pub(crate) fn odd_words(words: usize) -> usize {
    words | 1
}

/// Number of stream indices packed per 64-bit SPM word.
pub(crate) fn idx_per_word(bytes: u32) -> usize {
    (8 / bytes) as usize
}
