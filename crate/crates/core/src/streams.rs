//! Functional semantics of the three per-core sparsity-capable stream
//! units.
//!
//! Each worker core has three SUs. Any of them can run a <=4D affine
//! read or write stream over the SPM. Two of them can run indirect
//! (index-array-driven) streams at 8/16/32-bit index width, and can
//! cooperate to intersect or merge two sorted index streams; the third
//! can write the joint indices of a merge back to the SPM.
//!
//! Everything here is deterministic: identical configs over identical
//! SPM contents yield identical address/event sequences.

use crate::spm::{Spm, SpmError};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("bad stream configuration: {0}")]
    BadConfig(String),
    #[error("stream address {addr:#x} outside SPM (element {pos})")]
    OutOfSpm { addr: u64, pos: usize },
    #[error("{side} index stream not strictly increasing at position {pos} (value {value})")]
    NonMonotone {
        side: &'static str,
        pos: usize,
        value: u32,
    },
    #[error("joint-index output overflows allocated region: capacity {capacity}, needed {needed}")]
    OutputOverflow { capacity: usize, needed: usize },
    #[error("index value {value} does not fit in {bits}-bit index stream")]
    IndexWidthOverflow { value: u32, bits: u32 },
    #[error(transparent)]
    Spm(#[from] SpmError),
}

/// Index element width of an indirect stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexWidth {
    W8,
    W16,
    W32,
}

impl IndexWidth {
    pub const fn bytes(self) -> u32 {
        match self {
            IndexWidth::W8 => 1,
            IndexWidth::W16 => 2,
            IndexWidth::W32 => 4,
        }
    }

    pub const fn bits(self) -> u32 {
        self.bytes() * 8
    }

    pub const fn max_value(self) -> u32 {
        match self {
            IndexWidth::W8 => u8::MAX as u32,
            IndexWidth::W16 => u16::MAX as u32,
            IndexWidth::W32 => u32::MAX,
        }
    }
}

/// A <=4D affine address generator.
///
/// Dimension 0 is innermost (varies fastest). Emits
/// `base + sum_d i_d * strides[d]` for the row-major-style nested
/// iteration over `bounds`.
#[derive(Clone, Debug)]
pub struct AffineConfig {
    pub base: u32,
    pub elem_bytes: u8,
    pub bounds: Vec<u32>,
    pub strides: Vec<i64>,
}

impl AffineConfig {
    pub fn rank(&self) -> usize {
        self.bounds.len()
    }

    pub fn total_elems(&self) -> u64 {
        self.bounds.iter().map(|&b| b as u64).product()
    }

    /// Checks the whole config before any element is emitted: rank,
    /// element width, alignment, and that every reachable address lies
    /// inside the SPM.
    pub fn validate(&self, spm_bytes: u32) -> Result<(), StreamError> {
        if self.bounds.is_empty() || self.bounds.len() > 4 {
            return Err(StreamError::BadConfig(format!(
                "affine rank {} not in 1..=4",
                self.bounds.len()
            )));
        }
        if self.strides.len() != self.bounds.len() {
            return Err(StreamError::BadConfig(
                "bounds/strides rank mismatch".into(),
            ));
        }
        if !matches!(self.elem_bytes, 1 | 2 | 4 | 8) {
            return Err(StreamError::BadConfig(format!(
                "element width {} not in {{1,2,4,8}}",
                self.elem_bytes
            )));
        }
        if self.bounds.iter().any(|&b| b == 0) {
            return Err(StreamError::BadConfig("zero bound".into()));
        }
        let eb = self.elem_bytes as i64;
        if self.base as i64 % eb != 0 || self.strides.iter().any(|&s| s % eb != 0) {
            return Err(StreamError::BadConfig(
                "base and strides must be element-aligned".into(),
            ));
        }
        let mut lo = self.base as i64;
        let mut hi = self.base as i64;
        for (&b, &s) in self.bounds.iter().zip(&self.strides) {
            let span = (b as i64 - 1) * s;
            if span < 0 {
                lo += span;
            } else {
                hi += span;
            }
        }
        if lo < 0 || hi + eb > spm_bytes as i64 {
            return Err(StreamError::OutOfSpm {
                addr: if lo < 0 { lo as u64 } else { (hi + eb - 1) as u64 },
                pos: 0,
            });
        }
        Ok(())
    }

    /// The full ordered address sequence. `validate` must have passed.
    pub fn addresses(&self) -> impl Iterator<Item = u32> + '_ {
        let total = self.total_elems();
        (0..total).map(move |n| {
            let mut rem = n;
            let mut addr = self.base as i64;
            for (&b, &s) in self.bounds.iter().zip(&self.strides) {
                let i = (rem % b as u64) as i64;
                rem /= b as u64;
                addr += i * s;
            }
            addr as u32
        })
    }
}

/// Validate and materialize an affine address sequence.
pub fn affine_addresses(cfg: &AffineConfig, spm_bytes: u32) -> Result<Vec<u32>, StreamError> {
    cfg.validate(spm_bytes)?;
    Ok(cfg.addresses().collect())
}

/// The index-reading half of an indirect stream: `count` indices of
/// `width` bits starting at `base`.
#[derive(Clone, Copy, Debug)]
pub struct IndexStream {
    pub base: u32,
    pub width: IndexWidth,
    pub count: u32,
}

impl IndexStream {
    pub fn validate(&self, spm: &Spm) -> Result<(), StreamError> {
        spm.check_range(self.base, self.count * self.width.bytes())?;
        Ok(())
    }

    pub fn read(&self, spm: &Spm, pos: u32) -> Result<u32, StreamError> {
        let addr = self.base + pos * self.width.bytes();
        let v = match self.width {
            IndexWidth::W8 => spm.read_u8(addr)? as u32,
            IndexWidth::W16 => spm.read_u16(addr)? as u32,
            IndexWidth::W32 => spm.read_u32(addr)?,
        };
        Ok(v)
    }

    pub fn read_all(&self, spm: &Spm) -> Result<Vec<u32>, StreamError> {
        self.validate(spm)?;
        (0..self.count).map(|p| self.read(spm, p)).collect()
    }
}

/// An indirect stream: resolves `data_base + index * elem_bytes` for
/// each index read from the index stream, in array order.
#[derive(Clone, Copy, Debug)]
pub struct IndirectConfig {
    pub index: IndexStream,
    pub data_base: u32,
    pub elem_bytes: u8,
}

/// The resolved address sequence of an indirect stream. A resolved
/// address outside the SPM is a stream fault naming the offending
/// position.
pub fn indirect_addresses(cfg: &IndirectConfig, spm: &Spm) -> Result<Vec<u32>, StreamError> {
    cfg.index.validate(spm)?;
    let mut out = Vec::with_capacity(cfg.index.count as usize);
    for pos in 0..cfg.index.count {
        let idx = cfg.index.read(spm, pos)?;
        let addr = cfg.data_base as u64 + idx as u64 * cfg.elem_bytes as u64;
        if addr + cfg.elem_bytes as u64 > spm.len() as u64 {
            return Err(StreamError::OutOfSpm {
                addr,
                pos: pos as usize,
            });
        }
        out.push(addr as u32);
    }
    Ok(out)
}

/// Gather the elements an indirect stream would deliver.
pub fn indirect_gather(cfg: &IndirectConfig, spm: &Spm) -> Result<Vec<u64>, StreamError> {
    let addrs = indirect_addresses(cfg, spm)?;
    addrs
        .into_iter()
        .map(|a| spm.read_elem(a, cfg.elem_bytes).map_err(StreamError::from))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeMode {
    Intersect,
    Union,
}

/// Two cooperating index streams plus the merge mode. `emit_indices`
/// marks whether the third SU writes the joint indices out.
#[derive(Clone, Copy, Debug)]
pub struct MergeConfig {
    pub mode: MergeMode,
    pub left: IndexStream,
    pub right: IndexStream,
    pub emit_indices: bool,
}

/// One emitted element of a merge, with the source positions the value
/// streams need to fetch operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeEntry {
    pub index: u32,
    pub left_pos: Option<u32>,
    pub right_pos: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeOutput {
    pub entries: Vec<MergeEntry>,
    /// Head-to-head index comparisons performed by the comparator
    /// (one per merge step; the unit of the comparison-rate metric).
    pub comparisons: u64,
}

/// One comparator step of a merge: the head positions compared and
/// which sides advanced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeStep {
    pub left_pos: u32,
    pub right_pos: u32,
    pub advance_left: bool,
    pub advance_right: bool,
}

impl MergeStep {
    pub fn matched(&self) -> bool {
        self.advance_left && self.advance_right
    }
}

/// Two-pointer merge of two strictly increasing index sequences.
///
/// Each step compares the two head indices (one comparison) and
/// advances the smaller; on equality both advance and both modes emit.
/// INTERSECT stops as soon as either input is exhausted; UNION drains
/// the remainder without further comparisons.
pub fn merge_sorted(left: &[u32], right: &[u32], mode: MergeMode) -> Result<MergeOutput, StreamError> {
    Ok(merge_sorted_with_steps(left, right, mode)?.0)
}

/// `merge_sorted` plus the per-comparison step log the timing model
/// consumes (one entry per comparator cycle).
pub fn merge_sorted_with_steps(
    left: &[u32],
    right: &[u32],
    mode: MergeMode,
) -> Result<(MergeOutput, Vec<MergeStep>), StreamError> {
    check_monotone(left, "left")?;
    check_monotone(right, "right")?;
    let mut out = MergeOutput::default();
    let mut steps = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < left.len() && j < right.len() {
        out.comparisons += 1;
        let mut step = MergeStep {
            left_pos: i as u32,
            right_pos: j as u32,
            advance_left: false,
            advance_right: false,
        };
        match left[i].cmp(&right[j]) {
            std::cmp::Ordering::Equal => {
                out.entries.push(MergeEntry {
                    index: left[i],
                    left_pos: Some(i as u32),
                    right_pos: Some(j as u32),
                });
                step.advance_left = true;
                step.advance_right = true;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                if mode == MergeMode::Union {
                    out.entries.push(MergeEntry {
                        index: left[i],
                        left_pos: Some(i as u32),
                        right_pos: None,
                    });
                }
                step.advance_left = true;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                if mode == MergeMode::Union {
                    out.entries.push(MergeEntry {
                        index: right[j],
                        left_pos: None,
                        right_pos: Some(j as u32),
                    });
                }
                step.advance_right = true;
                j += 1;
            }
        }
        steps.push(step);
    }
    if mode == MergeMode::Union {
        while i < left.len() {
            out.entries.push(MergeEntry {
                index: left[i],
                left_pos: Some(i as u32),
                right_pos: None,
            });
            i += 1;
        }
        while j < right.len() {
            out.entries.push(MergeEntry {
                index: right[j],
                left_pos: None,
                right_pos: Some(j as u32),
            });
            j += 1;
        }
    }
    Ok((out, steps))
}

fn check_monotone(seq: &[u32], side: &'static str) -> Result<(), StreamError> {
    for (pos, w) in seq.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(StreamError::NonMonotone {
                side,
                pos: pos + 1,
                value: w[1],
            });
        }
    }
    Ok(())
}

/// Merge two SPM-resident index streams.
pub fn merge_streams(cfg: &MergeConfig, spm: &Spm) -> Result<MergeOutput, StreamError> {
    let left = cfg.left.read_all(spm)?;
    let right = cfg.right.read_all(spm)?;
    merge_sorted(&left, &right, cfg.mode)
}

/// Write the emitted merge indices contiguously into the SPM at the
/// given width (third-SU joint-index write-out). Returns the number of
/// indices written.
pub fn emit_joint_indices(
    entries: &[MergeEntry],
    base: u32,
    width: IndexWidth,
    capacity: usize,
    spm: &mut Spm,
) -> Result<u32, StreamError> {
    if entries.len() > capacity {
        return Err(StreamError::OutputOverflow {
            capacity,
            needed: entries.len(),
        });
    }
    for (n, e) in entries.iter().enumerate() {
        if e.index > width.max_value() {
            return Err(StreamError::IndexWidthOverflow {
                value: e.index,
                bits: width.bits(),
            });
        }
        let addr = base + n as u32 * width.bytes();
        match width {
            IndexWidth::W8 => spm.write_u8(addr, e.index as u8)?,
            IndexWidth::W16 => spm.write_u16(addr, e.index as u16)?,
            IndexWidth::W32 => spm.write_u32(addr, e.index)?,
        }
    }
    Ok(entries.len() as u32)
}

/// Kinds of observable stream activity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamEventKind {
    ReadAddr,
    WriteAddr,
    IndexOut,
    Comparison,
}

/// One observable event of a stream unit, tagged with the SU (0..2)
/// that produced it. COMPARISON events count one index-pair comparison
/// each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamEvent {
    pub kind: StreamEventKind,
    pub value: u64,
    pub su: u8,
}

/// Replay a merge as the event sequence the two reader SUs and the
/// writer SU would produce.
pub fn merge_events(cfg: &MergeConfig, spm: &Spm) -> Result<Vec<StreamEvent>, StreamError> {
    let out = merge_streams(cfg, spm)?;
    let mut ev = Vec::new();
    for _ in 0..out.comparisons {
        ev.push(StreamEvent {
            kind: StreamEventKind::Comparison,
            value: 0,
            su: 0,
        });
    }
    if cfg.emit_indices {
        for e in &out.entries {
            ev.push(StreamEvent {
                kind: StreamEventKind::IndexOut,
                value: e.index as u64,
                su: 2,
            });
        }
    }
    Ok(ev)
}
