//! Report records: the flat schema shared by JSON and CSV output.
//!
//! One record per (kernel, variant, operand) run. JSON records carry
//! the fully resolved machine configuration and a metadata object
//! (timestamps live there and nowhere else, so byte-comparing reports
//! with metadata stripped — or CSV output, which omits it entirely —
//! is deterministic).

use serde::{Deserialize, Serialize};
use susim_core::machine::{ClusterConfig, KernelReport};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    pub kernel: String,
    pub variant: String,
    pub operand_id: String,
    pub format: String,
    pub seed: u64,
    pub cycles: u64,
    pub flops: u64,
    pub comparisons: u64,
    pub fpu_util: f64,
    pub comp_util: f64,
    pub chip_gflops: f64,
    pub chip_gcomps: f64,
    pub dma_bytes: u64,
    pub overlap_total_cycles: u64,
    pub serial_total_cycles: u64,
    pub validated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: ClusterConfig,
    pub meta: Meta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Meta {
    pub unix_time_s: u64,
    pub tool_version: String,
}

impl Meta {
    pub fn now() -> Meta {
        let unix_time_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Meta {
            unix_time_s,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

impl Record {
    pub fn from_report(
        kernel: &str,
        variant: &str,
        operand_id: &str,
        format: &str,
        seed: u64,
        report: &KernelReport,
        validated: bool,
        cfg: &ClusterConfig,
    ) -> Record {
        Record {
            kernel: kernel.into(),
            variant: variant.into(),
            operand_id: operand_id.into(),
            format: format.into(),
            seed,
            cycles: report.cycles,
            flops: report.flops,
            comparisons: report.comparisons,
            fpu_util: report.fpu_util,
            comp_util: report.comp_util,
            chip_gflops: report.chip_gflops,
            chip_gcomps: report.chip_gcomps,
            dma_bytes: report.dma_bytes,
            overlap_total_cycles: report.overlap_total_cycles,
            serial_total_cycles: report.serial_total_cycles,
            validated,
            speedup: None,
            error: None,
            config: cfg.clone(),
            meta: Meta::now(),
        }
    }

    pub fn error_row(
        kernel: &str,
        variant: &str,
        operand_id: &str,
        format: &str,
        seed: u64,
        msg: String,
        cfg: &ClusterConfig,
    ) -> Record {
        Record {
            kernel: kernel.into(),
            variant: variant.into(),
            operand_id: operand_id.into(),
            format: format.into(),
            seed,
            cycles: 0,
            flops: 0,
            comparisons: 0,
            fpu_util: 0.0,
            comp_util: 0.0,
            chip_gflops: 0.0,
            chip_gcomps: 0.0,
            dma_bytes: 0,
            overlap_total_cycles: 0,
            serial_total_cycles: 0,
            validated: false,
            speedup: None,
            error: Some(msg),
            config: cfg.clone(),
            meta: Meta::now(),
        }
    }
}

pub const CSV_HEADER: &str = "kernel,variant,operand_id,format,seed,cycles,flops,comparisons,\
fpu_util,comp_util,chip_gflops,chip_gcomps,dma_bytes,overlap_total_cycles,validated,error";

/// One CSV row; floats use Rust's shortest round-trip formatting, which
/// is stable across runs.
pub fn csv_row(r: &Record) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.kernel,
        r.variant,
        r.operand_id,
        r.format,
        r.seed,
        r.cycles,
        r.flops,
        r.comparisons,
        r.fpu_util,
        r.comp_util,
        r.chip_gflops,
        r.chip_gcomps,
        r.dma_bytes,
        r.overlap_total_cycles,
        r.validated,
        r.error.as_deref().unwrap_or(""),
    )
}

pub fn to_csv(records: &[Record]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}
