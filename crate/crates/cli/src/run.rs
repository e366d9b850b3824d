//! Experiment resolution and execution: turn CLI parameters into
//! operands, run the requested kernel variants, validate against the
//! golden references, and assemble report records.

use crate::record::Record;
use std::path::{Path, PathBuf};
use susim_core::data::{
    coo_to_csr, gen_grid, gen_random_dense, gen_random_sparse, parse_matrix_market, CsrMatrix,
    DenseTensor, GridMode,
};
use susim_core::kernels::{
    golden_sparse_dot, golden_spmm, golden_spmspm, golden_stencil, peak_fma, sparse_dot, spmm,
    spmspm, stencil, StencilSpec, Variant,
};
use susim_core::machine::{ClusterConfig, KernelReport};
use susim_core::minifloat::FloatFormat;
use susim_core::streams::IndexWidth;

/// Exit-code-bearing failure: 1 validation, 2 configuration, 3 I/O.
#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub msg: String,
}

impl Fail {
    pub fn config(msg: impl Into<String>) -> Fail {
        Fail {
            code: 2,
            msg: msg.into(),
        }
    }
    pub fn io(msg: impl Into<String>) -> Fail {
        Fail {
            code: 3,
            msg: msg.into(),
        }
    }
    pub fn validation(msg: impl Into<String>) -> Fail {
        Fail {
            code: 1,
            msg: msg.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Stencil,
    Spmm,
    SpmSpm,
    SparseDot,
    PeakFma,
}

impl KernelKind {
    pub fn parse(s: &str) -> Option<KernelKind> {
        match s.to_ascii_lowercase().as_str() {
            "stencil" => Some(KernelKind::Stencil),
            "spmm" => Some(KernelKind::Spmm),
            "spmspm" => Some(KernelKind::SpmSpm),
            "sparse_dot" | "sparse-dot" => Some(KernelKind::SparseDot),
            "peak_fma" | "peak-fma" | "peak" => Some(KernelKind::PeakFma),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Stencil => "stencil",
            KernelKind::Spmm => "spmm",
            KernelKind::SpmSpm => "spmspm",
            KernelKind::SparseDot => "sparse_dot",
            KernelKind::PeakFma => "peak_fma",
        }
    }
}

/// Where the sparse left operand comes from.
#[derive(Clone, Debug)]
pub enum OperandSrc {
    Matrix(PathBuf),
    Random { rows: u32, cols: u32, density: f64 },
    None,
}

impl OperandSrc {
    pub fn id(&self, seed: u64) -> String {
        match self {
            OperandSrc::Matrix(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            OperandSrc::Random { rows, cols, density } => {
                format!("random_{rows}x{cols}_d{density}_s{seed}")
            }
            OperandSrc::None => String::new(),
        }
    }
}

pub fn parse_random_spec(s: &str) -> Result<OperandSrc, Fail> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Fail::config(format!(
            "--random expects rows,cols,density, got '{s}'"
        )));
    }
    let rows = parts[0]
        .trim()
        .parse()
        .map_err(|_| Fail::config(format!("bad rows in --random '{s}'")))?;
    let cols = parts[1]
        .trim()
        .parse()
        .map_err(|_| Fail::config(format!("bad cols in --random '{s}'")))?;
    let density = parts[2]
        .trim()
        .parse()
        .map_err(|_| Fail::config(format!("bad density in --random '{s}'")))?;
    Ok(OperandSrc::Random { rows, cols, density })
}

pub fn parse_grid(s: &str) -> Result<[usize; 3], Fail> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Fail::config(format!("--grid expects d,h,w, got '{s}'")));
    }
    let mut dims = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        dims[i] = p
            .trim()
            .parse()
            .map_err(|_| Fail::config(format!("bad grid dimension '{p}'")))?;
    }
    Ok(dims)
}

pub fn parse_grid_mode(s: &str, seed: u64) -> Result<GridMode, Fail> {
    if s == "ramp" {
        return Ok(GridMode::Ramp);
    }
    if s == "random" {
        return Ok(GridMode::Random { seed });
    }
    if let Some(c) = s.strip_prefix("constant:") {
        let v = c
            .parse()
            .map_err(|_| Fail::config(format!("bad constant in --grid-mode '{s}'")))?;
        return Ok(GridMode::Constant(v));
    }
    Err(Fail::config(format!(
        "--grid-mode must be ramp, random, or constant:<v>, got '{s}'"
    )))
}

/// All parameters of one experiment, defaults materialized.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub kernel: KernelKind,
    pub format: FloatFormat,
    pub operand: OperandSrc,
    pub grid: [usize; 3],
    pub grid_mode_name: String,
    pub stencil_name: String,
    pub tile_z: Option<usize>,
    pub dense_cols: usize,
    pub right_density: f64,
    pub iters: u64,
    pub seed: u64,
    pub cfg: ClusterConfig,
}

impl Experiment {
    pub fn operand_id(&self) -> String {
        match self.kernel {
            KernelKind::Stencil => format!(
                "{}_grid{}x{}x{}_{}_s{}",
                self.stencil_name,
                self.grid[0],
                self.grid[1],
                self.grid[2],
                self.grid_mode_name,
                self.seed
            ),
            KernelKind::PeakFma => format!("iters{}", self.iters),
            KernelKind::Spmm => format!("{}_n{}", self.operand.id(self.seed), self.dense_cols),
            KernelKind::SpmSpm => format!(
                "{}_rd{}",
                self.operand.id(self.seed),
                self.right_density
            ),
            KernelKind::SparseDot => self.operand.id(self.seed),
        }
    }

    fn left_matrix(&self) -> Result<CsrMatrix, Fail> {
        let csr = match &self.operand {
            OperandSrc::Matrix(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Fail::io(format!("cannot read {}: {e}", path.display())))?;
                let coo = parse_matrix_market(&text)
                    .map_err(|e| Fail::config(format!("{}: {e}", path.display())))?;
                coo_to_csr(&coo, IndexWidth::W32, FloatFormat::Fp64)
                    .map_err(|e| Fail::config(e.to_string()))?
            }
            OperandSrc::Random { rows, cols, density } => {
                gen_random_sparse(*rows, *cols, *density, self.seed)
                    .map_err(|e| Fail::config(e.to_string()))?
            }
            OperandSrc::None => {
                return Err(Fail::config(format!(
                    "kernel {} needs --matrix or --random",
                    self.kernel.name()
                )))
            }
        };
        Ok(csr)
    }
}

/// The functional output digest (raw bits) plus the timing report of
/// one variant run.
pub struct RunOutput {
    pub report: KernelReport,
    pub digest: Vec<u64>,
    pub golden_ok: bool,
    pub mismatch: Option<String>,
}

pub fn run_variant(exp: &Experiment, variant: Variant) -> Result<RunOutput, Fail> {
    match exp.kernel {
        KernelKind::Stencil => {
            let spec = StencilSpec::parse(&exp.stencil_name)
                .ok_or_else(|| Fail::config(format!("unknown stencil '{}'", exp.stencil_name)))?;
            let mode = parse_grid_mode(&exp.grid_mode_name, exp.seed)?;
            let grid = gen_grid(&exp.grid, mode);
            let run = stencil(&spec, &grid, variant, &exp.cfg, exp.tile_z)
                .map_err(|e| Fail::config(e.to_string()))?;
            let golden = golden_stencil(&spec, &grid);
            let got = run.out.to_f64s();
            let mismatch = first_mismatch(&got, &golden);
            Ok(RunOutput {
                report: run.report,
                digest: run.out.raw,
                golden_ok: mismatch.is_none(),
                mismatch,
            })
        }
        KernelKind::Spmm => {
            let a64 = self_validated(exp.left_matrix()?)?;
            let b64 = gen_random_dense(a64.cols as usize, exp.dense_cols, exp.seed ^ 0x5eed);
            let (a, b) = if exp.format == FloatFormat::Fp64 {
                (a64.clone(), b64.clone())
            } else {
                (a64.convert_format(exp.format), b64.convert_format(exp.format))
            };
            let run = spmm(&a, &b, variant, &exp.cfg).map_err(|e| Fail::config(e.to_string()))?;
            let (golden_ok, mismatch) = if exp.format == FloatFormat::Fp64 {
                let golden = golden_spmm(&a64, &b64);
                let got = run.out.to_f64s();
                let m = first_mismatch(&got, &golden);
                (m.is_none(), m)
            } else {
                // narrow formats are validated by cross-variant
                // bit-equality at a higher level
                (true, None)
            };
            Ok(RunOutput {
                report: run.report,
                digest: run.out.raw,
                golden_ok,
                mismatch,
            })
        }
        KernelKind::SpmSpm => {
            if exp.format != FloatFormat::Fp64 {
                return Err(Fail::config("spmspm runs FP64 only".into()));
            }
            let a = self_validated(exp.left_matrix()?)?;
            let b = gen_random_sparse(a.cols, a.cols, exp.right_density, exp.seed ^ 0xb)
                .map_err(|e| Fail::config(e.to_string()))?;
            let run = spmspm(&a, &b, variant, &exp.cfg).map_err(|e| Fail::config(e.to_string()))?;
            let golden = golden_spmspm(&a, &b);
            let got = run.out.to_coo().entries;
            let mismatch = first_triple_mismatch(&got, &golden);
            let mut digest = Vec::with_capacity(run.out.nnz() * 2);
            for k in 0..run.out.nnz() {
                digest.push(run.out.col_idx[k] as u64);
                digest.push(run.out.values[k]);
            }
            Ok(RunOutput {
                report: run.report,
                digest,
                golden_ok: mismatch.is_none(),
                mismatch,
            })
        }
        KernelKind::SparseDot => {
            let a = self_validated(exp.left_matrix()?)?;
            if a.rows < 1 {
                return Err(Fail::config("sparse_dot needs at least one row".into()));
            }
            let r = a.row_range(0);
            let idx: Vec<u32> = a.col_idx[r.clone()].to_vec();
            let vals: Vec<f64> = r.clone().map(|k| a.value_bits(k).to_f64()).collect();
            let b2 = gen_random_dense(a.cols as usize, 1, exp.seed ^ 0xd07);
            let b = DenseTensor {
                dims: vec![a.cols as usize],
                ..b2
            };
            let run = sparse_dot(&idx, &vals, &b, variant, &exp.cfg)
                .map_err(|e| Fail::config(e.to_string()))?;
            let golden = golden_sparse_dot(&idx, &vals, &b.to_f64s());
            let got = run.value.to_f64();
            let golden_ok = got.to_bits() == golden.to_bits();
            Ok(RunOutput {
                report: run.report,
                digest: vec![run.value.raw()],
                golden_ok,
                mismatch: if golden_ok {
                    None
                } else {
                    Some(format!("scalar: got {got:e}, golden {golden:e}"))
                },
            })
        }
        KernelKind::PeakFma => {
            if variant == Variant::Baseline {
                return Err(Fail::config(
                    "peak_fma is the stream-unit microbenchmark; it has no baseline variant"
                        .into(),
                ));
            }
            let run =
                peak_fma(exp.format, exp.iters, &exp.cfg).map_err(|e| Fail::config(e.to_string()))?;
            let golden_ok = run.checksum.iter().all(|v| v.is_finite());
            Ok(RunOutput {
                report: run.report,
                digest: run.checksum.iter().map(|v| v.to_bits()).collect(),
                golden_ok,
                mismatch: None,
            })
        }
    }
}

fn self_validated(csr: CsrMatrix) -> Result<CsrMatrix, Fail> {
    csr.validate().map_err(|e| Fail::config(e.to_string()))?;
    Ok(csr)
}

fn first_mismatch(got: &[f64], golden: &[f64]) -> Option<String> {
    if got.len() != golden.len() {
        return Some(format!(
            "length mismatch: got {}, golden {}",
            got.len(),
            golden.len()
        ));
    }
    for (i, (g, w)) in got.iter().zip(golden).enumerate() {
        if g.to_bits() != w.to_bits() {
            return Some(format!("element {i}: got {g:e}, golden {w:e}"));
        }
    }
    None
}

fn first_triple_mismatch(
    got: &[(u32, u32, f64)],
    golden: &[(u32, u32, f64)],
) -> Option<String> {
    if got.len() != golden.len() {
        return Some(format!(
            "nnz mismatch: got {}, golden {}",
            got.len(),
            golden.len()
        ));
    }
    for (g, w) in got.iter().zip(golden) {
        if (g.0, g.1) != (w.0, w.1) || g.2.to_bits() != w.2.to_bits() {
            return Some(format!(
                "entry ({},{}): got {:e}, golden ({},{}) {:e}",
                g.0, g.1, g.2, w.0, w.1, w.2
            ));
        }
    }
    None
}

/// Which variants a run covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantSel {
    Baseline,
    Su,
    Both,
}

impl VariantSel {
    pub fn parse(s: &str) -> Option<VariantSel> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(VariantSel::Baseline),
            "su" => Some(VariantSel::Su),
            "both" => Some(VariantSel::Both),
            _ => None,
        }
    }

    pub fn variants(self) -> Vec<Variant> {
        match self {
            VariantSel::Baseline => vec![Variant::Baseline],
            VariantSel::Su => vec![Variant::Su],
            VariantSel::Both => vec![Variant::Baseline, Variant::Su],
        }
    }
}

/// Execute an experiment across its variants, cross-validating outputs,
/// and emit one record per variant (speedup attached to the SU record
/// when both ran).
pub fn run_experiment(exp: &Experiment, sel: VariantSel) -> Result<Vec<Record>, Fail> {
    let variants = match exp.kernel {
        KernelKind::PeakFma => vec![Variant::Su],
        _ => sel.variants(),
    };
    let mut outputs = Vec::new();
    for v in &variants {
        outputs.push((*v, run_variant(exp, *v)?));
    }
    let cross_ok = outputs
        .windows(2)
        .all(|w| w[0].1.digest == w[1].1.digest);
    let fmt = exp.format.name();
    let mut records = Vec::new();
    let mut baseline_cycles = None;
    for (v, out) in &outputs {
        let validated = out.golden_ok && cross_ok;
        let mut rec = Record::from_report(
            exp.kernel.name(),
            v.name(),
            &exp.operand_id(),
            fmt,
            exp.seed,
            &out.report,
            validated,
            &exp.cfg,
        );
        if let Some(m) = &out.mismatch {
            rec.error = Some(format!("golden mismatch at {m}"));
        } else if !cross_ok {
            rec.error = Some("variant outputs differ".into());
        }
        match v {
            Variant::Baseline => baseline_cycles = Some(out.report.cycles),
            Variant::Su => {
                if let Some(bc) = baseline_cycles {
                    rec.speedup = Some(bc as f64 / out.report.cycles as f64);
                }
            }
        }
        records.push(rec);
    }
    Ok(records)
}
