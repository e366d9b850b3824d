//! Operand ingestion and generation: Matrix Market parsing, CSR
//! conversion, random sparse matrices, grid initialization.
//!
//! All parsing and generation is pure and reentrant; generators are
//! deterministic under their seed.

use crate::minifloat::{self, Bits, FloatFormat};
use crate::streams::IndexWidth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported Matrix Market {field} '{value}'")]
    Unsupported { field: &'static str, value: String },
    #[error("line {line}: entry count mismatch, header declared {declared}")]
    CountMismatch { line: usize, declared: usize },
    #[error("column index {value} exceeds {bits}-bit index width; use a wider index type")]
    IndexOverflow { value: u32, bits: u32 },
    #[error("entry ({row},{col}) outside {rows}x{cols} matrix")]
    EntryOutOfRange {
        row: u32,
        col: u32,
        rows: u32,
        cols: u32,
    },
    #[error("invalid CSR: {0}")]
    InvalidCsr(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("density {0} not in (0, 1]")]
    BadDensity(f64),
}

/// Coordinate-format sparse matrix, the parse-time representation.
#[derive(Clone, Debug, PartialEq)]
pub struct CooMatrix {
    pub rows: u32,
    pub cols: u32,
    pub entries: Vec<(u32, u32, f64)>,
}

impl CooMatrix {
    /// Sort by (row, col) and sum duplicate coordinates.
    pub fn canonicalize(&mut self) {
        self.entries
            .sort_by_key(|&(r, c, _)| (r, c));
        let mut out: Vec<(u32, u32, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        self.entries = out;
    }
}

/// Parse a coordinate Matrix Market document. Supports
/// `real | integer | pattern` fields and `general | symmetric`
/// symmetry; symmetric entries are mirrored at parse time (the diagonal
/// is not duplicated), pattern entries get value 1.0.
pub fn parse_matrix_market(text: &str) -> Result<CooMatrix, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty document".into(),
    })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || !toks[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(DataError::Parse {
            line: 1,
            msg: "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'".into(),
        });
    }
    if !toks[1].eq_ignore_ascii_case("matrix") {
        return Err(DataError::Unsupported {
            field: "object",
            value: toks[1].into(),
        });
    }
    if !toks[2].eq_ignore_ascii_case("coordinate") {
        return Err(DataError::Unsupported {
            field: "format",
            value: toks[2].into(),
        });
    }
    let field = toks[3].to_ascii_lowercase();
    if !matches!(field.as_str(), "real" | "integer" | "pattern") {
        return Err(DataError::Unsupported {
            field: "field",
            value: toks[3].into(),
        });
    }
    let symmetry = toks[4].to_ascii_lowercase();
    let symmetric = match symmetry.as_str() {
        "general" => false,
        "symmetric" => true,
        _ => {
            return Err(DataError::Unsupported {
                field: "symmetry",
                value: toks[4].into(),
            })
        }
    };
    let pattern = field == "pattern";

    // skip comments, read the size line
    let mut size_line = None;
    for (n, line) in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some((n + 1, t.to_string()));
        break;
    }
    let (size_ln, size_text) = size_line.ok_or(DataError::Parse {
        line: 1,
        msg: "missing size line".into(),
    })?;
    let dims: Vec<&str> = size_text.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(DataError::Parse {
            line: size_ln,
            msg: "size line must be 'rows cols nnz'".into(),
        });
    }
    let parse_u32 = |s: &str, line: usize| -> Result<u32, DataError> {
        s.parse().map_err(|_| DataError::Parse {
            line,
            msg: format!("cannot parse '{s}' as integer"),
        })
    };
    let rows = parse_u32(dims[0], size_ln)?;
    let cols = parse_u32(dims[1], size_ln)?;
    let declared = parse_u32(dims[2], size_ln)? as usize;

    let mut coo = CooMatrix {
        rows,
        cols,
        entries: Vec::with_capacity(declared),
    };
    let mut seen = 0usize;
    let mut last_line = size_ln;
    for (n, line) in lines {
        let ln = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        last_line = ln;
        if seen == declared {
            return Err(DataError::CountMismatch { line: ln, declared });
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let need = if pattern { 2 } else { 3 };
        if toks.len() < need {
            return Err(DataError::Parse {
                line: ln,
                msg: format!("expected {need} fields"),
            });
        }
        let i = parse_u32(toks[0], ln)?;
        let j = parse_u32(toks[1], ln)?;
        if i < 1 || i > rows || j < 1 || j > cols {
            return Err(DataError::EntryOutOfRange {
                row: i,
                col: j,
                rows,
                cols,
            });
        }
        let v = if pattern {
            1.0
        } else {
            toks[2].parse::<f64>().map_err(|_| DataError::Parse {
                line: ln,
                msg: format!("cannot parse value '{}'", toks[2]),
            })?
        };
        let (r, c) = (i - 1, j - 1); // to 0-based
        coo.entries.push((r, c, v));
        if symmetric && r != c {
            coo.entries.push((c, r, v));
        }
        seen += 1;
    }
    if seen != declared {
        return Err(DataError::CountMismatch {
            line: last_line,
            declared,
        });
    }
    Ok(coo)
}

/// Re-emit a COO matrix in the same coordinate/real/general dialect the
/// parser accepts (round-trip exact: values print with shortest
/// round-trip formatting).
pub fn write_matrix_market(coo: &CooMatrix) -> String {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    out.push_str(&format!("{} {} {}\n", coo.rows, coo.cols, coo.entries.len()));
    for &(r, c, v) in &coo.entries {
        out.push_str(&format!("{} {} {}\n", r + 1, c + 1, v));
    }
    out
}

/// Compressed sparse row matrix with format-typed values (raw encoded
/// bits) and a declared index width for the SU index streams.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub rows: u32,
    pub cols: u32,
    pub row_ptr: Vec<u32>,
    pub col_idx: Vec<u32>,
    pub index_width: IndexWidth,
    pub format: FloatFormat,
    /// Raw encodings in `format`, one per stored element.
    pub values: Vec<u64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, i: u32) -> std::ops::Range<usize> {
        self.row_ptr[i as usize] as usize..self.row_ptr[i as usize + 1] as usize
    }

    pub fn value_bits(&self, k: usize) -> Bits {
        Bits::new(self.format, self.values[k]).expect("stored raw value fits format")
    }

    pub fn identity(n: u32, format: FloatFormat) -> CsrMatrix {
        let one = minifloat::encode(format, 1.0).raw();
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            index_width: IndexWidth::W32,
            format,
            values: vec![one; n as usize],
        }
    }

    /// Check all structural invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.row_ptr.len() != self.rows as usize + 1 {
            return Err(DataError::InvalidCsr("row_ptr length".into()));
        }
        if self.row_ptr[0] != 0 {
            return Err(DataError::InvalidCsr("row_ptr[0] != 0".into()));
        }
        if *self.row_ptr.last().unwrap() as usize != self.nnz() {
            return Err(DataError::InvalidCsr("row_ptr[rows] != nnz".into()));
        }
        if self.values.len() != self.col_idx.len() {
            return Err(DataError::InvalidCsr("values/col_idx length".into()));
        }
        for w in self.row_ptr.windows(2) {
            if w[1] < w[0] {
                return Err(DataError::InvalidCsr("row_ptr not non-decreasing".into()));
            }
        }
        for i in 0..self.rows {
            let r = self.row_range(i);
            let cols = &self.col_idx[r];
            for w in cols.windows(2) {
                if w[1] <= w[0] {
                    return Err(DataError::InvalidCsr(format!(
                        "col_idx not strictly increasing in row {i}"
                    )));
                }
            }
            if let Some(&c) = cols.last() {
                if c >= self.cols {
                    return Err(DataError::InvalidCsr(format!(
                        "col index {c} out of range in row {i}"
                    )));
                }
            }
        }
        for &c in &self.col_idx {
            if c > self.index_width.max_value() {
                return Err(DataError::IndexOverflow {
                    value: c,
                    bits: self.index_width.bits(),
                });
            }
        }
        Ok(())
    }

    /// The transposed matrix in CSR form (i.e. a CSC view of `self`),
    /// used so sparse-sparse products can stream sorted column index
    /// lists of the right operand.
    pub fn transposed(&self) -> CsrMatrix {
        let mut counts = vec![0u32; self.cols as usize + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0u64; self.nnz()];
        let mut next = row_ptr.clone();
        for i in 0..self.rows {
            for k in self.row_range(i) {
                let c = self.col_idx[k] as usize;
                let slot = next[c] as usize;
                col_idx[slot] = i;
                values[slot] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            index_width: self.index_width,
            format: self.format,
            values,
        }
    }

    /// Value-converted copy (pattern untouched).
    pub fn convert_format(&self, to: FloatFormat) -> CsrMatrix {
        let values = self
            .values
            .iter()
            .map(|&raw| {
                let b = Bits::new(self.format, raw).unwrap();
                minifloat::convert(self.format, to, b).raw()
            })
            .collect();
        CsrMatrix {
            format: to,
            values,
            ..self.clone()
        }
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for k in self.row_range(i) {
                entries.push((i, self.col_idx[k], self.value_bits(k).to_f64()));
            }
        }
        CooMatrix {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }
}

/// Convert canonicalized COO to CSR at the given index width. Values
/// are encoded in `format` (FP64 keeps them bit-exact).
pub fn coo_to_csr(
    coo: &CooMatrix,
    index_width: IndexWidth,
    format: FloatFormat,
) -> Result<CsrMatrix, DataError> {
    let mut coo = coo.clone();
    coo.canonicalize();
    for &(r, c, _) in &coo.entries {
        if r >= coo.rows || c >= coo.cols {
            return Err(DataError::EntryOutOfRange {
                row: r,
                col: c,
                rows: coo.rows,
                cols: coo.cols,
            });
        }
        if c > index_width.max_value() {
            return Err(DataError::IndexOverflow {
                value: c,
                bits: index_width.bits(),
            });
        }
    }
    let mut row_ptr = vec![0u32; coo.rows as usize + 1];
    for &(r, _, _) in &coo.entries {
        row_ptr[r as usize + 1] += 1;
    }
    for i in 1..row_ptr.len() {
        row_ptr[i] += row_ptr[i - 1];
    }
    let col_idx = coo.entries.iter().map(|&(_, c, _)| c).collect();
    let values = coo
        .entries
        .iter()
        .map(|&(_, _, v)| minifloat::encode(format, v).raw())
        .collect();
    let csr = CsrMatrix {
        rows: coo.rows,
        cols: coo.cols,
        row_ptr,
        col_idx,
        index_width,
        format,
        values,
    };
    csr.validate()?;
    Ok(csr)
}

/// Random sparse matrix: each entry present independently with
/// probability `density`, values uniform in (-1, 1) excluding zero.
/// Identical (dims, density, seed) always produce the identical matrix.
pub fn gen_random_sparse(
    rows: u32,
    cols: u32,
    density: f64,
    seed: u64,
) -> Result<CsrMatrix, DataError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(DataError::BadDensity(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row_ptr = vec![0u32];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for _ in 0..rows {
        for c in 0..cols {
            if rng.gen::<f64>() < density {
                col_idx.push(c);
                values.push(minifloat::encode(FloatFormat::Fp64, nonzero_unit(&mut rng)).raw());
            }
        }
        row_ptr.push(col_idx.len() as u32);
    }
    let csr = CsrMatrix {
        rows,
        cols,
        row_ptr,
        col_idx,
        index_width: IndexWidth::W32,
        format: FloatFormat::Fp64,
        values,
    };
    csr.validate().expect("generated CSR is valid");
    Ok(csr)
}

fn nonzero_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v = rng.gen_range(-1.0..1.0);
        if v != 0.0 {
            return v;
        }
    }
}

/// A dense row-major tensor of encoded values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub format: FloatFormat,
    pub dims: Vec<usize>,
    /// Raw encodings in `format`, row-major (last dim fastest).
    pub raw: Vec<u64>,
}

impl DenseTensor {
    pub fn zeros(format: FloatFormat, dims: &[usize]) -> DenseTensor {
        DenseTensor {
            format,
            dims: dims.to_vec(),
            raw: vec![0; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn from_f64s(format: FloatFormat, dims: &[usize], vals: &[f64]) -> DenseTensor {
        assert_eq!(vals.len(), dims.iter().product::<usize>());
        DenseTensor {
            format,
            dims: dims.to_vec(),
            raw: vals.iter().map(|&v| minifloat::encode(format, v).raw()).collect(),
        }
    }

    pub fn get(&self, flat: usize) -> Bits {
        Bits::new(self.format, self.raw[flat]).expect("stored raw value fits format")
    }

    pub fn set(&mut self, flat: usize, v: Bits) {
        assert_eq!(v.format(), self.format);
        self.raw[flat] = v.raw();
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i).to_f64()).collect()
    }

    pub fn convert_format(&self, to: FloatFormat) -> DenseTensor {
        let raw = self
            .raw
            .iter()
            .map(|&r| {
                let b = Bits::new(self.format, r).unwrap();
                minifloat::convert(self.format, to, b).raw()
            })
            .collect();
        DenseTensor {
            format: to,
            dims: self.dims.clone(),
            raw,
        }
    }
}

/// Grid initialization modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridMode {
    Constant(f64),
    Ramp,
    Random { seed: u64 },
}

/// Deterministic dense grid in FP64.
pub fn gen_grid(dims: &[usize], mode: GridMode) -> DenseTensor {
    let n: usize = dims.iter().product();
    let vals: Vec<f64> = match mode {
        GridMode::Constant(c) => vec![c; n],
        GridMode::Ramp => (0..n).map(|i| i as f64).collect(),
        GridMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    };
    DenseTensor::from_f64s(FloatFormat::Fp64, dims, &vals)
}

/// Random dense 2D operand in FP64 (for sparse-dense kernels).
pub fn gen_random_dense(rows: usize, cols: usize, seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..rows * cols).map(|_| nonzero_unit(&mut rng)).collect();
    DenseTensor::from_f64s(FloatFormat::Fp64, &[rows, cols], &vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let coo = parse_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 3.5\n",
        )
        .unwrap();
        assert_eq!((coo.rows, coo.cols), (2, 2));
        assert_eq!(coo.entries, vec![(0, 0, 3.5)]);
    }

    #[test]
    fn symmetric_expansion() {
        let coo = parse_matrix_market(
            "%%MatrixMarket matrix coordinate real symmetric\n% lower triangle\n3 3 2\n2 1 4.0\n3 3 1.0\n",
        )
        .unwrap();
        let mut e = coo.entries.clone();
        e.sort_by_key(|&(r, c, _)| (r, c));
        assert_eq!(e, vec![(0, 1, 4.0), (1, 0, 4.0), (2, 2, 1.0)]);
    }

    #[test]
    fn pattern_values_are_one() {
        let coo =
            parse_matrix_market("%%MatrixMarket matrix coordinate pattern general\n2 3 1\n1 2\n")
                .unwrap();
        assert_eq!(coo.entries, vec![(0, 1, 1.0)]);
    }

    #[test]
    fn unsupported_headers_are_named() {
        let e = parse_matrix_market("%%MatrixMarket matrix array real general\n").unwrap_err();
        assert!(matches!(e, DataError::Unsupported { field: "format", .. }));
        let e = parse_matrix_market("%%MatrixMarket matrix coordinate complex general\n2 2 1\n")
            .unwrap_err();
        assert!(matches!(e, DataError::Unsupported { field: "field", .. }));
        let e = parse_matrix_market("%%MatrixMarket matrix coordinate real hermitian\n2 2 1\n")
            .unwrap_err();
        assert!(matches!(e, DataError::Unsupported { field: "symmetry", .. }));
    }

    #[test]
    fn count_mismatch_reports_line() {
        let e = parse_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n",
        )
        .unwrap_err();
        assert!(matches!(e, DataError::CountMismatch { declared: 2, .. }));
        let e = parse_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1.0\n2 2 2.0\n",
        )
        .unwrap_err();
        assert!(matches!(e, DataError::CountMismatch { line: 4, .. }));
    }

    #[test]
    fn csr_conversion_examples() {
        let empty = CooMatrix {
            rows: 3,
            cols: 3,
            entries: vec![],
        };
        let csr = coo_to_csr(&empty, IndexWidth::W16, FloatFormat::Fp64).unwrap();
        assert_eq!(csr.row_ptr, vec![0, 0, 0, 0]);

        let eye = CooMatrix {
            rows: 3,
            cols: 3,
            entries: vec![(2, 2, 1.0), (0, 0, 1.0), (1, 1, 1.0)],
        };
        let csr = coo_to_csr(&eye, IndexWidth::W8, FloatFormat::Fp64).unwrap();
        assert_eq!(csr.row_ptr, vec![0, 1, 2, 3]);
        assert_eq!(csr.col_idx, vec![0, 1, 2]);

        let wide = CooMatrix {
            rows: 1,
            cols: 300,
            entries: vec![(0, 299, 1.0)],
        };
        assert!(matches!(
            coo_to_csr(&wide, IndexWidth::W8, FloatFormat::Fp64),
            Err(DataError::IndexOverflow { value: 299, bits: 8 })
        ));
    }

    #[test]
    fn duplicates_are_summed() {
        let coo = CooMatrix {
            rows: 2,
            cols: 2,
            entries: vec![(0, 1, 1.5), (0, 1, 2.0)],
        };
        let csr = coo_to_csr(&coo, IndexWidth::W16, FloatFormat::Fp64).unwrap();
        assert_eq!(csr.nnz(), 1);
        assert_eq!(csr.value_bits(0).to_f64(), 3.5);
    }

    #[test]
    fn roundtrip_through_writer() {
        let csr = gen_random_sparse(17, 23, 0.2, 42).unwrap();
        let text = write_matrix_market(&csr.to_coo());
        let back = parse_matrix_market(&text).unwrap();
        let csr2 = coo_to_csr(&back, IndexWidth::W32, FloatFormat::Fp64).unwrap();
        assert_eq!(csr, csr2);
    }

    #[test]
    fn generator_determinism_and_density() {
        let a = gen_random_sparse(100, 100, 0.3, 7).unwrap();
        let b = gen_random_sparse(100, 100, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_random_sparse(100, 100, 0.3, 8).unwrap();
        assert_ne!(a, c);
        let full = gen_random_sparse(10, 10, 1.0, 0).unwrap();
        assert_eq!(full.nnz(), 100);
        // nnz within 5 sigma of Binomial(n, p)
        let n: f64 = 1_000_000.0;
        let p: f64 = 0.01;
        let sigma = (n * p * (1.0 - p)).sqrt();
        let big = gen_random_sparse(1000, 1000, p, 3).unwrap();
        assert!((big.nnz() as f64 - n * p).abs() < 5.0 * sigma);
        assert!(big.values.iter().all(|&v| v != 0));
    }

    #[test]
    fn grids() {
        let z = gen_grid(&[4, 4], GridMode::Constant(0.0));
        assert!(z.raw.iter().all(|&r| r == 0));
        let ramp = gen_grid(&[2, 2], GridMode::Ramp);
        assert_eq!(ramp.to_f64s(), vec![0.0, 1.0, 2.0, 3.0]);
        let r1 = gen_grid(&[3, 3, 3], GridMode::Random { seed: 5 });
        let r2 = gen_grid(&[3, 3, 3], GridMode::Random { seed: 5 });
        assert_eq!(r1, r2);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = gen_random_sparse(20, 31, 0.15, 11).unwrap();
        let t = a.transposed();
        t.validate().unwrap();
        assert_eq!(t.transposed(), a);
    }
}
