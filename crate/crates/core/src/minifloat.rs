//! Software emulation of the worker-core FPU number formats.
//!
//! Six formats share one encoding law (sign / exponent / mantissa, with
//! subnormals, signed zero, infinities and NaN at all-ones exponent).
//! All operations decode to exact scaled integers, combine them exactly,
//! and round once to the destination format (round-to-nearest-even).
//! Fused multi-operand ops (`sdotp_widen`, `add3`) therefore see no
//! intermediate rounding at all.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The FPU's six storage formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FloatFormat {
    Fp64,
    Fp32,
    Fp16,
    Fp16alt,
    Fp8,
    Fp8alt,
}

impl FloatFormat {
    pub const ALL: [FloatFormat; 6] = [
        FloatFormat::Fp64,
        FloatFormat::Fp32,
        FloatFormat::Fp16,
        FloatFormat::Fp16alt,
        FloatFormat::Fp8,
        FloatFormat::Fp8alt,
    ];

    pub const fn exp_bits(self) -> u32 {
        match self {
            FloatFormat::Fp64 => 11,
            FloatFormat::Fp32 => 8,
            FloatFormat::Fp16 => 5,
            FloatFormat::Fp16alt => 8,
            FloatFormat::Fp8 => 5,
            FloatFormat::Fp8alt => 4,
        }
    }

    pub const fn mant_bits(self) -> u32 {
        match self {
            FloatFormat::Fp64 => 52,
            FloatFormat::Fp32 => 23,
            FloatFormat::Fp16 => 10,
            FloatFormat::Fp16alt => 7,
            FloatFormat::Fp8 => 2,
            FloatFormat::Fp8alt => 3,
        }
    }

    pub const fn width(self) -> u32 {
        1 + self.exp_bits() + self.mant_bits()
    }

    pub const fn width_bytes(self) -> u32 {
        self.width() / 8
    }

    pub const fn bias(self) -> i32 {
        (1 << (self.exp_bits() - 1)) - 1
    }

    /// SIMD lanes on the 64-bit datapath.
    pub const fn lanes(self) -> u32 {
        64 / self.width()
    }

    pub fn parse(name: &str) -> Option<FloatFormat> {
        match name.to_ascii_lowercase().as_str() {
            "fp64" => Some(FloatFormat::Fp64),
            "fp32" => Some(FloatFormat::Fp32),
            "fp16" => Some(FloatFormat::Fp16),
            "fp16alt" => Some(FloatFormat::Fp16alt),
            "fp8" => Some(FloatFormat::Fp8),
            "fp8alt" => Some(FloatFormat::Fp8alt),
            _ => None,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            FloatFormat::Fp64 => "fp64",
            FloatFormat::Fp32 => "fp32",
            FloatFormat::Fp16 => "fp16",
            FloatFormat::Fp16alt => "fp16alt",
            FloatFormat::Fp8 => "fp8",
            FloatFormat::Fp8alt => "fp8alt",
        }
    }

    const fn raw_mask(self) -> u64 {
        if self.width() == 64 {
            u64::MAX
        } else {
            (1u64 << self.width()) - 1
        }
    }
}

impl std::fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum MinifloatError {
    #[error("raw value {raw:#x} does not fit in {format} ({width} bits)", width = .format.width())]
    RawOutOfRange { format: FloatFormat, raw: u64 },
    #[error("unsupported widening pair {src} -> {dst}")]
    UnsupportedWidening { src: FloatFormat, dst: FloatFormat },
    #[error("operand format {got} does not match expected {expected}")]
    FormatMismatch {
        expected: FloatFormat,
        got: FloatFormat,
    },
}

/// A raw encoded value in a given format.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bits {
    format: FloatFormat,
    raw: u64,
}

impl Bits {
    pub fn new(format: FloatFormat, raw: u64) -> Result<Bits, MinifloatError> {
        if raw & !format.raw_mask() != 0 {
            return Err(MinifloatError::RawOutOfRange { format, raw });
        }
        Ok(Bits { format, raw })
    }

    pub fn format(self) -> FloatFormat {
        self.format
    }

    pub fn raw(self) -> u64 {
        self.raw
    }

    pub fn zero(format: FloatFormat) -> Bits {
        Bits { format, raw: 0 }
    }

    pub fn infinity(format: FloatFormat, negative: bool) -> Bits {
        let exp_all = ((1u64 << format.exp_bits()) - 1) << format.mant_bits();
        let sign = (negative as u64) << (format.width() - 1);
        Bits {
            format,
            raw: sign | exp_all,
        }
    }

    /// The canonical quiet NaN: positive sign, all-ones exponent,
    /// mantissa MSB set, zero payload.
    pub fn nan(format: FloatFormat) -> Bits {
        let exp_all = ((1u64 << format.exp_bits()) - 1) << format.mant_bits();
        Bits {
            format,
            raw: exp_all | (1u64 << (format.mant_bits() - 1)),
        }
    }

    pub fn max_finite(format: FloatFormat) -> Bits {
        let exp = ((1u64 << format.exp_bits()) - 2) << format.mant_bits();
        let mant = (1u64 << format.mant_bits()) - 1;
        Bits {
            format,
            raw: exp | mant,
        }
    }

    pub fn is_nan(self) -> bool {
        matches!(decode(self), Decoded::Nan)
    }

    pub fn to_f64(self) -> f64 {
        decoded_to_f64(decode(self))
    }
}

impl std::fmt::Debug for Bits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let digits = (self.format.width() as usize + 3) / 4;
        write!(
            f,
            "{}:{raw:0>digits$x} ({})",
            self.format,
            self.to_f64(),
            raw = self.raw,
            digits = digits
        )
    }
}

/// Exact value classes of an encoding.
///
/// A finite value is `(-1)^neg * mant * 2^exp` with `mant` the integer
/// significand (hidden bit included for normals).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoded {
    Nan,
    Inf { neg: bool },
    Zero { neg: bool },
    Finite { neg: bool, mant: u64, exp: i32 },
}

/// Decode raw bits into the exact value they represent. Total function.
pub fn decode(bits: Bits) -> Decoded {
    let fmt = bits.format;
    let mb = fmt.mant_bits();
    let eb = fmt.exp_bits();
    let raw = bits.raw;
    let neg = (raw >> (fmt.width() - 1)) & 1 == 1;
    let exp_field = (raw >> mb) & ((1u64 << eb) - 1);
    let mant_field = raw & ((1u64 << mb) - 1);
    let exp_all = (1u64 << eb) - 1;
    if exp_field == exp_all {
        if mant_field == 0 {
            Decoded::Inf { neg }
        } else {
            Decoded::Nan
        }
    } else if exp_field == 0 {
        if mant_field == 0 {
            Decoded::Zero { neg }
        } else {
            // subnormal: mant * 2^(1 - bias - mant_bits)
            Decoded::Finite {
                neg,
                mant: mant_field,
                exp: 1 - fmt.bias() - mb as i32,
            }
        }
    } else {
        Decoded::Finite {
            neg,
            mant: mant_field | (1u64 << mb),
            exp: exp_field as i32 - fmt.bias() - mb as i32,
        }
    }
}

fn exp2i(e: i32) -> f64 {
    // 2^e for the full f64 range, including subnormal results.
    match 0x3ff + e {
        s if s >= 0x7ff => f64::INFINITY,
        s if s >= 1 => f64::from_bits((s as u64) << 52),
        s if s >= -51 => f64::from_bits(1u64 << (51 + s)),
        _ => 0.0,
    }
}

fn decoded_to_f64(d: Decoded) -> f64 {
    match d {
        Decoded::Nan => f64::NAN,
        Decoded::Inf { neg } => {
            if neg {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        }
        Decoded::Zero { neg } => {
            if neg {
                -0.0
            } else {
                0.0
            }
        }
        // Exact: every finite value of every supported format fits in f64.
        Decoded::Finite { neg, mant, exp } => {
            let v = mant as f64 * exp2i(exp);
            if neg {
                -v
            } else {
                v
            }
        }
    }
}

/// Encode a real value (carried as f64, itself a dyadic rational) into
/// `format` with round-to-nearest-even. Overflow rounds to infinity.
pub fn encode(format: FloatFormat, x: f64) -> Bits {
    if x.is_nan() {
        return Bits::nan(format);
    }
    if x.is_infinite() {
        return Bits::infinity(format, x.is_sign_negative());
    }
    if x == 0.0 {
        let sign = (x.is_sign_negative() as u64) << (format.width() - 1);
        return Bits { format, raw: sign };
    }
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    let mant_field = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if exp_field == 0 {
        (mant_field, 1 - 1023 - 52)
    } else {
        (mant_field | (1u64 << 52), exp_field - 1023 - 52)
    };
    round_to_format(neg, &BigUint::from(mant), exp as i64, format)
}

/// Round the exact nonzero value `(-1)^neg * mag * 2^exp` to `format`
/// with round-to-nearest-even; overflow goes to infinity, underflow to
/// signed zero.
fn round_to_format(neg: bool, mag: &BigUint, exp: i64, format: FloatFormat) -> Bits {
    debug_assert!(!mag.is_zero());
    let mb = format.mant_bits() as i64;
    let bias = format.bias() as i64;
    let emin = 1 - bias; // lowest normal exponent
    let emax = bias;

    let top = exp + mag.bits() as i64 - 1; // value in [2^top, 2^(top+1))
    // Position of the result's units-of-last-place exponent.
    let q = if top < emin { emin - mb } else { top - mb };
    let shift = q - exp;
    let mut sig = if shift <= 0 {
        mag << (-shift) as u64
    } else {
        rne_shift(mag, shift as u64)
    };
    let mut top = top;
    if top >= emin && sig.bits() as i64 > mb + 1 {
        // rounding carried into the next binade
        sig >>= 1u32;
        top += 1;
    }
    let sign = (neg as u64) << (format.width() - 1);
    if top < emin {
        // subnormal result (possibly rounded up into the lowest normal)
        let sig: u64 = sig.try_into().expect("subnormal significand fits u64");
        if sig == 0 {
            return Bits { format, raw: sign };
        }
        // sig == 2^mant_bits lands exactly on the min normal encoding
        return Bits {
            format,
            raw: sign | sig,
        };
    }
    if top > emax {
        return Bits::infinity(format, neg);
    }
    let sig: u64 = sig.try_into().expect("significand fits u64");
    let mant_field = sig & ((1u64 << mb) - 1);
    let exp_field = (top + bias) as u64;
    Bits {
        format,
        raw: sign | (exp_field << mb) | mant_field,
    }
}

/// Shift right by `s` with round-to-nearest-even on the discarded bits.
fn rne_shift(mag: &BigUint, s: u64) -> BigUint {
    let q = mag >> s;
    let rem = mag - (&q << s);
    let half = BigUint::one() << (s - 1);
    match rem.cmp(&half) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1u32,
        std::cmp::Ordering::Equal => {
            if q.bit(0) {
                q + 1u32
            } else {
                q
            }
        }
    }
}

/// One exact addend of a fused sum.
#[derive(Clone, Debug)]
enum Term {
    Zero { neg: bool },
    Val { neg: bool, mag: BigUint, exp: i64 },
}

impl Term {
    fn from_decoded(d: Decoded) -> Term {
        match d {
            Decoded::Zero { neg } => Term::Zero { neg },
            Decoded::Finite { neg, mant, exp } => Term::Val {
                neg,
                mag: BigUint::from(mant),
                exp: exp as i64,
            },
            _ => unreachable!("specials are handled before exact summation"),
        }
    }

    fn product(a: Decoded, b: Decoded) -> Term {
        let (na, nb) = (sign_of(a), sign_of(b));
        match (a, b) {
            (
                Decoded::Finite {
                    mant: ma, exp: ea, ..
                },
                Decoded::Finite {
                    mant: mb, exp: eb, ..
                },
            ) => Term::Val {
                neg: na ^ nb,
                mag: BigUint::from(ma) * BigUint::from(mb),
                exp: ea as i64 + eb as i64,
            },
            _ => Term::Zero { neg: na ^ nb },
        }
    }
}

fn sign_of(d: Decoded) -> bool {
    match d {
        Decoded::Nan => false,
        Decoded::Inf { neg } | Decoded::Zero { neg } | Decoded::Finite { neg, .. } => neg,
    }
}

/// Exactly sum finite terms and round once.
///
/// Zero-sign rules: an all-zero addend list yields -0 only if every
/// addend is -0; exact cancellation of nonzero terms yields +0.
fn sum_and_round(terms: &[Term], format: FloatFormat) -> Bits {
    let vals: Vec<&Term> = terms
        .iter()
        .filter(|t| matches!(t, Term::Val { .. }))
        .collect();
    if vals.is_empty() {
        let all_neg = terms.iter().all(|t| match t {
            Term::Zero { neg } => *neg,
            Term::Val { .. } => unreachable!(),
        });
        let sign = (all_neg as u64) << (format.width() - 1);
        return Bits { format, raw: sign };
    }
    let emin = vals
        .iter()
        .map(|t| match t {
            Term::Val { exp, .. } => *exp,
            Term::Zero { .. } => unreachable!(),
        })
        .min()
        .unwrap();
    let mut acc = BigInt::zero();
    for t in &vals {
        if let Term::Val { neg, mag, exp } = t {
            let aligned = BigInt::from(mag.clone()) << (exp - emin) as u64;
            if *neg {
                acc -= aligned;
            } else {
                acc += aligned;
            }
        }
    }
    if acc.is_zero() {
        return Bits::zero(format); // exact cancellation: +0
    }
    let neg = acc.sign() == Sign::Minus;
    round_to_format(neg, acc.magnitude(), emin, format)
}

fn check_format(expected: FloatFormat, b: Bits) -> Result<(), MinifloatError> {
    if b.format != expected {
        return Err(MinifloatError::FormatMismatch {
            expected,
            got: b.format,
        });
    }
    Ok(())
}

/// Fused multiply-add: `round(a*b + c)` with a single rounding.
pub fn fma(format: FloatFormat, a: Bits, b: Bits, c: Bits) -> Bits {
    assert!(
        a.format == format && b.format == format && c.format == format,
        "fma operands must all be {format}"
    );
    let (da, db, dc) = (decode(a), decode(b), decode(c));
    if matches!(da, Decoded::Nan) || matches!(db, Decoded::Nan) || matches!(dc, Decoded::Nan) {
        return Bits::nan(format);
    }
    fused_product_sum(&[(da, db)], dc, format)
}

/// Three-addend summation: `round(a + b + c)`, single rounding of the
/// exact sum. Commutative under all operand permutations.
pub fn add3(format: FloatFormat, a: Bits, b: Bits, c: Bits) -> Bits {
    assert!(
        a.format == format && b.format == format && c.format == format,
        "add3 operands must all be {format}"
    );
    let ds = [decode(a), decode(b), decode(c)];
    if ds.iter().any(|d| matches!(d, Decoded::Nan)) {
        return Bits::nan(format);
    }
    let mut inf_sign: Option<bool> = None;
    for d in &ds {
        if let Decoded::Inf { neg } = d {
            match inf_sign {
                Some(s) if s != *neg => return Bits::nan(format),
                _ => inf_sign = Some(*neg),
            }
        }
    }
    if let Some(neg) = inf_sign {
        return Bits::infinity(format, neg);
    }
    let terms: Vec<Term> = ds.iter().map(|d| Term::from_decoded(*d)).collect();
    sum_and_round(&terms, format)
}

/// Widening sum-dot-product: `round(a*b + c*d + acc)` where the four
/// multiplicands are in `src` and the accumulator/result in `dst`,
/// a format of exactly twice the width. Products and the three-way sum
/// are exact; one rounding at the end.
pub fn sdotp_widen(
    src: FloatFormat,
    dst: FloatFormat,
    a: Bits,
    b: Bits,
    c: Bits,
    d: Bits,
    acc: Bits,
) -> Result<Bits, MinifloatError> {
    if dst.width() != 2 * src.width() || src.width() > 16 {
        return Err(MinifloatError::UnsupportedWidening { src, dst });
    }
    for x in [a, b, c, d] {
        check_format(src, x)?;
    }
    check_format(dst, acc)?;
    let (da, db) = (decode(a), decode(b));
    let (dc, dd) = (decode(c), decode(d));
    let dacc = decode(acc);
    if [da, db, dc, dd, dacc]
        .iter()
        .any(|x| matches!(x, Decoded::Nan))
    {
        return Ok(Bits::nan(dst));
    }
    Ok(fused_product_sum(&[(da, db), (dc, dd)], dacc, dst))
}

/// Shared special-case resolution and exact evaluation for
/// `sum(products) + addend`. Inputs must be NaN-free.
fn fused_product_sum(products: &[(Decoded, Decoded)], addend: Decoded, dst: FloatFormat) -> Bits {
    let mut inf_sign: Option<bool> = None;
    let mut note_inf = |neg: bool| -> bool {
        match inf_sign {
            Some(s) if s != neg => true, // conflicting infinities
            _ => {
                inf_sign = Some(neg);
                false
            }
        }
    };
    for (x, y) in products {
        let inf_zero = (matches!(x, Decoded::Inf { .. }) && matches!(y, Decoded::Zero { .. }))
            || (matches!(x, Decoded::Zero { .. }) && matches!(y, Decoded::Inf { .. }));
        if inf_zero {
            return Bits::nan(dst);
        }
        if matches!(x, Decoded::Inf { .. }) || matches!(y, Decoded::Inf { .. }) {
            if note_inf(sign_of(*x) ^ sign_of(*y)) {
                return Bits::nan(dst);
            }
        }
    }
    if let Decoded::Inf { neg } = addend {
        if note_inf(neg) {
            return Bits::nan(dst);
        }
    }
    if let Some(neg) = inf_sign {
        return Bits::infinity(dst, neg);
    }
    let mut terms: Vec<Term> = products
        .iter()
        .map(|(x, y)| Term::product(*x, *y))
        .collect();
    terms.push(Term::from_decoded(addend));
    sum_and_round(&terms, dst)
}

/// Format conversion: value-preserving when exactly representable in
/// `to`, otherwise round-to-nearest-even.
pub fn convert(from: FloatFormat, to: FloatFormat, x: Bits) -> Bits {
    assert!(x.format == from, "convert operand must be {from}");
    match decode(x) {
        Decoded::Nan => Bits::nan(to),
        Decoded::Inf { neg } => Bits::infinity(to, neg),
        Decoded::Zero { neg } => {
            let sign = (neg as u64) << (to.width() - 1);
            Bits { format: to, raw: sign }
        }
        Decoded::Finite { neg, mant, exp } => {
            round_to_format(neg, &BigUint::from(mant), exp as i64, to)
        }
    }
}

/// A full 64-bit SIMD register: `64 / width` lanes of one format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimdVector {
    format: FloatFormat,
    lanes: Vec<Bits>,
}

impl SimdVector {
    pub fn new(format: FloatFormat, lanes: Vec<Bits>) -> Result<SimdVector, MinifloatError> {
        if lanes.len() != format.lanes() as usize {
            return Err(MinifloatError::RawOutOfRange {
                format,
                raw: lanes.len() as u64,
            });
        }
        for l in &lanes {
            check_format(format, *l)?;
        }
        Ok(SimdVector { format, lanes })
    }

    pub fn splat(format: FloatFormat, value: Bits) -> SimdVector {
        assert_eq!(value.format, format);
        SimdVector {
            format,
            lanes: vec![value; format.lanes() as usize],
        }
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn lanes(&self) -> &[Bits] {
        &self.lanes
    }

    /// Lane-wise FMA across three SIMD registers.
    pub fn fma(&self, b: &SimdVector, c: &SimdVector) -> SimdVector {
        assert!(self.format == b.format && self.format == c.format);
        let lanes = self
            .lanes
            .iter()
            .zip(&b.lanes)
            .zip(&c.lanes)
            .map(|((&x, &y), &z)| fma(self.format, x, y, z))
            .collect();
        SimdVector {
            format: self.format,
            lanes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FloatFormat::*;

    fn enc(fmt: FloatFormat, x: f64) -> Bits {
        encode(fmt, x)
    }

    #[test]
    fn format_invariants() {
        for fmt in FloatFormat::ALL {
            assert_eq!(1 + fmt.exp_bits() + fmt.mant_bits(), fmt.width());
            assert!(matches!(fmt.width(), 8 | 16 | 32 | 64));
            assert_eq!(fmt.bias(), (1 << (fmt.exp_bits() - 1)) - 1);
            assert!(matches!(fmt.lanes(), 1 | 2 | 4 | 8));
        }
        assert_eq!((Fp16alt.exp_bits(), Fp16alt.mant_bits()), (8, 7));
        assert_eq!((Fp8alt.exp_bits(), Fp8alt.mant_bits()), (4, 3));
    }

    #[test]
    fn decode_examples() {
        // fp8alt 0x38: exponent field = bias, zero mantissa -> 1.0
        assert_eq!(Bits::new(Fp8alt, 0x38).unwrap().to_f64(), 1.0);
        assert_eq!(Bits::new(Fp64, 0).unwrap().to_f64(), 0.0);
        assert!(!Bits::new(Fp64, 0).unwrap().to_f64().is_sign_negative());
        // fp8 0x7c: all-ones exponent, zero mantissa -> +inf
        assert_eq!(Bits::new(Fp8, 0x7c).unwrap().to_f64(), f64::INFINITY);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(enc(Fp16alt, 1.0).raw(), 0x3f80); // bfloat16 layout
        // 17 is midway between 16 and 18 in fp8alt; RNE picks the even mantissa
        assert_eq!(enc(Fp8alt, 17.0), enc(Fp8alt, 16.0));
        assert_eq!(enc(Fp8alt, 17.0).to_f64(), 16.0);
        for fmt in FloatFormat::ALL {
            assert_eq!(enc(fmt, 0.0).raw(), 0);
        }
    }

    #[test]
    fn encode_decode_roundtrip_is_identity() {
        // decode(encode(x)) == x for exactly representable x
        for raw in 0..=u8::MAX {
            for fmt in [Fp8, Fp8alt] {
                let b = Bits::new(fmt, raw as u64).unwrap();
                let v = b.to_f64();
                if v.is_nan() {
                    assert_eq!(encode(fmt, v), Bits::nan(fmt));
                } else {
                    assert_eq!(encode(fmt, v), b, "{fmt} {raw:#x}");
                }
            }
        }
    }

    #[test]
    fn fma_examples() {
        let r = fma(Fp64, enc(Fp64, 1.5), enc(Fp64, 2.0), enc(Fp64, 0.25));
        assert_eq!(r.to_f64(), 3.25);
        // adding 1 below the representable step rounds back to max finite
        let max = Bits::max_finite(Fp8alt);
        let one = enc(Fp8alt, 1.0);
        assert_eq!(fma(Fp8alt, one, one, max), max);
        assert_eq!(max.to_f64(), 240.0);
    }

    #[test]
    fn fma_special_cases() {
        let inf = Bits::infinity(Fp16, false);
        let ninf = Bits::infinity(Fp16, true);
        let zero = Bits::zero(Fp16);
        let one = enc(Fp16, 1.0);
        assert!(fma(Fp16, inf, zero, one).is_nan());
        assert!(fma(Fp16, one, inf, ninf).is_nan());
        assert_eq!(fma(Fp16, inf, one, one), inf);
        assert_eq!(fma(Fp16, one, one, ninf), ninf);
        assert_eq!(fma(Fp16, Bits::nan(Fp16), one, one), Bits::nan(Fp16));
    }

    #[test]
    fn fma_matches_native_f64() {
        // f64 mul_add is a correctly-rounded fused multiply-add, so the
        // fp64 path must agree with it bit for bit.
        let cases = [
            (1.5, 2.0, 0.25),
            (1e300, 1e300, -1e300),
            (3.5e-310, 0.5, 1e-320),
            (1.0 + f64::EPSILON, 1.0 - f64::EPSILON, -1.0),
            (-7.25, 0.1, 2.0e17),
        ];
        for (a, b, c) in cases {
            let r = fma(Fp64, enc(Fp64, a), enc(Fp64, b), enc(Fp64, c));
            assert_eq!(r.to_f64().to_bits(), a.mul_add(b, c).to_bits(), "{a} {b} {c}");
        }
    }

    #[test]
    fn add3_examples() {
        let r = add3(Fp16, enc(Fp16, 1.0), enc(Fp16, 2.0), enc(Fp16, 3.0));
        assert_eq!(r.to_f64(), 6.0);
        // exact cancellation
        for (x, y) in [(13.0, 0.5), (1e4, -240.0), (3.0e-5, 7.0)] {
            let r = add3(Fp8, enc(Fp8, x), enc(Fp8, -x), enc(Fp8, y));
            assert_eq!(r, enc(Fp8, y));
        }
    }

    #[test]
    fn add3_zero_sign_rules() {
        let pz = Bits::zero(Fp32);
        let nz = enc(Fp32, -0.0);
        assert_eq!(add3(Fp32, nz, nz, nz).to_f64().to_bits(), (-0.0f64).to_bits());
        assert_eq!(add3(Fp32, nz, nz, pz).to_f64().to_bits(), 0.0f64.to_bits());
        let one = enc(Fp32, 1.0);
        let none = enc(Fp32, -1.0);
        assert_eq!(add3(Fp32, one, none, pz).to_f64().to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn sdotp_examples() {
        let r = sdotp_widen(
            Fp8,
            Fp16,
            enc(Fp8, 1.5),
            enc(Fp8, 2.0),
            enc(Fp8, 0.5),
            enc(Fp8, 4.0),
            enc(Fp16, 1.0),
        )
        .unwrap();
        assert_eq!(r.to_f64(), 6.0);
        // all-zero products leave the accumulator untouched
        let z = Bits::zero(Fp16alt);
        let acc = enc(Fp32, 0.8125);
        let r = sdotp_widen(Fp16alt, Fp32, z, z, z, z, acc).unwrap();
        assert_eq!(r, acc);
    }

    #[test]
    fn sdotp_rejects_bad_pairs() {
        let z8 = Bits::zero(Fp8);
        let z64 = Bits::zero(Fp64);
        let z32 = Bits::zero(Fp32);
        assert!(matches!(
            sdotp_widen(Fp8, Fp32, z8, z8, z8, z8, z32),
            Err(MinifloatError::UnsupportedWidening { .. })
        ));
        let z32v = Bits::zero(Fp32);
        assert!(matches!(
            sdotp_widen(Fp32, Fp64, z32v, z32v, z32v, z32v, z64),
            Err(MinifloatError::UnsupportedWidening { .. })
        ));
    }

    #[test]
    fn sdotp_with_zero_second_product_is_widening_fma() {
        for (src, dst) in [(Fp8, Fp16), (Fp8alt, Fp16), (Fp16, Fp32), (Fp16alt, Fp32)] {
            for (a, b, acc) in [(1.5, -2.0, 0.25), (240.0, 0.5, -3.0), (0.015625, 0.75, 100.0)] {
                let z = Bits::zero(src);
                let got = sdotp_widen(src, dst, enc(src, a), enc(src, b), z, z, enc(dst, acc))
                    .unwrap();
                // widening fma computed directly in dst
                let want = fma(
                    dst,
                    convert(src, dst, enc(src, a)),
                    convert(src, dst, enc(src, b)),
                    enc(dst, acc),
                );
                assert_eq!(got, want, "{src}->{dst} {a} {b} {acc}");
            }
        }
    }

    #[test]
    fn convert_examples() {
        assert_eq!(convert(Fp8, Fp64, enc(Fp8, 1.5)).to_f64(), 1.5);
        let x = enc(Fp64, 1.0 + (2.0f64).powi(-10));
        assert_eq!(convert(Fp64, Fp8, x), enc(Fp8, 1.0));
    }

    #[test]
    fn fp16alt_fp32_roundtrip_identity() {
        for raw in 0..=u16::MAX {
            let b = Bits::new(Fp16alt, raw as u64).unwrap();
            let wide = convert(Fp16alt, Fp32, b);
            let back = convert(Fp32, Fp16alt, wide);
            if b.is_nan() {
                assert!(back.is_nan());
            } else {
                assert_eq!(back, b, "raw {raw:#x}");
            }
        }
    }

    #[test]
    fn widening_conversions_are_value_exact() {
        for (narrow, wide) in [
            (Fp8, Fp16),
            (Fp8alt, Fp16),
            (Fp8, Fp16alt),
            (Fp8alt, Fp16alt),
            (Fp16, Fp32),
            (Fp16alt, Fp32),
        ] {
            for raw in 0..(1u64 << narrow.width()) {
                let b = Bits::new(narrow, raw).unwrap();
                let w = convert(narrow, wide, b);
                if b.is_nan() {
                    assert!(w.is_nan());
                } else {
                    assert_eq!(w.to_f64().to_bits(), b.to_f64().to_bits());
                }
            }
        }
    }

    #[test]
    fn fma_identity_properties() {
        for fmt in FloatFormat::ALL {
            let one = enc(fmt, 1.0);
            let zero = Bits::zero(fmt);
            for v in [0.75, -2.5, 1.0, 0.0] {
                let x = enc(fmt, v);
                assert_eq!(fma(fmt, one, x, zero), x);
            }
        }
    }

    #[test]
    fn add3_is_permutation_invariant() {
        let vals = [1.0, -0.0078125, 3.0e4, -1.5e-3];
        let fmt = Fp16;
        for a in vals {
            for b in vals {
                for c in vals {
                    let (ba, bb, bc) = (enc(fmt, a), enc(fmt, b), enc(fmt, c));
                    let r = add3(fmt, ba, bb, bc);
                    assert_eq!(r, add3(fmt, ba, bc, bb));
                    assert_eq!(r, add3(fmt, bb, ba, bc));
                    assert_eq!(r, add3(fmt, bc, bb, ba));
                    assert_eq!(r, add3(fmt, bc, ba, bb));
                    assert_eq!(r, add3(fmt, bb, bc, ba));
                }
            }
        }
    }

    #[test]
    fn subnormals_are_preserved() {
        // smallest subnormal of each format survives a widen/narrow cycle
        for fmt in [Fp8, Fp8alt, Fp16, Fp16alt, Fp32] {
            let tiny = Bits::new(fmt, 1).unwrap();
            let v = tiny.to_f64();
            assert!(v > 0.0);
            assert_eq!(encode(fmt, v), tiny);
        }
    }

    #[test]
    fn nan_is_canonicalized() {
        for fmt in FloatFormat::ALL {
            let payload_nan = Bits::new(
                fmt,
                Bits::nan(fmt).raw() | 1, // extra payload bit
            )
            .unwrap();
            let one = enc(fmt, 1.0);
            assert_eq!(fma(fmt, payload_nan, one, one), Bits::nan(fmt));
            assert_eq!(add3(fmt, payload_nan, one, one), Bits::nan(fmt));
            assert_eq!(convert(fmt, Fp64, payload_nan), Bits::nan(Fp64));
        }
    }

    #[test]
    fn simd_vector_lane_counts() {
        for fmt in FloatFormat::ALL {
            let v = SimdVector::splat(fmt, Bits::zero(fmt));
            assert_eq!(v.lanes().len() as u32 * fmt.width(), 64);
        }
        let bad = vec![Bits::zero(Fp16); 3];
        assert!(SimdVector::new(Fp16, bad).is_err());
    }
}
