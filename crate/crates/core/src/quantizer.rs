//! Error-bounded quantization and the negabinary code mapping.

use crate::error::{Error, Result};

/// Largest code magnitude stored as a code; anything beyond is an outlier.
pub const CODE_LIMIT: i64 = 1 << 30;

const NEGABINARY_MASK: u32 = 0xAAAA_AAAA;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantized {
    Code(i32),
    Outlier,
}

/// Bins `y` into width-`2 eb` buckets centred on multiples of `2 eb`,
/// rounding half away from zero.
pub fn quantize(y: f64, eb: f64) -> Quantized {
    if !y.is_finite() {
        return Quantized::Outlier;
    }
    let q = (y / (2.0 * eb)).round();
    if !q.is_finite() || q.abs() > CODE_LIMIT as f64 {
        return Quantized::Outlier;
    }
    Quantized::Code(q as i32)
}

#[inline]
pub fn dequantize(q: i64, eb: f64) -> f64 {
    2.0 * eb * q as f64
}

/// Base −2 digits of `q`, least significant digit in bit 0.
pub fn to_negabinary(q: i32) -> Result<u32> {
    if (q as i64).abs() > CODE_LIMIT {
        return Err(Error::CodeOutOfRange(q as i64));
    }
    Ok((q as u32).wrapping_add(NEGABINARY_MASK) ^ NEGABINARY_MASK)
}

/// Evaluates the base −2 digits of `codeword`.
///
/// The full 32-digit range is wider than `i32`, hence the `i64` result.
pub fn from_negabinary(codeword: u32) -> i64 {
    (codeword ^ NEGABINARY_MASK) as i64 - NEGABINARY_MASK as i64
}

/// Largest magnitude of the value carried by the `d` least significant
/// negabinary digits, in code units.
pub fn suffix_uncertainty(d: u32) -> Result<f64> {
    if d > 32 {
        return Err(Error::DigitCountOutOfRange(d));
    }
    if d == 0 {
        return Ok(0.0);
    }
    let p = 2f64.powi(d as i32);
    Ok(if d % 2 == 1 {
        2.0 / 3.0 * p - 1.0 / 3.0
    } else {
        2.0 / 3.0 * p - 2.0 / 3.0
    })
}

/// Quantization codes of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLevel {
    pub level: u32,
    /// One code per point of the level in traversal order; 0 at outliers.
    pub codes: Vec<i32>,
    /// `(ordinal, exact value)` for points that could not be coded.
    pub outliers: Vec<(u64, f64)>,
    pub eb: f64,
}

impl QuantizedLevel {
    pub fn negabinary_codes(&self) -> Vec<u32> {
        self.codes
            .iter()
            .map(|&q| to_negabinary(q).expect("codes are range-checked at quantization"))
            .collect()
    }

    pub fn outlier_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.codes.len()];
        for &(o, _) in &self.outliers {
            mask[o as usize] = true;
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Digit-by-digit evaluation, independent of the mask identity.
    fn eval_digits(c: u32) -> i64 {
        (0..32)
            .filter(|k| c >> k & 1 == 1)
            .map(|k| (-2i64).pow(k))
            .sum()
    }

    /// Repeated division by −2.
    fn digits_by_division(mut q: i64) -> u32 {
        let mut out = 0u32;
        let mut k = 0;
        while q != 0 {
            let r = q.rem_euclid(2);
            out |= (r as u32) << k;
            q = (q - r) / -2;
            k += 1;
        }
        out
    }

    fn brute_uncertainty(d: u32) -> f64 {
        (0u64..1 << d)
            .map(|s| {
                (0..d)
                    .filter(|k| s >> k & 1 == 1)
                    .map(|k| (-2i64).pow(k))
                    .sum::<i64>()
                    .abs()
            })
            .max()
            .unwrap_or(0) as f64
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, 0.5), Quantized::Code(0));
        assert_eq!(quantize(1.3, 0.5), Quantized::Code(1));
        assert_eq!(dequantize(1, 0.5), 1.0);
        assert!((1.3 - dequantize(1, 0.5)).abs() <= 0.5);
        assert_eq!(quantize(2f64.powi(40), 1e-9), Quantized::Outlier);
        assert_eq!(quantize(f64::NAN, 1.0), Quantized::Outlier);
        assert_eq!(quantize(f64::INFINITY, 1.0), Quantized::Outlier);
        // ties go away from zero
        assert_eq!(quantize(1.0, 1.0), Quantized::Code(1));
        assert_eq!(quantize(-1.0, 1.0), Quantized::Code(-1));
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(0, 0.3), 0.0);
        assert_eq!(dequantize(1, 0.5), 1.0);
        assert_eq!(dequantize(-3, 0.25), -1.5);
    }

    #[test]
    fn negabinary_examples() {
        assert_eq!(to_negabinary(1).unwrap(), 0b01);
        assert_eq!(to_negabinary(-1).unwrap(), 0b11);
        assert_eq!(to_negabinary(2).unwrap(), 0b110);
        assert_eq!(from_negabinary(0), 0);
        assert_eq!(from_negabinary(0b110), 2);
        assert!(to_negabinary(i32::MAX).is_err());
        assert!(to_negabinary(-(1 << 30) - 1).is_err());
        for q in [1, -1, 1 << 30, -(1 << 30)] {
            let c = to_negabinary(q).unwrap();
            assert_eq!(from_negabinary(c), q as i64);
            assert_eq!(eval_digits(c), q as i64);
            assert_eq!(digits_by_division(q as i64), c);
        }
    }

    #[test]
    fn negabinary_powers_of_two() {
        for k in 0..=30 {
            for q in [1i32 << k, -(1i32 << k)] {
                let c = to_negabinary(q).unwrap();
                assert_eq!(from_negabinary(c), q as i64);
                assert_eq!(digits_by_division(q as i64), c);
            }
        }
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(suffix_uncertainty(0).unwrap(), 0.0);
        assert_eq!(suffix_uncertainty(1).unwrap(), 1.0);
        assert_eq!(suffix_uncertainty(2).unwrap(), 2.0);
        assert!(suffix_uncertainty(33).is_err());
    }

    #[test]
    fn uncertainty_matches_enumeration() {
        for d in 0..=14 {
            assert_eq!(suffix_uncertainty(d).unwrap(), brute_uncertainty(d), "d={d}");
        }
    }

    #[test]
    fn uncertainty_below_sign_magnitude() {
        for d in 1..=32 {
            let sm = 2f64.powi(d as i32) - 1.0;
            assert!(suffix_uncertainty(d).unwrap() <= sm);
        }
    }

    #[test]
    fn outlier_mask_marks_ordinals() {
        let level = QuantizedLevel {
            level: 1,
            codes: vec![0, 3, 0, -2],
            outliers: vec![(0, 1e30), (2, f64::NAN)],
            eb: 0.1,
        };
        assert_eq!(level.outlier_mask(), vec![true, false, true, false]);
        assert_eq!(level.negabinary_codes()[1], to_negabinary(3).unwrap());
    }

    proptest! {
        #[test]
        fn negabinary_round_trip(q in -(1i32 << 30)..=(1i32 << 30)) {
            let c = to_negabinary(q).unwrap();
            prop_assert_eq!(from_negabinary(c), q as i64);
            prop_assert_eq!(eval_digits(c), q as i64);
        }

        #[test]
        fn quantization_error_within_bound(y in -1e6f64..1e6, eb in 1e-4f64..10.0) {
            if let Quantized::Code(q) = quantize(y, eb) {
                prop_assert!((y - dequantize(q as i64, eb)).abs() <= eb * (1.0 + 1e-12));
            }
        }
    }
}
