use serde::{Deserialize, Serialize};

use super::CrossbarError;

/// Integer tensor with a linear dequantization rule
/// `real = (value - zero_point) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub dims: Vec<usize>,
    pub values: Vec<i64>,
    pub scale: f64,
    pub zero_point: i64,
    /// Declared two's-complement width of `values`.
    pub bits: u32,
}

impl QuantizedTensor {
    /// Wraps raw integers, checking that each one fits `bits`.
    pub fn from_ints(
        dims: Vec<usize>,
        values: Vec<i64>,
        scale: f64,
        bits: u32,
    ) -> Result<Self, CrossbarError> {
        if !(2..=62).contains(&bits) {
            return Err(CrossbarError::InvalidBits { bits, min: 2, max: 62 });
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(CrossbarError::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        let (min, max) = signed_range(bits);
        if let Some(&v) = values.iter().find(|&&v| v < min || v > max) {
            return Err(CrossbarError::OutOfRange { value: v, min, max });
        }
        Ok(Self {
            dims,
            values,
            scale,
            zero_point: 0,
            bits,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| (v - self.zero_point) as f64 * self.scale)
            .collect()
    }

    /// Row-major 2-D shape, if this is a matrix.
    pub fn matrix_shape(&self) -> Result<(usize, usize), CrossbarError> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(CrossbarError::NotAMatrix(self.dims.clone())),
        }
    }

    /// Transposed copy of a 2-D tensor.
    pub fn transposed(&self) -> Result<Self, CrossbarError> {
        let (rows, cols) = self.matrix_shape()?;
        let mut values = vec![0; self.values.len()];
        for r in 0..rows {
            for c in 0..cols {
                values[c * rows + r] = self.values[r * cols + c];
            }
        }
        Ok(Self {
            dims: vec![cols, rows],
            values,
            ..self.clone()
        })
    }
}

pub(crate) fn signed_range(bits: u32) -> (i64, i64) {
    (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
}

/// Symmetric linear quantization to `bits`-bit signed integers.
///
/// The scale maps the largest magnitude onto `2^(bits-1) - 1`; an all-zero
/// tensor gets scale 1.
pub fn quantize(values: &[f64], dims: &[usize], bits: u32) -> Result<QuantizedTensor, CrossbarError> {
    check_bits(bits)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CrossbarError::NonFinite(i));
    }
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak == 0.0 { 1.0 } else { peak / qmax };
    quantize_with_scale(values, dims, bits, scale)
}

/// Quantizes with a caller-chosen scale, saturating at the symmetric range.
pub fn quantize_with_scale(
    values: &[f64],
    dims: &[usize],
    bits: u32,
    scale: f64,
) -> Result<QuantizedTensor, CrossbarError> {
    check_bits(bits)?;
    let expected: usize = dims.iter().product();
    if expected != values.len() {
        return Err(CrossbarError::DimensionMismatch {
            expected,
            found: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CrossbarError::NonFinite(i));
    }
    let qmax = (1i64 << (bits - 1)) - 1;
    let ints = values
        .iter()
        .map(|v| ((v / scale).round() as i64).clamp(-qmax, qmax))
        .collect();
    Ok(QuantizedTensor {
        dims: dims.to_vec(),
        values: ints,
        scale,
        zero_point: 0,
        bits,
    })
}

fn check_bits(bits: u32) -> Result<(), CrossbarError> {
    if (2..=16).contains(&bits) {
        Ok(())
    } else {
        Err(CrossbarError::InvalidBits { bits, min: 2, max: 16 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_gets_unit_scale() {
        let q = quantize(&[0.0, 0.0, 0.0], &[3], 8).unwrap();
        assert_eq!(q.values, vec![0, 0, 0]);
        assert_eq!(q.scale, 1.0);
    }

    #[test]
    fn unit_range_maps_to_qmax() {
        let q = quantize(&[-1.0, 1.0], &[2], 8).unwrap();
        assert_eq!(q.values, vec![-127, 127]);
    }

    #[test]
    fn rejects_bad_widths() {
        assert!(quantize(&[1.0], &[1], 1).is_err());
        assert!(quantize(&[1.0], &[1], 17).is_err());
        assert!(quantize(&[f64::NAN], &[1], 8).is_err());
    }

    #[test]
    fn roundtrip_error_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..32);
            let bits = rng.gen_range(2..=16);
            let span = rng.gen_range(0.01..100.0);
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-span..span)).collect();
            let q = quantize(&vals, &[n], bits).unwrap();
            for (v, d) in vals.iter().zip(q.dequantize()) {
                assert!((v - d).abs() <= q.scale / 2.0 + 1e-12 * span);
            }
        }
    }

    #[test]
    fn from_ints_checks_width() {
        assert!(QuantizedTensor::from_ints(vec![2], vec![7, -8], 1.0, 4).is_ok());
        assert!(QuantizedTensor::from_ints(vec![2], vec![8, 0], 1.0, 4).is_err());
        assert!(QuantizedTensor::from_ints(vec![3], vec![0, 0], 1.0, 4).is_err());
    }
}
