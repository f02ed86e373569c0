//! Convolution lowering to matrix form (im2col) and its adjoint (col2im).
//!
//! Patch rows are ordered by output position `(oy, ox)`; within a patch the
//! columns run over `(ky, kx, channel)`, matching the row order of a layer's
//! `[kh*kw*cin, cout]` weight matrix.

use crate::tensor::Dims3;

/// Output spatial size of a valid (unpadded) convolution.
pub fn conv_output(input: Dims3, kh: usize, kw: usize, stride: usize) -> Option<(usize, usize)> {
    if kh == 0 || kw == 0 || stride == 0 || kh > input.h || kw > input.w {
        return None;
    }
    Some(((input.h - kh) / stride + 1, (input.w - kw) / stride + 1))
}

/// Gathers every receptive field into a `[oh*ow, kh*kw*c]` row-major matrix.
pub fn im2col(data: &[f64], input: Dims3, kh: usize, kw: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = conv_output(input, kh, kw, stride).expect("kernel fits input");
    let k = kh * kw * input.c;
    let mut cols = vec![0.0; oh * ow * k];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            let mut p = 0;
            for ky in 0..kh {
                for kx in 0..kw {
                    let base = input.index(oy * stride + ky, ox * stride + kx, 0);
                    row[p..p + input.c].copy_from_slice(&data[base..base + input.c]);
                    p += input.c;
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch gradients back onto the input grid (adjoint of
/// [`im2col`]).
pub fn col2im(cols: &[f64], input: Dims3, kh: usize, kw: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = conv_output(input, kh, kw, stride).expect("kernel fits input");
    let k = kh * kw * input.c;
    let mut out = vec![0.0; input.count()];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            let mut p = 0;
            for ky in 0..kh {
                for kx in 0..kw {
                    let base = input.index(oy * stride + ky, ox * stride + kx, 0);
                    for ch in 0..input.c {
                        out[base + ch] += row[p + ch];
                    }
                    p += input.c;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape() {
        let d = Dims3::new(5, 7, 2);
        assert_eq!(conv_output(d, 3, 3, 1), Some((3, 5)));
        assert_eq!(conv_output(d, 3, 3, 2), Some((2, 3)));
        assert_eq!(conv_output(d, 6, 1, 1), None);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let d = Dims3::new(4, 5, 3);
        let x: Vec<f64> = (0..d.count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (oh, ow) = conv_output(d, 2, 3, 1).unwrap();
        let y: Vec<f64> = (0..oh * ow * 2 * 3 * 3).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, d, 2, 3, 1).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, d, 2, 3, 1)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
