//! Digital peripheral units: ADC read-out, Shift&Add, and the 4-input
//! max-pooling comparator tree.

/// Merges a more significant partial sum into a less significant one:
/// `(high << shift) + low`.
#[inline]
pub fn shift_add(high: i64, low: i64, shift: u32) -> i64 {
    (high << shift) + low
}

/// Saturating ADC conversion of a bit-line value.
///
/// Returns the converted code and the magnitude that was clipped away.
/// Bipolar columns (those with a constant-term offset or a differential
/// pair) are read with a sign, so the code range is `[-fs, fs]`.
#[inline]
pub fn adc_read(value: i64, full_scale: i64) -> (i64, u64) {
    let code = value.clamp(-full_scale, full_scale);
    (code, value.abs_diff(code))
}

/// Two-level comparator tree over a 2×2 window.
///
/// The first level compares `(a, b)` and `(c, d)` in parallel; the second
/// compares the two winners. Ties keep the lower index, so the result is the
/// first occurrence of the maximum in `a, b, c, d` order.
pub fn max_pool4<T: PartialOrd + Copy>(a: T, b: T, c: T, d: T) -> (T, u8) {
    let (left, li) = if b > a { (b, 1) } else { (a, 0) };
    let (right, ri) = if d > c { (d, 3) } else { (c, 2) };
    if right > left {
        (right, ri)
    } else {
        (left, li)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_add_concatenates_nibbles() {
        assert_eq!(shift_add(0xA, 0x3, 4), 0xA3);
        assert_eq!(shift_add(0, 9, 4), 9);
        for h in 0..16 {
            for l in 0..16 {
                assert_eq!(shift_add(h, l, 4), 16 * h + l);
            }
        }
    }

    #[test]
    fn max_pool_examples() {
        assert_eq!(max_pool4(3, 7, 2, 9), (9, 3));
        assert_eq!(max_pool4(5, 5, 5, 5), (5, 0));
        assert_eq!(max_pool4(1, 4, 4, 0), (4, 1));
        assert_eq!(max_pool4(0.5, -1.0, 0.5, 0.25), (0.5, 0));
    }

    #[test]
    fn adc_clips_both_sides() {
        assert_eq!(adc_read(300, 255), (255, 45));
        assert_eq!(adc_read(-300, 255), (-255, 45));
        assert_eq!(adc_read(17, 255), (17, 0));
    }
}
