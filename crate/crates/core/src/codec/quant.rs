//! Uniform scalar quantization with round-half-away-from-zero.

pub fn quantize(x: f64, step: f64) -> i64 {
    libm::round(x / step) as i64
}

pub fn dequantize(q: i64, step: f64) -> f64 {
    q as f64 * step
}

/// Zig-zag map: `0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ...`
pub fn interleave(x: i64) -> u64 {
    ((x << 1) ^ (x >> 63)) as u64
}

pub fn deinterleave(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(quantize(23.0, 10.0), 2);
        assert_eq!(dequantize(2, 10.0), 20.0);
        assert_eq!(quantize(-25.0, 10.0), -3);
        assert_eq!(quantize(25.0, 10.0), 3);
        assert_eq!(interleave(-1), 1);
        assert_eq!(interleave(1), 2);
        assert_eq!(interleave(-2), 3);
        assert_eq!(interleave(0), 0);
    }

    proptest! {
        #[test]
        fn interleave_roundtrip(x in any::<i64>()) {
            prop_assert_eq!(deinterleave(interleave(x)), x);
        }

        #[test]
        fn quantization_error_bounded(x in -1e6f64..1e6, step in 0.01f64..100.0) {
            let e = (dequantize(quantize(x, step), step) - x).abs();
            prop_assert!(e <= step / 2.0 * (1.0 + 1e-12));
        }
    }
}
