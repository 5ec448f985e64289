//! Adaptive run-length / Golomb-Rice coding of signed integers.
//!
//! Values are zig-zag mapped, then coded with two adaptive parameters:
//! `k` selects between Golomb-Rice mode (`k = 0`) and run mode (`k > 0`,
//! zero runs of length `2^k` cost one bit), `kr` is the Rice parameter.
//! Both are kept with `LSGR` fractional bits.

use alloc::vec::Vec;

use super::bits::{BitReader, BitWriter};
use super::quant::{deinterleave, interleave};
use crate::error::{Error, Result};

const LSGR: u32 = 3;
const UP_GR: u32 = 4;
const DN_GR: u32 = 6;
const UQ_GR: u32 = 3;
const DQ_GR: u32 = 3;
const KP_MAX: u32 = 80;
const INIT_KP: u32 = 1 << LSGR;
const INIT_KRP: u32 = 1 << LSGR;
/// Unary prefixes at least this long switch to an explicit-length escape.
const ESCAPE: u32 = 24;

struct State {
    kp: u32,
    krp: u32,
}

impl State {
    fn new() -> Self {
        Self { kp: INIT_KP, krp: INIT_KRP }
    }

    fn k(&self) -> u32 {
        self.kp >> LSGR
    }

    fn kr(&self) -> u32 {
        self.krp >> LSGR
    }

    fn raise_k(&mut self, by: u32) {
        self.kp = (self.kp + by).min(KP_MAX);
    }

    fn lower_k(&mut self, by: u32) {
        self.kp = self.kp.saturating_sub(by);
    }

    fn adapt_kr(&mut self, v: u64) {
        let vk = v >> self.kr();
        if vk == 0 {
            self.krp = self.krp.saturating_sub(2);
        } else if vk > 1 {
            self.krp = (self.krp as u64 + vk).min(KP_MAX as u64) as u32;
        }
    }
}

fn bit_length(v: u64) -> u32 {
    64 - v.leading_zeros()
}

fn write_gr(w: &mut BitWriter, v: u64, kr: u32) {
    let vk = v >> kr;
    if vk >= ESCAPE as u64 {
        w.write_ones(ESCAPE);
        let n = bit_length(v);
        w.write(n as u64, 7);
        if n > 57 {
            w.write(v >> 57, n - 57);
            w.write(v, 57);
        } else {
            w.write(v, n);
        }
    } else {
        w.write_ones(vk as u32);
        w.write_bit(false);
        w.write(v, kr);
    }
}

fn read_gr(r: &mut BitReader, kr: u32) -> Result<u64> {
    let mut vk = 0u32;
    while vk < ESCAPE && r.read_bit()? {
        vk += 1;
    }
    if vk == ESCAPE {
        let n = r.read(7)? as u32;
        if n > 64 {
            return Err(Error::Bitstream("escape length exceeds 64 bits".into()));
        }
        return r.read(n);
    }
    let low = r.read(kr)?;
    Ok(((vk as u64) << kr) | low)
}

pub fn encode(values: &[i64]) -> Vec<u8> {
    let mut w = BitWriter::new();
    let mut s = State::new();
    let n = values.len();
    let mut i = 0;
    while i < n {
        let k = s.k();
        if k == 0 {
            let u = interleave(values[i]);
            write_gr(&mut w, u, s.kr());
            s.adapt_kr(u);
            if u == 0 {
                s.raise_k(UQ_GR);
            } else {
                s.lower_k(DQ_GR);
            }
            i += 1;
            continue;
        }
        let zeros = values[i..].iter().take_while(|&&v| v == 0).count();
        let full = 1usize << k;
        if zeros >= full {
            w.write_bit(false);
            s.raise_k(UP_GR);
            i += full;
            continue;
        }
        w.write_bit(true);
        w.write(zeros as u64, k);
        i += zeros;
        if i == n {
            break;
        }
        let u = interleave(values[i]) - 1;
        write_gr(&mut w, u, s.kr());
        s.adapt_kr(u);
        s.lower_k(DN_GR);
        i += 1;
    }
    w.finish()
}

pub fn decode(bytes: &[u8], n: usize) -> Result<Vec<i64>> {
    let mut r = BitReader::new(bytes);
    let mut s = State::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = s.k();
        if k == 0 {
            let u = read_gr(&mut r, s.kr())?;
            out.push(deinterleave(u));
            s.adapt_kr(u);
            if u == 0 {
                s.raise_k(UQ_GR);
            } else {
                s.lower_k(DQ_GR);
            }
            continue;
        }
        if !r.read_bit()? {
            let full = 1usize << k;
            if out.len() + full > n {
                return Err(Error::Bitstream("zero run past end of plane".into()));
            }
            out.resize(out.len() + full, 0);
            s.raise_k(UP_GR);
            continue;
        }
        let zeros = r.read(k)? as usize;
        if out.len() + zeros > n {
            return Err(Error::Bitstream("zero run past end of plane".into()));
        }
        out.resize(out.len() + zeros, 0);
        if out.len() == n {
            break;
        }
        let u = read_gr(&mut r, s.kr())?;
        let u = u.checked_add(1).ok_or_else(|| Error::Bitstream("value overflow".into()))?;
        out.push(deinterleave(u));
        s.adapt_kr(u - 1);
        s.lower_k(DN_GR);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn empty_and_single() {
        assert!(encode(&[]).is_empty());
        for v in [0i64, 1, -1, 1000, i64::MIN, i64::MAX] {
            assert_eq!(decode(&encode(&[v]), 1).unwrap(), vec![v]);
        }
    }

    #[test]
    fn zeros_regression_size() {
        // 18 growing runs cover 2044 zeros, 95 runs of 1024 follow, then a
        // terminal run of 676: 18 + 95 + 11 = 124 bits.
        let z = vec![0i64; 100_000];
        let bytes = encode(&z);
        assert_eq!(bytes.len(), 16);
        assert_eq!(decode(&bytes, z.len()).unwrap(), z);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let v: Vec<i64> = (0..100).map(|i| (i * 37 % 11) - 5).collect();
        let bytes = encode(&v);
        assert!(decode(&bytes[..bytes.len() / 2], v.len()).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(v in proptest::collection::vec(
            prop_oneof![4 => Just(0i64), 4 => -20i64..20, 1 => any::<i64>()], 0..400)) {
            let bytes = encode(&v);
            prop_assert_eq!(decode(&bytes, v.len()).unwrap(), v);
        }
    }
}
