//! Word-sized modular arithmetic for moduli below 2^62.

/// Largest modulus accepted anywhere in the crate (exclusive).
pub const MAX_MODULUS: u64 = 1 << 62;

/// A modulus together with its Barrett constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    // floor(2^128 / value), low word first
    ratio: [u64; 2],
}

impl Modulus {
    /// Panics if `value < 2` or `value >= 2^62`.
    pub fn new(value: u64) -> Self {
        assert!(
            (2..MAX_MODULUS).contains(&value),
            "modulus {value} outside [2, 2^62)"
        );
        let ratio = u128::MAX / value as u128;
        Modulus {
            value,
            ratio: [ratio as u64, (ratio >> 64) as u64],
        }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    /// Barrett reduction of a full 128-bit value.
    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let x0 = x as u64;
        let x1 = (x >> 64) as u64;
        let [r0, r1] = self.ratio;

        let carry = ((x0 as u128 * r0 as u128) >> 64) as u64;
        let t = x0 as u128 * r1 as u128;
        let (t1, c) = (t as u64).overflowing_add(carry);
        let t3 = ((t >> 64) as u64).wrapping_add(c as u64);

        let t = x1 as u128 * r0 as u128;
        let (_, c) = (t as u64).overflowing_add(t1);
        let carry = ((t >> 64) as u64).wrapping_add(c as u64);

        let quot = x1.wrapping_mul(r1).wrapping_add(t3).wrapping_add(carry);
        let r = x0.wrapping_sub(quot.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else {
            self.reduce_u128(x as u128)
        }
    }

    /// Reduces a signed integer into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        let r = self.reduce(x.unsigned_abs());
        if x < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    #[inline]
    pub fn reduce_i128(&self, x: i128) -> u64 {
        let r = self.reduce_u128(x.unsigned_abs());
        if x < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// `a*b + c mod q`.
    #[inline]
    pub fn mul_add(&self, a: u64, b: u64, c: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128 + c as u128)
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.value;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse via extended Euclid; `None` when `a` is not invertible.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let (mut r0, mut r1) = (self.value as i128, self.reduce(a) as i128);
        let (mut s0, mut s1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (s0, s1) = (s1, s0 - q * s1);
        }
        if r0 != 1 {
            return None;
        }
        Some(s0.rem_euclid(self.value as i128) as u64)
    }

    /// Shoup companion `floor(w * 2^64 / q)` for a fixed multiplicand `w < q`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` using the Shoup companion of `w`.
    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inverse_and_pow() {
        let m = Modulus::new(17);
        for a in 1..17 {
            let inv = m.inv(a).unwrap();
            assert_eq!(m.mul(a, inv), 1);
            assert_eq!(m.pow(a, 16), 1);
        }
        assert_eq!(m.inv(0), None);
        assert_eq!(m.center(16), -1);
        assert_eq!(m.center(8), 8);
        assert_eq!(m.reduce_i64(-1), 16);
    }

    proptest! {
        #[test]
        fn barrett_matches_u128_rem(q in 2u64..MAX_MODULUS, x in any::<u128>()) {
            let m = Modulus::new(q);
            prop_assert_eq!(m.reduce_u128(x) as u128, x % q as u128);
        }

        #[test]
        fn shoup_matches_mul(q in 3u64..MAX_MODULUS, a in any::<u64>(), w in any::<u64>()) {
            let m = Modulus::new(q);
            let (a, w) = (a % q, w % q);
            prop_assert_eq!(m.mul_shoup(a, w, m.shoup(w)), m.mul(a, w));
        }
    }
}
