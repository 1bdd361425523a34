//! Negacyclic number-theoretic transform over `Z_q[x]/(x^n + 1)`.
//!
//! Forward transform is Cooley-Tukey with the powers of the `2n`-th root
//! stored in bit-reversed order; the inverse is Gentleman-Sande and folds in
//! `n^{-1}`. The evaluation-domain layout is bit-reversed.

use super::arith::Modulus;
use super::primes::{primitive_root_2n, PrimeModulus};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NttTables {
    modulus: Modulus,
    degree: usize,
    root: u64,
    fwd: Vec<u64>,
    fwd_shoup: Vec<u64>,
    inv: Vec<u64>,
    inv_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl NttTables {
    /// Builds tables for degree `n` and modulus `q`; fails when `q` has no
    /// primitive `2n`-th root of unity.
    pub fn new(q: u64, n: usize) -> Result<Self> {
        let prime = PrimeModulus::new(q, n)?;
        Self::for_prime(prime)
    }

    pub fn for_prime(prime: PrimeModulus) -> Result<Self> {
        let (q, n) = (prime.value(), prime.degree());
        let modulus = prime.modulus();
        let root = primitive_root_2n(q, n)?;
        let root_inv = modulus
            .inv(root)
            .ok_or_else(|| Error::Parameter("root not invertible".into()))?;
        let bits = n.trailing_zeros();

        let mut fwd = vec![0u64; n];
        let mut inv = vec![0u64; n];
        let (mut p, mut pi) = (1u64, 1u64);
        for i in 0..n {
            let j = bit_reverse(i, bits);
            fwd[j] = p;
            inv[j] = pi;
            p = modulus.mul(p, root);
            pi = modulus.mul(pi, root_inv);
        }
        let fwd_shoup = fwd.iter().map(|&w| modulus.shoup(w)).collect();
        let inv_shoup = inv.iter().map(|&w| modulus.shoup(w)).collect();
        let n_inv = modulus
            .inv(n as u64)
            .ok_or_else(|| Error::Parameter("n not invertible".into()))?;
        Ok(NttTables {
            modulus,
            degree: n,
            root,
            fwd,
            fwd_shoup,
            inv,
            inv_shoup,
            n_inv,
            n_inv_shoup: modulus.shoup(n_inv),
        })
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The primitive `2n`-th root of unity the tables were built from.
    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn n_inverse(&self) -> u64 {
        self.n_inv
    }

    /// In-place forward transform.
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.degree);
        let m = &self.modulus;
        let q = m.value();
        let n = self.degree;
        let mut t = n;
        let mut groups = 1;
        while groups < n {
            t >>= 1;
            for i in 0..groups {
                let w = self.fwd[groups + i];
                let ws = self.fwd_shoup[groups + i];
                let start = 2 * i * t;
                let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = m.mul_shoup(*y, w, ws);
                    let s = u + v;
                    *x = if s >= q { s - q } else { s };
                    *y = if u >= v { u - v } else { u + q - v };
                }
            }
            groups <<= 1;
        }
    }

    /// In-place inverse transform, including the `n^{-1}` factor.
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.degree);
        let m = &self.modulus;
        let q = m.value();
        let n = self.degree;
        let mut t = 1;
        let mut groups = n;
        while groups > 1 {
            let half = groups >> 1;
            for i in 0..half {
                let w = self.inv[half + i];
                let ws = self.inv_shoup[half + i];
                let start = 2 * i * t;
                let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*x, *y);
                    let s = u + v;
                    *x = if s >= q { s - q } else { s };
                    let d = if u >= v { u - v } else { u + q - v };
                    *y = m.mul_shoup(d, w, ws);
                }
            }
            t <<= 1;
            groups = half;
        }
        for x in a.iter_mut() {
            *x = m.mul_shoup(*x, self.n_inv, self.n_inv_shoup);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_properties() {
        for (q, n) in [(17u64, 4usize), (17, 8), (97, 16), (0x3fff_ffff_000c_0001, 64)] {
            if super::super::primes::is_prime(q) && (q - 1) % (2 * n as u64) == 0 {
                let t = NttTables::new(q, n).unwrap();
                let m = t.modulus();
                assert_eq!(m.pow(t.root(), n as u64), q - 1);
                assert_eq!(m.pow(t.root(), 2 * n as u64), 1);
                assert_eq!(m.mul(t.n_inverse(), n as u64), 1);
            }
        }
    }

    #[test]
    fn rejects_modulus_without_root() {
        assert!(NttTables::new(17, 16).is_err());
        assert!(NttTables::new(19, 4).is_err());
    }

    #[test]
    fn exhaustive_roundtrip_n4_q17() {
        let t = NttTables::new(17, 4).unwrap();
        for code in 0..17u64.pow(4) {
            let p: Vec<u64> = (0..4).map(|i| code / 17u64.pow(i) % 17).collect();
            let mut a = p.clone();
            t.forward(&mut a);
            t.inverse(&mut a);
            assert_eq!(a, p);
        }
    }

    #[test]
    fn evaluates_at_odd_powers_of_root() {
        // each forward output is p(root^(2k+1)) for some k, each k exactly once
        let (q, n) = (97u64, 8usize);
        let t = NttTables::new(q, n).unwrap();
        let m = t.modulus();
        let p: Vec<u64> = vec![3, 1, 4, 1, 5, 9, 2, 6];
        let mut a = p.clone();
        t.forward(&mut a);
        let mut evals: Vec<u64> = (0..n)
            .map(|k| {
                let x = m.pow(t.root(), 2 * k as u64 + 1);
                p.iter().rev().fold(0, |acc, &c| m.add(m.mul(acc, x), c))
            })
            .collect();
        evals.sort_unstable();
        a.sort_unstable();
        assert_eq!(a, evals);
    }
}
