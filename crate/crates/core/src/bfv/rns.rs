//! Residue-number-system bases and exact conversions out of them.
//!
//! Values are recovered through mixed-radix conversion: for a base
//! `(b_0, .., b_{k-1})` a residue vector maps to digits `v_i < b_i` with
//! `x = v_0 + v_1 b_0 + v_2 b_0 b_1 + ...`. Digits give exact comparisons and
//! exact reduction into other primes with word arithmetic only.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::modring::{Domain, Modulus};

#[derive(Clone, Debug)]
pub struct RnsBase {
    moduli: Vec<Modulus>,
    // inv[i][j] = b_j^{-1} mod b_i for j < i, with Shoup companions
    inv: Vec<Vec<(u64, u64)>>,
    product: BigUint,
    // mixed-radix digits of (product - 1) / 2
    half_digits: Vec<u64>,
}

impl RnsBase {
    pub fn new(primes: &[u64]) -> Self {
        let moduli: Vec<Modulus> = primes.iter().map(|&p| Modulus::new(p)).collect();
        let inv = moduli
            .iter()
            .enumerate()
            .map(|(i, mi)| {
                (0..i)
                    .map(|j| {
                        let v = mi.inv(moduli[j].value()).expect("distinct primes");
                        (v, mi.shoup(v))
                    })
                    .collect()
            })
            .collect();
        let product = primes.iter().fold(BigUint::one(), |acc, &p| acc * p);
        let mut base = RnsBase {
            moduli,
            inv,
            product,
            half_digits: Vec::new(),
        };
        let half: BigUint = (&base.product - 1u32) >> 1;
        let residues = base.residues_of(&half);
        let mut hd = vec![0; primes.len()];
        base.mixed_radix(&residues, &mut hd);
        base.half_digits = hd;
        base
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn product(&self) -> &BigUint {
        &self.product
    }

    pub fn residues_of(&self, x: &BigUint) -> Vec<u64> {
        self.moduli
            .iter()
            .map(|m| (x % m.value()).iter_u64_digits().next().unwrap_or(0))
            .collect()
    }

    /// Mixed-radix digits of the value with the given residues.
    #[inline]
    pub fn mixed_radix(&self, residues: &[u64], digits: &mut [u64]) {
        for i in 0..self.moduli.len() {
            let m = &self.moduli[i];
            let mut acc = residues[i];
            for (j, &(w, ws)) in self.inv[i].iter().enumerate() {
                acc = m.sub(acc, m.reduce(digits[j]));
                acc = m.mul_shoup(acc, w, ws);
            }
            digits[i] = acc;
        }
    }

    /// True when the value with these digits exceeds `(product - 1) / 2`,
    /// i.e. its centered representative is negative.
    #[inline]
    pub fn digits_negative(&self, digits: &[u64]) -> bool {
        for i in (0..digits.len()).rev() {
            if digits[i] != self.half_digits[i] {
                return digits[i] > self.half_digits[i];
            }
        }
        false
    }

    pub fn digits_to_biguint(&self, digits: &[u64]) -> BigUint {
        let mut acc = BigUint::zero();
        for i in (0..digits.len()).rev() {
            acc *= self.moduli[i].value();
            acc += digits[i];
        }
        acc
    }

    /// Value in `[0, product)` as little-endian 64-bit limbs.
    pub fn digits_to_limbs(&self, digits: &[u64], limbs: &mut Vec<u64>) {
        limbs.clear();
        for i in (0..digits.len()).rev() {
            mul_small_add(limbs, self.moduli[i].value(), digits[i]);
        }
    }

    #[cfg(test)]
    pub fn to_biguint(&self, residues: &[u64]) -> BigUint {
        let mut d = vec![0; residues.len()];
        self.mixed_radix(residues, &mut d);
        self.digits_to_biguint(&d)
    }
}

/// `limbs = limbs * m + a` on little-endian limbs.
pub fn mul_small_add(limbs: &mut Vec<u64>, m: u64, a: u64) {
    let mut carry = a as u128;
    for l in limbs.iter_mut() {
        let v = *l as u128 * m as u128 + carry;
        *l = v as u64;
        carry = v >> 64;
    }
    if carry > 0 {
        limbs.push(carry as u64);
    }
}

/// Reduces mixed-radix digits of one base into the primes of another.
#[derive(Clone, Debug)]
pub struct BaseConverter {
    // weights[t][i] = (b_0 ... b_{i-1}) mod target_t, with Shoup companions
    weights: Vec<Vec<(u64, u64)>>,
    // source product mod target_t
    product_mod: Vec<u64>,
    targets: Vec<Modulus>,
}

impl BaseConverter {
    pub fn new(source: &RnsBase, targets: &[Modulus]) -> Self {
        let weights = targets
            .iter()
            .map(|t| {
                let mut w = 1u64 % t.value();
                source
                    .moduli()
                    .iter()
                    .map(|m| {
                        let cur = (w, t.shoup(w));
                        w = t.mul(w, t.reduce(m.value()));
                        cur
                    })
                    .collect()
            })
            .collect();
        let product_mod = targets
            .iter()
            .map(|t| (source.product() % t.value()).iter_u64_digits().next().unwrap_or(0))
            .collect();
        BaseConverter {
            weights,
            product_mod,
            targets: targets.to_vec(),
        }
    }

    /// Residue of the digit value (minus the source product when `negative`)
    /// modulo target `t`.
    #[inline]
    pub fn convert(&self, digits: &[u64], negative: bool, t: usize) -> u64 {
        let m = &self.targets[t];
        let mut acc = 0u64;
        for (&d, &(w, ws)) in digits.iter().zip(&self.weights[t]) {
            acc = m.add(acc, m.mul_shoup(m.reduce(d), w, ws));
        }
        if negative {
            acc = m.sub(acc, self.product_mod[t]);
        }
        acc
    }
}

/// An element of `Z_Q[x]/(x^n+1)` held as one residue vector per prime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    pub(crate) residues: Vec<Vec<u64>>,
    pub(crate) domain: Domain,
}

impl RnsPoly {
    pub fn zero(n: usize, k: usize, domain: Domain) -> Self {
        RnsPoly {
            residues: vec![vec![0; n]; k],
            domain,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn residues(&self) -> &[Vec<u64>] {
        &self.residues
    }

    pub fn degree(&self) -> usize {
        self.residues.first().map_or(0, |r| r.len())
    }

    pub fn byte_size(&self) -> usize {
        self.residues.iter().map(|r| r.len() * 8).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modring::ntt_primes;
    use proptest::prelude::*;

    fn base() -> RnsBase {
        RnsBase::new(&ntt_primes(60, 16, 3, &[]).unwrap())
    }

    proptest! {
        #[test]
        fn mixed_radix_reconstructs(seed in proptest::collection::vec(any::<u64>(), 3)) {
            let b = base();
            let x = seed.iter().fold(BigUint::zero(), |acc, &s| (acc << 64) + s) % b.product();
            let r = b.residues_of(&x);
            prop_assert_eq!(b.to_biguint(&r), x.clone());
            let mut d = vec![0; 3];
            b.mixed_radix(&r, &mut d);
            let half: BigUint = (b.product() - 1u32) >> 1;
            prop_assert_eq!(b.digits_negative(&d), x > half);
            let mut limbs = Vec::new();
            b.digits_to_limbs(&d, &mut limbs);
            let from_limbs = limbs.iter().rev().fold(BigUint::zero(), |acc, &l| (acc << 64) + l);
            prop_assert_eq!(from_limbs, x);
        }

        #[test]
        fn converter_matches_bigint(seed in proptest::collection::vec(any::<u64>(), 3)) {
            let b = base();
            let targets: Vec<Modulus> = ntt_primes(59, 16, 2, &[]).unwrap().into_iter().map(Modulus::new).collect();
            let conv = BaseConverter::new(&b, &targets);
            let x = seed.iter().fold(BigUint::zero(), |acc, &s| (acc << 64) + s) % b.product();
            let mut d = vec![0; 3];
            b.mixed_radix(&b.residues_of(&x), &mut d);
            for (t, m) in targets.iter().enumerate() {
                let expect = (&x % m.value()).iter_u64_digits().next().unwrap_or(0);
                prop_assert_eq!(conv.convert(&d, false, t), expect);
                let neg = (b.product() - &x) % m.value();
                let neg = (m.value() - neg.iter_u64_digits().next().unwrap_or(0)) % m.value();
                prop_assert_eq!(conv.convert(&d, true, t), neg);
            }
        }
    }
}
