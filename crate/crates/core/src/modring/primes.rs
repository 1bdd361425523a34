use super::arith::{Modulus, MAX_MODULUS};
use crate::error::{Error, Result};

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// An odd prime below 2^62 with `value ≡ 1 (mod 2·degree)`, so that a
/// primitive `2·degree`-th root of unity exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrimeModulus {
    value: u64,
    degree: usize,
}

impl PrimeModulus {
    pub fn new(value: u64, degree: usize) -> Result<Self> {
        if !degree.is_power_of_two() || degree < 2 {
            return Err(Error::Parameter(format!(
                "ring degree {degree} is not a power of two >= 2"
            )));
        }
        if value >= MAX_MODULUS || value % 2 == 0 || !is_prime(value) {
            return Err(Error::Parameter(format!(
                "{value} is not an odd prime below 2^62"
            )));
        }
        if value % (2 * degree as u64) != 1 {
            return Err(Error::Parameter(format!(
                "{value} is not congruent to 1 mod {}",
                2 * degree
            )));
        }
        Ok(PrimeModulus { value, degree })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn modulus(&self) -> Modulus {
        Modulus::new(self.value)
    }
}

/// Finds `count` distinct primes of exactly `bits` bits with `p ≡ 1 (mod 2n)`,
/// searching downward from `2^bits` and skipping anything in `exclude`.
pub fn ntt_primes(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Result<Vec<u64>> {
    if !(4..=62).contains(&bits) {
        return Err(Error::Parameter(format!("prime size {bits} bits out of range")));
    }
    let step = 2 * n as u64;
    let upper = if bits == 62 { MAX_MODULUS - 1 } else { 1u64 << bits };
    let lower = 1u64 << (bits - 1);
    // largest candidate ≡ 1 mod 2n strictly below upper
    let mut p = (upper - 1) / step * step + 1;
    if p >= upper {
        p -= step;
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if p <= lower {
            return Err(Error::Parameter(format!(
                "not enough {bits}-bit primes congruent to 1 mod {step}"
            )));
        }
        if !exclude.contains(&p) && is_prime(p) {
            out.push(p);
        }
        p -= step;
    }
    Ok(out)
}

/// Smallest primitive `2n`-th root of unity modulo a prime `q ≡ 1 (mod 2n)`.
pub fn primitive_root_2n(q: u64, n: usize) -> Result<u64> {
    let m = Modulus::new(q);
    let order = 2 * n as u64;
    if (q - 1) % order != 0 {
        return Err(Error::Parameter(format!(
            "{q} has no primitive {order}-th root of unity"
        )));
    }
    let cofactor = (q - 1) / order;
    let mut best: Option<u64> = None;
    for x in 2..q.min(1 << 20) {
        let g = m.pow(x, cofactor);
        // g has order dividing 2n; it is primitive iff g^n = -1
        if m.pow(g, n as u64) == q - 1 {
            // the primitive roots are g^k for odd k; take the smallest
            let g2 = m.mul(g, g);
            let mut r = g;
            let mut min = g;
            for _ in 0..n {
                min = min.min(r);
                r = m.mul(r, g2);
            }
            best = Some(min);
            break;
        }
    }
    best.ok_or_else(|| Error::Parameter(format!("no primitive root found for {q}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_primes() {
        let primes: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            primes,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
        );
        // Carmichael numbers
        assert!(!is_prime(561));
        assert!(!is_prime(1105));
        assert!(is_prime((1u64 << 61) - 1));
    }

    #[test]
    fn prime_modulus_validation() {
        assert!(PrimeModulus::new(17, 8).is_ok());
        assert!(PrimeModulus::new(17, 16).is_err());
        assert!(PrimeModulus::new(65537, 4096).is_ok());
        assert!(PrimeModulus::new(12289, 4096).is_err());
        assert!(PrimeModulus::new(15, 4).is_err());
    }

    #[test]
    fn generated_primes_are_ntt_friendly() {
        let ps = ntt_primes(50, 4096, 3, &[]).unwrap();
        assert_eq!(ps.len(), 3);
        for p in &ps {
            assert!(is_prime(*p));
            assert_eq!(p % 8192, 1);
            assert_eq!(64 - p.leading_zeros(), 50);
        }
        let more = ntt_primes(50, 4096, 2, &ps).unwrap();
        assert!(more.iter().all(|p| !ps.contains(p)));
    }

    #[test]
    fn root_of_unity() {
        let q = 17;
        let r = primitive_root_2n(q, 8).unwrap();
        let m = Modulus::new(q);
        assert_eq!(m.pow(r, 8), 16);
        assert_eq!(m.pow(r, 16), 1);
    }
}
