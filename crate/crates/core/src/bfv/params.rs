use std::fmt;

use num_bigint::BigUint;
use num_traits::One;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::modring::{is_prime, PrimeModulus, DEFAULT_SIGMA, MAX_MODULUS};

pub const DEFAULT_RELIN_BITS: u32 = 16;

const PARAMS_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecurityLevel {
    Bits128,
    Bits192,
    Bits256,
}

impl SecurityLevel {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            128 => Ok(SecurityLevel::Bits128),
            192 => Ok(SecurityLevel::Bits192),
            256 => Ok(SecurityLevel::Bits256),
            other => Err(Error::Parameter(format!(
                "security level {other} not in {{128, 192, 256}}"
            ))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            SecurityLevel::Bits128 => 128,
            SecurityLevel::Bits192 => 192,
            SecurityLevel::Bits256 => 256,
        }
    }

    pub const ALL: [SecurityLevel; 3] = [
        SecurityLevel::Bits128,
        SecurityLevel::Bits192,
        SecurityLevel::Bits256,
    ];

    /// Largest `log2(q)` the homomorphic-encryption security standard allows
    /// for a ternary secret at this level, or `None` for unsupported degrees.
    pub fn max_log_q(self, n: usize) -> Option<u32> {
        let row = match n {
            1024 => [27, 19, 14],
            2048 => [54, 37, 29],
            4096 => [109, 75, 58],
            8192 => [218, 152, 118],
            16384 => [438, 305, 237],
            32768 => [881, 611, 476],
            _ => return None,
        };
        Some(match self {
            SecurityLevel::Bits128 => row[0],
            SecurityLevel::Bits192 => row[1],
            SecurityLevel::Bits256 => row[2],
        })
    }
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Encryption parameters. `security_level: None` marks toy parameters that
/// skip the security bound (tests only).
#[derive(Clone, Debug, PartialEq)]
pub struct EncryptionParams {
    pub poly_degree: usize,
    pub coeff_modulus: Vec<u64>,
    pub plain_modulus: u64,
    pub security_level: Option<SecurityLevel>,
    pub noise_sigma: f64,
    pub relin_decomposition_bits: u32,
}

impl EncryptionParams {
    pub fn new(
        poly_degree: usize,
        coeff_modulus: Vec<u64>,
        plain_modulus: u64,
        security_level: SecurityLevel,
    ) -> Self {
        EncryptionParams {
            poly_degree,
            coeff_modulus,
            plain_modulus,
            security_level: Some(security_level),
            noise_sigma: DEFAULT_SIGMA,
            relin_decomposition_bits: DEFAULT_RELIN_BITS,
        }
    }

    /// Parameters exempt from the security bound.
    pub fn insecure(poly_degree: usize, coeff_modulus: Vec<u64>, plain_modulus: u64) -> Self {
        EncryptionParams {
            security_level: None,
            ..Self::new(poly_degree, coeff_modulus, plain_modulus, SecurityLevel::Bits128)
        }
    }

    pub fn with_relin_bits(mut self, bits: u32) -> Self {
        self.relin_decomposition_bits = bits;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn q_product(&self) -> BigUint {
        self.coeff_modulus
            .iter()
            .fold(BigUint::one(), |acc, &p| acc * p)
    }

    pub fn log_q(&self) -> u32 {
        self.q_product().bits() as u32
    }

    pub fn plain_bits(&self) -> u32 {
        64 - self.plain_modulus.leading_zeros()
    }

    /// Number of relinearization key components.
    pub fn relin_key_count(&self) -> usize {
        (self.log_q() as usize).div_ceil(self.relin_decomposition_bits as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.poly_degree;
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::Parameter(format!("degree {n} is not a power of two")));
        }
        if self.coeff_modulus.is_empty() {
            return Err(Error::Parameter("empty coefficient modulus".into()));
        }
        for (i, &q) in self.coeff_modulus.iter().enumerate() {
            PrimeModulus::new(q, n)?;
            if self.coeff_modulus[..i].contains(&q) {
                return Err(Error::Parameter(format!("coefficient prime {q} repeated")));
            }
        }
        let t = self.plain_modulus;
        if t >= MAX_MODULUS || !is_prime(t) || t == 2 {
            return Err(Error::Parameter(format!(
                "plain modulus {t} is not an odd prime below 2^62"
            )));
        }
        if t % (2 * n as u64) != 1 {
            return Err(Error::Parameter(format!(
                "plain modulus {t} is not congruent to 1 mod {} (batching impossible)",
                2 * n
            )));
        }
        if BigUint::from(t) >= self.q_product() {
            return Err(Error::Parameter("plain modulus not below q".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Parameter("noise sigma must be positive".into()));
        }
        let w = self.relin_decomposition_bits;
        let min_q_bits = self
            .coeff_modulus
            .iter()
            .map(|q| 63 - q.leading_zeros())
            .min()
            .unwrap_or(0);
        if w == 0 || w > min_q_bits || w > 60 {
            return Err(Error::Parameter(format!(
                "relinearization digit size {w} bits out of range"
            )));
        }
        if let Some(level) = self.security_level {
            let bound = level.max_log_q(n).ok_or_else(|| {
                Error::Parameter(format!("no security bound for degree {n}"))
            })?;
            if self.log_q() > bound {
                return Err(Error::Parameter(format!(
                    "log2(q) = {} exceeds the {}-bit bound {} for n = {n}",
                    self.log_q(),
                    level,
                    bound
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u8(PARAMS_VERSION)
            .u64(self.poly_degree as u64)
            .u64s(&self.coeff_modulus)
            .u64(self.plain_modulus)
            .u32(self.security_level.map_or(0, |l| l.bits()))
            .f64(self.noise_sigma)
            .u32(self.relin_decomposition_bits);
        w.finish()
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let version = r.u8("params version")?;
        if version != PARAMS_VERSION {
            return Err(Error::Version {
                found: version as u32,
                expected: PARAMS_VERSION as u32,
            });
        }
        let poly_degree = r.u64("poly degree")? as usize;
        let coeff_modulus = r.u64s("coefficient modulus")?;
        let plain_modulus = r.u64("plain modulus")?;
        let level = r.u32("security level")?;
        let security_level = match level {
            0 => None,
            b => Some(SecurityLevel::from_bits(b)?),
        };
        let p = EncryptionParams {
            poly_degree,
            coeff_modulus,
            plain_modulus,
            security_level,
            noise_sigma: r.f64("noise sigma")?,
            relin_decomposition_bits: r.u32("relin bits")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "encryption params");
        let p = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(p)
    }

    /// Stable 64-bit identifier of this parameter set (FNV-1a of its encoding).
    pub fn fingerprint(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modring::ntt_primes;

    fn params(n: usize, t: u64, qbits: u32, k: usize, level: SecurityLevel) -> EncryptionParams {
        EncryptionParams::new(n, ntt_primes(qbits, n, k, &[]).unwrap(), t, level)
    }

    #[test]
    fn plain_modulus_must_split() {
        // 12289 = 8192 + 4097, not 1 mod 8192
        let p = params(4096, 12289, 36, 3, SecurityLevel::Bits128);
        assert!(matches!(p.validate(), Err(Error::Parameter(_))));
        // 65537 = 8 * 8192 + 1 does split at n = 4096
        let p = params(4096, 65537, 36, 3, SecurityLevel::Bits128);
        p.validate().unwrap();
    }

    #[test]
    fn security_bound_enforced() {
        let ok = params(4096, 65537, 36, 3, SecurityLevel::Bits128);
        ok.validate().unwrap();
        let too_big = params(4096, 65537, 40, 3, SecurityLevel::Bits128);
        assert!(too_big.validate().is_err());
        let at_256 = params(4096, 65537, 36, 3, SecurityLevel::Bits256);
        assert!(at_256.validate().is_err());
        assert!(SecurityLevel::from_bits(512).is_err());
    }

    #[test]
    fn encoding_roundtrip_and_fingerprint() {
        let p = params(8192, 65537, 50, 4, SecurityLevel::Bits128);
        let back = EncryptionParams::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.fingerprint(), p.fingerprint());
        let other = p.clone().with_relin_bits(20);
        assert_ne!(other.fingerprint(), p.fingerprint());
    }

    #[test]
    fn relin_key_count() {
        let p = params(8192, 65537, 50, 4, SecurityLevel::Bits128);
        assert_eq!(p.log_q(), 200);
        assert_eq!(p.relin_key_count(), 13);
    }
}
