//! Bundled parameter presets.
//!
//! A preset fixes the security level, ring degree, plaintext modulus size and
//! the number of coefficient primes. The table keeps only combinations with
//! depth capacity of at least one; capacities were measured with
//! [`measure_depth_capacity`] (seed 1) and are re-checked by tests.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::cipher::Plaintext;
use super::context::keygen;
use super::params::{EncryptionParams, SecurityLevel};
use crate::error::{Error, Result};
use crate::modring::ntt_primes;

/// Budget (bits) a probe chain must keep after its last multiplication.
/// Covers the additions and small scalar products a dense layer adds.
pub const PROBE_MARGIN_BITS: u32 = 12;

const MAX_PRIME_BITS: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub level: SecurityLevel,
    pub poly_degree: usize,
    pub plain_bits: u32,
    /// Number of coefficient primes; each is 60 bits unless the security
    /// bound forces the total down, in which case the bound is split evenly.
    pub prime_count: u32,
    /// Multiplications (plain or ciphertext) a fresh ciphertext survives
    /// with at least [`PROBE_MARGIN_BITS`] left.
    pub depth: u32,
}

use SecurityLevel::{Bits128 as L128, Bits192 as L192, Bits256 as L256};

const fn p(level: SecurityLevel, poly_degree: usize, plain_bits: u32, prime_count: u32, depth: u32) -> Preset {
    Preset {
        level,
        poly_degree,
        plain_bits,
        prime_count,
        depth,
    }
}

include!("preset_table.rs");

/// All bundled presets.
pub fn preset_table() -> &'static [Preset] {
    PRESETS
}

/// Every `(level, degree, plaintext size, prime count)` combination the
/// table is generated from, with depth left at zero.
pub fn preset_candidates() -> Vec<Preset> {
    let mut out = Vec::new();
    for level in SecurityLevel::ALL {
        for n in [4096usize, 8192, 16384, 32768] {
            let bound = level.max_log_q(n).expect("bounded degree");
            let classes: &[u32] = match n {
                4096 => &[17, 40, 60],
                8192 => &[18, 40, 60],
                _ => &[40, 60],
            };
            for &plain_bits in classes {
                for k in 1..=bound.div_ceil(MAX_PRIME_BITS) {
                    out.push(p(level, n, plain_bits, k, 0));
                }
            }
        }
    }
    out
}

impl Preset {
    /// Largest `log2(q)` allowed for this preset.
    pub fn log_q_bound(&self) -> u32 {
        self.level
            .max_log_q(self.poly_degree)
            .expect("bundled degrees have bounds")
    }

    /// Concrete parameters. Deterministic: same preset, same primes.
    pub fn params(&self) -> Result<EncryptionParams> {
        let n = self.poly_degree;
        let t = ntt_primes(self.plain_bits, n, 1, &[])?[0];
        let count = self.prime_count;
        let total = self.log_q_bound().min(count * MAX_PRIME_BITS);
        let mut q = Vec::with_capacity(count as usize);
        for i in 0..count {
            let bits = total / count + u32::from(i < total % count);
            let mut exclude = q.clone();
            exclude.push(t);
            q.extend(ntt_primes(bits, n, 1, &exclude)?);
        }
        let params = EncryptionParams::new(n, q, t, self.level);
        params.validate()?;
        Ok(params)
    }

    /// Serialized ciphertext size grows with this.
    pub fn size_key(&self) -> (usize, u32) {
        (self.poly_degree * self.prime_count as usize, self.plain_bits)
    }
}

/// Smallest preset at `level` whose depth capacity reaches `depth_hint`.
pub fn security_preset(level: u32, depth_hint: u32) -> Result<EncryptionParams> {
    select_preset(level, depth_hint, 0)?.params()
}

/// Smallest preset (degree first, then modulus size) at `level` with depth
/// capacity `>= depth` and a plaintext modulus of at least `min_plain_bits` bits.
pub fn select_preset(level: u32, depth: u32, min_plain_bits: u32) -> Result<Preset> {
    let level = SecurityLevel::from_bits(level)?;
    PRESETS
        .iter()
        .filter(|p| p.level == level && p.plain_bits >= min_plain_bits && p.depth >= depth)
        .min_by_key(|p| (p.poly_degree, p.prime_count, p.plain_bits))
        .copied()
        .ok_or_else(|| {
            Error::DepthUnreachable(format!(
                "depth {depth} unreachable at the {level}-bit level with a {min_plain_bits}-bit plaintext modulus"
            ))
        })
}

/// Multiplies a fresh ciphertext by further fresh ciphertexts until the
/// budget would drop below [`PROBE_MARGIN_BITS`]; returns how many steps fit.
/// Random operands, fixed seed.
pub fn measure_depth_capacity(params: &EncryptionParams, seed: u64) -> Result<u32> {
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (ctx, keys) = keygen(params, &mut rng)?;
    let n = params.poly_degree;
    let t = params.plain_modulus;
    let fresh = |rng: &mut ChaCha20Rng| {
        let pt = Plaintext::from_coeffs((0..n).map(|_| rng.gen_range(0..t)).collect(), t)?;
        ctx.encrypt(&pt, &keys.public_key, rng)
    };
    let mut acc = fresh(&mut rng)?;
    let mut depth = 0;
    loop {
        let next = ctx.multiply(&acc, &fresh(&mut rng)?, &keys.relin_keys)?;
        if ctx.noise_budget(&next, &keys.secret_key)? < PROBE_MARGIN_BITS {
            return Ok(depth);
        }
        depth += 1;
        acc = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_within_security_bounds() {
        for p in preset_table() {
            let params = p.params().unwrap();
            assert!(params.log_q() <= p.log_q_bound());
            assert_eq!(params.plain_bits(), p.plain_bits);
            assert_eq!(params.security_level, Some(p.level));
        }
    }

    #[test]
    fn preset_primes_are_deterministic() {
        let p = preset_table()[0];
        assert_eq!(p.params().unwrap(), p.params().unwrap());
    }

    #[test]
    fn stricter_levels_are_more_conservative() {
        for depth in 1..=3 {
            for bits in [0, 20, 41] {
                let a = select_preset(128, depth, bits).unwrap();
                let b = select_preset(192, depth, bits).unwrap();
                let c = select_preset(256, depth, bits).unwrap();
                assert!(a.poly_degree <= b.poly_degree && b.poly_degree <= c.poly_degree);
                assert!(a.size_key().0 <= b.size_key().0 && b.size_key().0 <= c.size_key().0);
            }
        }
    }

    #[test]
    fn depth_two_at_128_is_n4096() {
        assert_eq!(security_preset(128, 2).unwrap().poly_degree, 4096);
    }

    #[test]
    fn unknown_level_and_unreachable_depth() {
        assert!(matches!(security_preset(512, 1), Err(Error::Parameter(_))));
        assert!(matches!(
            security_preset(256, 50),
            Err(Error::DepthUnreachable(_))
        ));
    }

    #[test]
    fn small_preset_depth_matches_probe() {
        for p in preset_table().iter().filter(|p| p.poly_degree <= 8192) {
            assert_eq!(measure_depth_capacity(&p.params().unwrap(), 1).unwrap(), p.depth);
        }
    }
}
