//! BFV-style leveled homomorphic encryption over `Z_Q[x]/(x^n+1)`.
//!
//! `Q` is a product of word-sized NTT primes held in RNS form. Ciphertext
//! multiplication tensors the operands over the integers exactly (through an
//! auxiliary RNS base large enough to hold `n·Q²`), rescales by `t/Q` with
//! round-half-away-from-zero, and relinearizes with base-`2^w` digit keys.
//!
//! Noise budgets are measured exactly from the secret key; they are meant
//! for the backend and for tests, never for the edge.

mod cipher;
mod context;
mod keys;
mod params;
mod presets;
mod rns;
mod serial;

pub use cipher::{Ciphertext, Plaintext, PreparedPlain};
pub use context::{keygen, BfvContext, LiftedCiphertext, MAX_DOT_TERMS};
pub use keys::{KeySet, PublicKey, RelinKeys, SecretKey};
pub use params::{EncryptionParams, SecurityLevel, DEFAULT_RELIN_BITS};
pub use presets::{
    measure_depth_capacity, preset_candidates, preset_table, security_preset, select_preset, Preset,
    PROBE_MARGIN_BITS,
};
pub use rns::RnsPoly;
pub use serial::{contains_secret_key, SECRET_KEY_MARKER, SECRET_KEY_TAG};

pub(crate) use params::fnv1a;

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::modring::ntt_primes;
    use std::sync::Arc;

    /// Small insecure parameters: n = 16, t = 97, Q ≈ 2^100.
    pub fn toy_params() -> EncryptionParams {
        EncryptionParams::insecure(16, ntt_primes(50, 16, 2, &[]).unwrap(), 97)
    }

    pub fn toy() -> (Arc<BfvContext>, KeySet) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        keygen(&toy_params(), &mut rng).unwrap()
    }
}
