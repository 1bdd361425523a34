use super::rns::RnsPoly;

/// Ternary secret, held in the evaluation domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey {
    pub(crate) poly: RnsPoly,
    pub(crate) params_id: u64,
}

/// RLWE sample `(-(a·s + e), a)`, evaluation domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) p0: RnsPoly,
    pub(crate) p1: RnsPoly,
    pub(crate) params_id: u64,
}

/// Key-switching material from `s^2` to `s`, one component per base-`2^w`
/// digit of the coefficient modulus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelinKeys {
    pub(crate) keys: Vec<(RnsPoly, RnsPoly)>,
    pub(crate) digit_bits: u32,
    pub(crate) params_id: u64,
}

impl RelinKeys {
    pub fn count(&self) -> usize {
        self.keys.len()
    }

    pub fn digit_bits(&self) -> u32 {
        self.digit_bits
    }

    pub fn params_id(&self) -> u64 {
        self.params_id
    }
}

impl PublicKey {
    pub fn params_id(&self) -> u64 {
        self.params_id
    }
}

impl SecretKey {
    pub fn params_id(&self) -> u64 {
        self.params_id
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySet {
    pub secret_key: SecretKey,
    pub public_key: PublicKey,
    pub relin_keys: RelinKeys,
}
