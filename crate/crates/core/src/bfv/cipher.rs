use super::rns::RnsPoly;
use crate::error::{Error, Result};
use crate::modring::RingPoly;

/// Element of `Z_t[x]/(x^n+1)`, coefficient domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plaintext {
    poly: RingPoly,
}

impl Plaintext {
    pub fn new(poly: RingPoly) -> Self {
        Plaintext { poly }
    }

    pub fn from_coeffs(coeffs: Vec<u64>, t: u64) -> Result<Self> {
        Ok(Plaintext {
            poly: RingPoly::from_coeffs(coeffs, t)?,
        })
    }

    /// The constant polynomial `c`; in batch form this is `c` in every slot.
    pub fn constant(c: u64, n: usize, t: u64) -> Result<Self> {
        if c >= t {
            return Err(Error::Range(format!("{c} not below plain modulus {t}")));
        }
        let mut coeffs = vec![0; n];
        coeffs[0] = c;
        Self::from_coeffs(coeffs, t)
    }

    pub fn zero(n: usize, t: u64) -> Self {
        Plaintext {
            poly: RingPoly::zero(n, t),
        }
    }

    pub fn coeffs(&self) -> &[u64] {
        self.poly.coeffs()
    }

    pub fn poly(&self) -> &RingPoly {
        &self.poly
    }

    pub fn plain_modulus(&self) -> u64 {
        self.poly.modulus()
    }

    pub fn degree(&self) -> usize {
        self.poly.degree()
    }
}

/// A BFV ciphertext: `size >= 2` polynomials over `Z_Q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub(crate) polys: Vec<RnsPoly>,
    pub(crate) params_id: u64,
}

impl Ciphertext {
    pub fn size(&self) -> usize {
        self.polys.len()
    }

    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    pub fn polys(&self) -> &[RnsPoly] {
        &self.polys
    }

    /// Raw residue payload in bytes (what dominates memory and wire size).
    pub fn byte_size(&self) -> usize {
        self.polys.iter().map(|p| p.byte_size()).sum()
    }
}

/// A plaintext lifted to `Z_Q` and transformed, ready for repeated products.
#[derive(Clone, Debug)]
pub struct PreparedPlain {
    pub(crate) poly: RnsPoly,
    pub(crate) params_id: u64,
}
