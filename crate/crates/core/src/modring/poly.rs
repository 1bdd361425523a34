use super::arith::Modulus;
use super::ntt::NttTables;
use crate::error::{Error, Result};

/// Which representation a polynomial's residues are stored in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Coefficient,
    /// Negacyclic NTT evaluations, bit-reversed order.
    Evaluation,
}

/// Element of `Z_q[x]/(x^n + 1)` for a single word-sized modulus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingPoly {
    coeffs: Vec<u64>,
    modulus: u64,
    domain: Domain,
}

impl RingPoly {
    pub fn zero(n: usize, q: u64) -> Self {
        RingPoly {
            coeffs: vec![0; n],
            modulus: q,
            domain: Domain::Coefficient,
        }
    }

    /// Coefficient-domain polynomial; every residue must already lie in `[0, q)`.
    pub fn from_coeffs(coeffs: Vec<u64>, q: u64) -> Result<Self> {
        Self::from_raw(coeffs, q, Domain::Coefficient)
    }

    pub fn from_raw(coeffs: Vec<u64>, q: u64, domain: Domain) -> Result<Self> {
        if !coeffs.len().is_power_of_two() {
            return Err(Error::Parameter(format!(
                "polynomial length {} is not a power of two",
                coeffs.len()
            )));
        }
        if let Some(c) = coeffs.iter().find(|&&c| c >= q) {
            return Err(Error::Range(format!("residue {c} not below modulus {q}")));
        }
        Ok(RingPoly {
            coeffs,
            modulus: q,
            domain,
        })
    }

    /// Reduces signed coefficients into `[0, q)`.
    pub fn from_signed(coeffs: &[i64], q: u64) -> Self {
        let m = Modulus::new(q);
        RingPoly {
            coeffs: coeffs.iter().map(|&c| m.reduce_i64(c)).collect(),
            modulus: q,
            domain: Domain::Coefficient,
        }
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<u64> {
        self.coeffs
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    fn check_tables(&self, tables: &NttTables) -> Result<()> {
        if tables.modulus().value() != self.modulus || tables.degree() != self.degree() {
            return Err(Error::Usage(format!(
                "NTT tables for (n={}, q={}) applied to (n={}, q={})",
                tables.degree(),
                tables.modulus().value(),
                self.degree(),
                self.modulus
            )));
        }
        Ok(())
    }

    fn check_compatible(&self, other: &RingPoly) -> Result<()> {
        if self.modulus != other.modulus || self.degree() != other.degree() {
            return Err(Error::Usage(format!(
                "ring mismatch: (n={}, q={}) vs (n={}, q={})",
                self.degree(),
                self.modulus,
                other.degree(),
                other.modulus
            )));
        }
        if self.domain != other.domain {
            return Err(Error::Usage("operands in different domains".into()));
        }
        Ok(())
    }

    pub fn to_evaluation(&mut self, tables: &NttTables) -> Result<()> {
        self.check_tables(tables)?;
        if self.domain == Domain::Coefficient {
            tables.forward(&mut self.coeffs);
            self.domain = Domain::Evaluation;
        }
        Ok(())
    }

    pub fn to_coefficient(&mut self, tables: &NttTables) -> Result<()> {
        self.check_tables(tables)?;
        if self.domain == Domain::Evaluation {
            tables.inverse(&mut self.coeffs);
            self.domain = Domain::Coefficient;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &RingPoly) -> Result<()> {
        self.check_compatible(other)?;
        let m = Modulus::new(self.modulus);
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a = m.add(*a, b);
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &RingPoly) -> Result<()> {
        self.check_compatible(other)?;
        let m = Modulus::new(self.modulus);
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a = m.sub(*a, b);
        }
        Ok(())
    }

    pub fn negate(&mut self) {
        let m = Modulus::new(self.modulus);
        for a in self.coeffs.iter_mut() {
            *a = m.neg(*a);
        }
    }

    pub fn scale(&mut self, c: u64) {
        let m = Modulus::new(self.modulus);
        let c = m.reduce(c);
        let cs = m.shoup(c);
        for a in self.coeffs.iter_mut() {
            *a = m.mul_shoup(*a, c, cs);
        }
    }

    /// Slot-wise product; both operands must be in the evaluation domain.
    pub fn pointwise_mul(&self, other: &RingPoly) -> Result<RingPoly> {
        self.check_compatible(other)?;
        if self.domain != Domain::Evaluation {
            return Err(Error::Usage("pointwise product needs evaluation domain".into()));
        }
        let m = Modulus::new(self.modulus);
        Ok(RingPoly {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| m.mul(a, b))
                .collect(),
            modulus: self.modulus,
            domain: Domain::Evaluation,
        })
    }
}

/// Negacyclic NTT of a coefficient-domain polynomial.
pub fn ntt_forward(p: &RingPoly, tables: &NttTables) -> Result<RingPoly> {
    if p.domain != Domain::Coefficient {
        return Err(Error::Usage("ntt_forward expects coefficient domain".into()));
    }
    let mut out = p.clone();
    out.to_evaluation(tables)?;
    Ok(out)
}

pub fn ntt_inverse(p: &RingPoly, tables: &NttTables) -> Result<RingPoly> {
    if p.domain != Domain::Evaluation {
        return Err(Error::Usage("ntt_inverse expects evaluation domain".into()));
    }
    let mut out = p.clone();
    out.to_coefficient(tables)?;
    Ok(out)
}

/// Product in `Z_q[x]/(x^n+1)` via the NTT; result in coefficient domain.
pub fn poly_mul(a: &RingPoly, b: &RingPoly, tables: &NttTables) -> Result<RingPoly> {
    if a.modulus != b.modulus || a.degree() != b.degree() {
        return Err(Error::Usage(format!(
            "ring mismatch: (n={}, q={}) vs (n={}, q={})",
            a.degree(),
            a.modulus,
            b.degree(),
            b.modulus
        )));
    }
    let mut x = a.clone();
    let mut y = b.clone();
    x.to_evaluation(tables)?;
    y.to_evaluation(tables)?;
    let mut z = x.pointwise_mul(&y)?;
    z.to_coefficient(tables)?;
    Ok(z)
}

/// Quadratic-time negacyclic convolution; the reference for [`poly_mul`].
pub fn schoolbook_mul(a: &RingPoly, b: &RingPoly) -> Result<RingPoly> {
    if a.modulus != b.modulus || a.degree() != b.degree() {
        return Err(Error::Usage("ring mismatch in schoolbook_mul".into()));
    }
    if a.domain != Domain::Coefficient || b.domain != Domain::Coefficient {
        return Err(Error::Usage("schoolbook_mul expects coefficient domain".into()));
    }
    let n = a.degree();
    let m = Modulus::new(a.modulus);
    let mut out = vec![0u64; n];
    for (i, &ai) in a.coeffs.iter().enumerate() {
        for (j, &bj) in b.coeffs.iter().enumerate() {
            let prod = m.mul(ai, bj);
            let k = i + j;
            if k < n {
                out[k] = m.add(out[k], prod);
            } else {
                // x^n = -1
                out[k - n] = m.sub(out[k - n], prod);
            }
        }
    }
    Ok(RingPoly {
        coeffs: out,
        modulus: a.modulus,
        domain: Domain::Coefficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modring::sample_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poly(c: &[u64], q: u64) -> RingPoly {
        RingPoly::from_coeffs(c.to_vec(), q).unwrap()
    }

    #[test]
    fn zero_transforms_to_zero() {
        let t = NttTables::new(17, 8).unwrap();
        let z = RingPoly::zero(8, 17);
        assert_eq!(ntt_forward(&z, &t).unwrap().coeffs(), &[0; 8]);
    }

    #[test]
    fn constant_transforms_to_all_slots() {
        let t = NttTables::new(17, 8).unwrap();
        let mut c = vec![0; 8];
        c[0] = 5;
        let p = poly(&c, 17);
        let f = ntt_forward(&p, &t).unwrap();
        assert!(f.coeffs().iter().all(|&x| x == 5));
        assert_eq!(ntt_inverse(&f, &t).unwrap(), p);
    }

    #[test]
    fn random_roundtrip_n8_q17() {
        let t = NttTables::new(17, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_uniform(17, 8, &mut rng);
            let back = ntt_inverse(&ntt_forward(&p, &t).unwrap(), &t).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn low_degree_product() {
        let t = NttTables::new(17, 4).unwrap();
        let a = poly(&[1, 1, 0, 0], 17);
        let expected = poly(&[1, 2, 1, 0], 17);
        assert_eq!(poly_mul(&a, &a, &t).unwrap(), expected);
        assert_eq!(schoolbook_mul(&a, &a).unwrap(), expected);
    }

    #[test]
    fn negacyclic_wrap() {
        let t = NttTables::new(17, 4).unwrap();
        let x3 = poly(&[0, 0, 0, 1], 17);
        let x = poly(&[0, 1, 0, 0], 17);
        let expected = poly(&[16, 0, 0, 0], 17);
        assert_eq!(schoolbook_mul(&x3, &x).unwrap(), expected);
        assert_eq!(poly_mul(&x3, &x, &t).unwrap(), expected);
    }

    #[test]
    fn mismatch_is_usage_error() {
        let t = NttTables::new(17, 4).unwrap();
        let a = RingPoly::zero(4, 17);
        let b = RingPoly::zero(4, 97);
        assert!(matches!(poly_mul(&a, &b, &t), Err(Error::Usage(_))));
        assert!(matches!(schoolbook_mul(&a, &b), Err(Error::Usage(_))));
        let c = RingPoly::zero(8, 17);
        assert!(matches!(ntt_forward(&c, &t), Err(Error::Usage(_))));
    }

    #[test]
    fn from_coeffs_validates() {
        assert!(RingPoly::from_coeffs(vec![0, 1, 2], 17).is_err());
        assert!(RingPoly::from_coeffs(vec![0, 17, 0, 0], 17).is_err());
    }
}
