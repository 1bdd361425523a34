//! Precomputation for one parameter set, and every scheme operation.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::Rng;

use super::cipher::{Ciphertext, Plaintext, PreparedPlain};
use super::keys::{KeySet, PublicKey, RelinKeys, SecretKey};
use super::params::EncryptionParams;
use super::rns::{BaseConverter, RnsBase, RnsPoly};
use crate::error::{Error, Result};
use crate::modring::{
    ntt_primes, sample_gaussian_signed, sample_ternary_signed, Domain, Modulus, NttTables,
};

/// Upper bound on the number of products one [`BfvContext::dot_product`]
/// may accumulate before rescaling.
pub const MAX_DOT_TERMS: usize = 1 << 16;

/// A size-2 ciphertext lifted to centered integers over the extended base
/// and transformed; the operand form of [`BfvContext::dot_product`].
#[derive(Clone, Debug)]
pub struct LiftedCiphertext {
    parts: [Vec<Vec<u64>>; 2],
    params_id: u64,
}

/// Everything derived from an [`EncryptionParams`]. Immutable and shareable.
#[derive(Debug)]
pub struct BfvContext {
    params: EncryptionParams,
    params_id: u64,
    n: usize,
    q_base: RnsBase,
    q_tables: Vec<NttTables>,
    // Q followed by the extension primes used for exact tensoring
    ext_base: RnsBase,
    ext_tables: Vec<NttTables>,
    q_to_p: BaseConverter,
    p_to_q: BaseConverter,
    plain: Modulus,
    q_big: BigUint,
    two_q: BigUint,
    delta_mod_q: Vec<u64>,
    t_mod_q: Vec<u64>,
}

impl BfvContext {
    pub fn new(params: EncryptionParams) -> Result<Arc<Self>> {
        params.validate()?;
        let n = params.poly_degree;
        let q_primes = params.coeff_modulus.clone();
        let q_base = RnsBase::new(&q_primes);
        let q_tables = q_primes
            .iter()
            .map(|&q| NttTables::new(q, n))
            .collect::<Result<Vec<_>>>()?;

        // |tensor coefficient| <= n Q^2 / 2 per product, so P > 2 n Q F
        // covers sums of F products
        let need_bits = params.log_q() as usize
            + n.trailing_zeros() as usize
            + MAX_DOT_TERMS.trailing_zeros() as usize
            + 2;
        let p_count = need_bits.div_ceil(59);
        let mut exclude = q_primes.clone();
        exclude.push(params.plain_modulus);
        let p_primes = ntt_primes(61, n, p_count, &exclude)?;
        let p_base = RnsBase::new(&p_primes);
        let mut ext_primes = q_primes.clone();
        ext_primes.extend_from_slice(&p_primes);
        let ext_base = RnsBase::new(&ext_primes);
        let ext_tables = ext_primes
            .iter()
            .map(|&q| NttTables::new(q, n))
            .collect::<Result<Vec<_>>>()?;
        let q_to_p = BaseConverter::new(&q_base, p_base.moduli());
        let p_to_q = BaseConverter::new(&p_base, q_base.moduli());

        let t = params.plain_modulus;
        let q_big = q_base.product().clone();
        let delta = &q_big / t;
        let delta_mod_q = q_base.residues_of(&delta);
        let t_mod_q = q_base.moduli().iter().map(|m| m.reduce(t)).collect();
        let params_id = params.fingerprint();
        Ok(Arc::new(BfvContext {
            params,
            params_id,
            n,
            q_base,
            q_tables,
            ext_base,
            ext_tables,
            q_to_p,
            p_to_q,
            plain: Modulus::new(t),
            two_q: &q_big << 1,
            q_big,
            delta_mod_q,
            t_mod_q,
        }))
    }

    pub fn params(&self) -> &EncryptionParams {
        &self.params
    }

    pub fn params_id(&self) -> u64 {
        self.params_id
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn plain_modulus(&self) -> u64 {
        self.plain.value()
    }

    pub fn q_moduli(&self) -> &[Modulus] {
        self.q_base.moduli()
    }

    fn k(&self) -> usize {
        self.q_base.len()
    }

    fn check_id(&self, id: u64, what: &str) -> Result<()> {
        if id != self.params_id {
            return Err(Error::Usage(format!(
                "{what} belongs to parameter set {id:#018x}, context is {:#018x}",
                self.params_id
            )));
        }
        Ok(())
    }

    fn check_plain(&self, pt: &Plaintext) -> Result<()> {
        if pt.plain_modulus() != self.plain.value() || pt.degree() != self.n {
            return Err(Error::Usage(format!(
                "plaintext (n={}, t={}) does not match parameters (n={}, t={})",
                pt.degree(),
                pt.plain_modulus(),
                self.n,
                self.plain.value()
            )));
        }
        Ok(())
    }

    // ---- polynomial plumbing -------------------------------------------

    fn poly_from_signed(&self, c: &[i64]) -> RnsPoly {
        RnsPoly {
            residues: self
                .q_moduli()
                .iter()
                .map(|m| c.iter().map(|&x| m.reduce_i64(x)).collect())
                .collect(),
            domain: Domain::Coefficient,
        }
    }

    fn uniform_poly<R: Rng + ?Sized>(&self, rng: &mut R) -> RnsPoly {
        RnsPoly {
            residues: self
                .q_moduli()
                .iter()
                .map(|m| (0..self.n).map(|_| rng.gen_range(0..m.value())).collect())
                .collect(),
            domain: Domain::Evaluation,
        }
    }

    pub(crate) fn to_eval(&self, p: &mut RnsPoly) {
        if p.domain == Domain::Coefficient {
            for (r, t) in p.residues.iter_mut().zip(&self.q_tables) {
                t.forward(r);
            }
            p.domain = Domain::Evaluation;
        }
    }

    pub(crate) fn to_coeff(&self, p: &mut RnsPoly) {
        if p.domain == Domain::Evaluation {
            for (r, t) in p.residues.iter_mut().zip(&self.q_tables) {
                t.inverse(r);
            }
            p.domain = Domain::Coefficient;
        }
    }

    fn add_into(&self, acc: &mut RnsPoly, other: &RnsPoly) {
        debug_assert_eq!(acc.domain, other.domain);
        for ((a, b), m) in acc.residues.iter_mut().zip(&other.residues).zip(self.q_moduli()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = m.add(*x, y);
            }
        }
    }

    /// Pointwise product of two evaluation-domain polynomials.
    fn mul_eval(&self, a: &RnsPoly, b: &RnsPoly) -> RnsPoly {
        debug_assert!(a.domain == Domain::Evaluation && b.domain == Domain::Evaluation);
        RnsPoly {
            residues: a
                .residues
                .iter()
                .zip(&b.residues)
                .zip(self.q_moduli())
                .map(|((x, y), m)| x.iter().zip(y).map(|(&u, &v)| m.mul(u, v)).collect())
                .collect(),
            domain: Domain::Evaluation,
        }
    }

    fn mul_eval_into(&self, acc: &mut RnsPoly, a: &RnsPoly, b: &RnsPoly) {
        for (((o, x), y), m) in acc
            .residues
            .iter_mut()
            .zip(&a.residues)
            .zip(&b.residues)
            .zip(self.q_moduli())
        {
            for ((o, &u), &v) in o.iter_mut().zip(x).zip(y) {
                *o = m.mul_add(u, v, *o);
            }
        }
    }

    /// `Δ·m` in `Z_Q`, coefficient domain.
    fn scaled_plain(&self, pt: &Plaintext) -> RnsPoly {
        RnsPoly {
            residues: self
                .q_moduli()
                .iter()
                .zip(&self.delta_mod_q)
                .map(|(m, &d)| {
                    let ds = m.shoup(d);
                    pt.coeffs()
                        .iter()
                        .map(|&c| m.mul_shoup(m.reduce(c), d, ds))
                        .collect()
                })
                .collect(),
            domain: Domain::Coefficient,
        }
    }

    /// Centered lift of a plaintext from `Z_t` into `Z_Q`, coefficient domain.
    fn lifted_plain(&self, pt: &Plaintext) -> RnsPoly {
        let centered: Vec<i64> = pt.coeffs().iter().map(|&c| self.plain.center(c)).collect();
        self.poly_from_signed(&centered)
    }

    // ---- keys ----------------------------------------------------------

    /// Generates a fresh key set. Deterministic for a given RNG state.
    pub fn keygen<R: Rng + ?Sized>(&self, rng: &mut R) -> KeySet {
        let sigma = self.params.noise_sigma;
        let mut s = self.poly_from_signed(&sample_ternary_signed(self.n, rng));
        self.to_eval(&mut s);

        // public key (-(a s + e), a)
        let a = self.uniform_poly(rng);
        let mut e = self.poly_from_signed(&sample_gaussian_signed(self.n, sigma, rng));
        self.to_eval(&mut e);
        let mut p0 = self.mul_eval(&a, &s);
        self.add_into(&mut p0, &e);
        let p0 = self.negate(p0);
        let public_key = PublicKey {
            p0,
            p1: a,
            params_id: self.params_id,
        };

        // relinearization keys (-(a_j s + e_j) + 2^{wj} s^2, a_j)
        let s2 = self.mul_eval(&s, &s);
        let w = self.params.relin_decomposition_bits;
        let count = self.params.relin_key_count();
        let mut keys = Vec::with_capacity(count);
        for j in 0..count {
            let a = self.uniform_poly(rng);
            let mut e = self.poly_from_signed(&sample_gaussian_signed(self.n, sigma, rng));
            self.to_eval(&mut e);
            let mut k0 = self.mul_eval(&a, &s);
            self.add_into(&mut k0, &e);
            let mut k0 = self.negate(k0);
            for ((r, s2r), m) in k0.residues.iter_mut().zip(&s2.residues).zip(self.q_moduli()) {
                let f = m.pow(2, w as u64 * j as u64);
                let fs = m.shoup(f);
                for (x, &y) in r.iter_mut().zip(s2r) {
                    *x = m.add(*x, m.mul_shoup(y, f, fs));
                }
            }
            keys.push((k0, a));
        }
        KeySet {
            secret_key: SecretKey {
                poly: s,
                params_id: self.params_id,
            },
            public_key,
            relin_keys: RelinKeys {
                keys,
                digit_bits: w,
                params_id: self.params_id,
            },
        }
    }

    fn negate(&self, mut p: RnsPoly) -> RnsPoly {
        for (r, m) in p.residues.iter_mut().zip(self.q_moduli()) {
            for x in r.iter_mut() {
                *x = m.neg(*x);
            }
        }
        p
    }

    // ---- encryption ----------------------------------------------------

    pub fn encrypt<R: Rng + ?Sized>(
        &self,
        pt: &Plaintext,
        pk: &PublicKey,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        self.check_id(pk.params_id, "public key")?;
        self.check_plain(pt)?;
        let sigma = self.params.noise_sigma;
        let mut u = self.poly_from_signed(&sample_ternary_signed(self.n, rng));
        self.to_eval(&mut u);
        let mut c0 = self.mul_eval(&pk.p0, &u);
        let mut c1 = self.mul_eval(&pk.p1, &u);
        self.to_coeff(&mut c0);
        self.to_coeff(&mut c1);
        let e1 = self.poly_from_signed(&sample_gaussian_signed(self.n, sigma, rng));
        let e2 = self.poly_from_signed(&sample_gaussian_signed(self.n, sigma, rng));
        self.add_into(&mut c0, &e1);
        self.add_into(&mut c0, &self.scaled_plain(pt));
        self.add_into(&mut c1, &e2);
        Ok(Ciphertext {
            polys: vec![c0, c1],
            params_id: self.params_id,
        })
    }

    /// `[c_0 + c_1 s + c_2 s^2 + ...]_Q`, coefficient domain.
    fn phase(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<RnsPoly> {
        self.check_id(ct.params_id, "ciphertext")?;
        self.check_id(sk.params_id, "secret key")?;
        let mut acc = ct.polys[0].clone();
        self.to_eval(&mut acc);
        let mut s_pow = sk.poly.clone();
        for (i, c) in ct.polys.iter().enumerate().skip(1) {
            let mut c = c.clone();
            self.to_eval(&mut c);
            self.mul_eval_into(&mut acc, &c, &s_pow);
            if i + 1 < ct.polys.len() {
                s_pow = self.mul_eval(&s_pow, &sk.poly);
            }
        }
        self.to_coeff(&mut acc);
        Ok(acc)
    }

    /// `floor((2 t a + Q) / 2Q)` = `round(t a / Q)` for `0 <= a < Q` given
    /// by its mixed-radix digits. `Q` is odd so no ties occur.
    fn round_t_over_q(&self, q_digits: &[u64]) -> u64 {
        let a = self.q_base.digits_to_biguint(q_digits);
        let num = a * (2 * self.plain.value()) + &self.q_big;
        (num / &self.two_q).to_u64().expect("quotient bounded by t")
    }

    pub fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext> {
        let x = self.phase(ct, sk)?;
        let k = self.k();
        let t = self.plain.value();
        let mut res = vec![0u64; k];
        let mut digits = vec![0u64; k];
        let coeffs = (0..self.n)
            .map(|j| {
                for i in 0..k {
                    res[i] = x.residues[i][j];
                }
                self.q_base.mixed_radix(&res, &mut digits);
                self.round_t_over_q(&digits) % t
            })
            .collect();
        Plaintext::from_coeffs(coeffs, t)
    }

    /// Remaining noise budget in bits: `floor(-log2(2‖v‖∞))` for the invariant
    /// noise `v = [t·phase]_Q / Q`, clamped at zero.
    pub fn noise_budget(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<u32> {
        let x = self.phase(ct, sk)?;
        let k = self.k();
        let mut res = vec![0u64; k];
        let mut digits = vec![0u64; k];
        let mut max = BigUint::default();
        for j in 0..self.n {
            for (i, m) in self.q_moduli().iter().enumerate() {
                res[i] = m.mul(x.residues[i][j], self.t_mod_q[i]);
            }
            self.q_base.mixed_radix(&res, &mut digits);
            let v = self.q_base.digits_to_biguint(&digits);
            let mag = if self.q_base.digits_negative(&digits) {
                &self.q_big - v
            } else {
                v
            };
            if mag > max {
                max = mag;
            }
        }
        if max == BigUint::default() {
            return Ok(self.q_big.bits() as u32 - 1);
        }
        // largest b with 2^b * 2 max <= Q
        let denom: BigUint = max << 1u32;
        if denom > self.q_big {
            return Ok(0);
        }
        let mut b = (self.q_big.bits() - denom.bits()) as u32;
        if (&denom << b) > self.q_big {
            b -= 1;
        }
        Ok(b)
    }

    // ---- arithmetic ----------------------------------------------------

    fn aligned(&self, a: &Ciphertext, b: &Ciphertext) -> Result<()> {
        self.check_id(a.params_id, "left operand")?;
        self.check_id(b.params_id, "right operand")
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.aligned(a, b)?;
        let (long, short) = if a.size() >= b.size() { (a, b) } else { (b, a) };
        let mut out = long.clone();
        for (o, s) in out.polys.iter_mut().zip(&short.polys) {
            if o.domain == s.domain {
                self.add_into(o, s);
            } else {
                let mut s = s.clone();
                match o.domain {
                    Domain::Evaluation => self.to_eval(&mut s),
                    Domain::Coefficient => self.to_coeff(&mut s),
                }
                self.add_into(o, &s);
            }
        }
        Ok(out)
    }

    pub fn add_assign(&self, acc: &mut Ciphertext, b: &Ciphertext) -> Result<()> {
        *acc = self.add(acc, b)?;
        Ok(())
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.aligned(a, b)?;
        let mut neg = b.clone();
        neg.polys = neg.polys.into_iter().map(|p| self.negate(p)).collect();
        self.add(a, &neg)
    }

    pub fn add_plain(&self, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        self.check_id(a.params_id, "ciphertext")?;
        self.check_plain(pt)?;
        let mut out = a.clone();
        let mut dm = self.scaled_plain(pt);
        if out.polys[0].domain == Domain::Evaluation {
            self.to_eval(&mut dm);
        }
        self.add_into(&mut out.polys[0], &dm);
        Ok(out)
    }

    pub fn prepare_plain(&self, pt: &Plaintext) -> Result<PreparedPlain> {
        self.check_plain(pt)?;
        let mut poly = self.lifted_plain(pt);
        self.to_eval(&mut poly);
        Ok(PreparedPlain {
            poly,
            params_id: self.params_id,
        })
    }

    /// Product with a plaintext; no relinearization. Result is in the
    /// evaluation domain.
    pub fn multiply_plain(&self, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        let p = self.prepare_plain(pt)?;
        self.multiply_prepared(a, &p)
    }

    pub fn multiply_prepared(&self, a: &Ciphertext, p: &PreparedPlain) -> Result<Ciphertext> {
        self.check_id(a.params_id, "ciphertext")?;
        self.check_id(p.params_id, "plaintext operand")?;
        let polys = a
            .polys
            .iter()
            .map(|c| {
                let mut c = c.clone();
                self.to_eval(&mut c);
                self.mul_eval(&c, &p.poly)
            })
            .collect();
        Ok(Ciphertext {
            polys,
            params_id: self.params_id,
        })
    }

    /// Product with the constant plaintext `c` (same value in every slot).
    pub fn multiply_scalar(&self, a: &Ciphertext, c: u64) -> Result<Ciphertext> {
        self.check_id(a.params_id, "ciphertext")?;
        if c >= self.plain.value() {
            return Err(Error::Range(format!("scalar {c} not below plain modulus")));
        }
        let centered = self.plain.center(c);
        let mut out = a.clone();
        for p in out.polys.iter_mut() {
            for (r, m) in p.residues.iter_mut().zip(self.q_moduli()) {
                let f = m.reduce_i64(centered);
                let fs = m.shoup(f);
                for x in r.iter_mut() {
                    *x = m.mul_shoup(*x, f, fs);
                }
            }
        }
        Ok(out)
    }

    /// Lifts a coefficient-domain `Z_Q` polynomial to centered integers
    /// represented over `Q ∪ P`, then transforms every component.
    fn lift_to_ext(&self, p: &RnsPoly) -> Vec<Vec<u64>> {
        let k = self.k();
        let kp = self.ext_base.len() - k;
        let mut out: Vec<Vec<u64>> = p.residues.clone();
        out.extend((0..kp).map(|_| vec![0u64; self.n]));
        let mut res = vec![0u64; k];
        let mut digits = vec![0u64; k];
        for j in 0..self.n {
            for i in 0..k {
                res[i] = p.residues[i][j];
            }
            self.q_base.mixed_radix(&res, &mut digits);
            let neg = self.q_base.digits_negative(&digits);
            for t in 0..kp {
                out[k + t][j] = self.q_to_p.convert(&digits, neg, t);
            }
        }
        for (r, t) in out.iter_mut().zip(&self.ext_tables) {
            t.forward(r);
        }
        out
    }

    /// Exact `round(t·x/Q) mod Q` for a polynomial given over `Q ∪ P`
    /// (evaluation domain) whose centered value fits in `QP/2`.
    fn scale_down(&self, mut ext: Vec<Vec<u64>>) -> RnsPoly {
        for (r, t) in ext.iter_mut().zip(&self.ext_tables) {
            t.inverse(r);
        }
        let k = self.k();
        let kk = self.ext_base.len();
        let mut out = RnsPoly::zero(self.n, k, Domain::Coefficient);
        let mut res = vec![0u64; kk];
        let mut digits = vec![0u64; kk];
        for j in 0..self.n {
            for i in 0..kk {
                res[i] = ext[i][j];
            }
            self.ext_base.mixed_radix(&res, &mut digits);
            let neg = self.ext_base.digits_negative(&digits);
            let frac = self.round_t_over_q(&digits[..k]);
            for (i, m) in self.q_moduli().iter().enumerate() {
                let b = self.p_to_q.convert(&digits[k..], neg, i);
                out.residues[i][j] = m.mul_add(b, self.t_mod_q[i], m.reduce(frac));
            }
        }
        out
    }

    fn ext_mul(&self, i: usize, x: &[u64], y: &[u64]) -> Vec<u64> {
        let m = self.ext_tables[i].modulus();
        x.iter().zip(y).map(|(&a, &b)| m.mul(a, b)).collect()
    }

    /// Size-3 product without relinearization.
    pub fn tensor(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.aligned(a, b)?;
        if a.size() != 2 || b.size() != 2 {
            return Err(Error::Usage("multiplication expects size-2 ciphertexts".into()));
        }
        let coeff = |c: &RnsPoly| {
            let mut c = c.clone();
            self.to_coeff(&mut c);
            c
        };
        let same = a == b;
        let a0 = self.lift_to_ext(&coeff(&a.polys[0]));
        let a1 = self.lift_to_ext(&coeff(&a.polys[1]));
        let (b0, b1) = if same {
            (a0.clone(), a1.clone())
        } else {
            (
                self.lift_to_ext(&coeff(&b.polys[0])),
                self.lift_to_ext(&coeff(&b.polys[1])),
            )
        };
        let kk = self.ext_base.len();
        let mut d0 = Vec::with_capacity(kk);
        let mut d1 = Vec::with_capacity(kk);
        let mut d2 = Vec::with_capacity(kk);
        for i in 0..kk {
            let m = self.ext_tables[i].modulus();
            d0.push(self.ext_mul(i, &a0[i], &b0[i]));
            d2.push(self.ext_mul(i, &a1[i], &b1[i]));
            let cross: Vec<u64> = if same {
                a0[i].iter().zip(&a1[i]).map(|(&x, &y)| {
                    let p = m.mul(x, y);
                    m.add(p, p)
                }).collect()
            } else {
                a0[i]
                    .iter()
                    .zip(&b1[i])
                    .zip(a1[i].iter().zip(&b0[i]))
                    .map(|((&x, &y), (&u, &v))| m.add(m.mul(x, y), m.mul(u, v)))
                    .collect()
            };
            d1.push(cross);
        }
        Ok(Ciphertext {
            polys: vec![self.scale_down(d0), self.scale_down(d1), self.scale_down(d2)],
            params_id: self.params_id,
        })
    }

    pub fn lift(&self, ct: &Ciphertext) -> Result<LiftedCiphertext> {
        self.check_id(ct.params_id, "ciphertext")?;
        if ct.size() != 2 {
            return Err(Error::Usage("only size-2 ciphertexts can be lifted".into()));
        }
        let part = |c: &RnsPoly| {
            let mut c = c.clone();
            self.to_coeff(&mut c);
            self.lift_to_ext(&c)
        };
        Ok(LiftedCiphertext {
            parts: [part(&ct.polys[0]), part(&ct.polys[1])],
            params_id: self.params_id,
        })
    }

    /// `Σ a_i·b_i` over ciphertext pairs with one rescale and one
    /// relinearization for the whole sum. Decrypts to the same value as
    /// adding the individual products; the rounding noise is incurred once.
    pub fn dot_product(
        &self,
        pairs: &[(&LiftedCiphertext, &LiftedCiphertext)],
        rk: &RelinKeys,
    ) -> Result<Ciphertext> {
        self.check_id(rk.params_id, "relinearization keys")?;
        if pairs.is_empty() || pairs.len() > MAX_DOT_TERMS {
            return Err(Error::Usage(format!(
                "dot product needs 1..={MAX_DOT_TERMS} terms, got {}",
                pairs.len()
            )));
        }
        for (a, b) in pairs {
            self.check_id(a.params_id, "left operand")?;
            self.check_id(b.params_id, "right operand")?;
        }
        let kk = self.ext_base.len();
        let mut d = [
            vec![vec![0u64; self.n]; kk],
            vec![vec![0u64; self.n]; kk],
            vec![vec![0u64; self.n]; kk],
        ];
        for i in 0..kk {
            let m = self.ext_tables[i].modulus();
            let [d0, d1, d2] = &mut d;
            let (d0, d1, d2) = (&mut d0[i], &mut d1[i], &mut d2[i]);
            for (a, b) in pairs {
                let (a0, a1) = (&a.parts[0][i], &a.parts[1][i]);
                let (b0, b1) = (&b.parts[0][i], &b.parts[1][i]);
                for j in 0..self.n {
                    d0[j] = m.mul_add(a0[j], b0[j], d0[j]);
                    d1[j] = m.mul_add(a0[j], b1[j], m.mul_add(a1[j], b0[j], d1[j]));
                    d2[j] = m.mul_add(a1[j], b1[j], d2[j]);
                }
            }
        }
        let [d0, d1, d2] = d;
        let t = Ciphertext {
            polys: vec![self.scale_down(d0), self.scale_down(d1), self.scale_down(d2)],
            params_id: self.params_id,
        };
        self.relinearize(&t, rk)
    }

    /// Reduces a size-3 ciphertext to size 2. Output is in the evaluation domain.
    pub fn relinearize(&self, ct: &Ciphertext, rk: &RelinKeys) -> Result<Ciphertext> {
        self.check_id(ct.params_id, "ciphertext")?;
        self.check_id(rk.params_id, "relinearization keys")?;
        match ct.size() {
            2 => return Ok(ct.clone()),
            3 => {}
            s => {
                return Err(Error::Usage(format!(
                    "cannot relinearize a size-{s} ciphertext"
                )))
            }
        }
        let mut c2 = ct.polys[2].clone();
        self.to_coeff(&mut c2);
        let k = self.k();
        let w = rk.digit_bits as usize;
        let count = rk.keys.len();
        let mask = (1u64 << w) - 1;

        // base-2^w digits of every coefficient of c2 in [0, Q)
        let mut digit_polys = vec![vec![0u64; self.n]; count];
        let mut res = vec![0u64; k];
        let mut digits = vec![0u64; k];
        let mut limbs = Vec::with_capacity(k + 1);
        for j in 0..self.n {
            for i in 0..k {
                res[i] = c2.residues[i][j];
            }
            self.q_base.mixed_radix(&res, &mut digits);
            self.q_base.digits_to_limbs(&digits, &mut limbs);
            for (d, dp) in digit_polys.iter_mut().enumerate() {
                let bit = d * w;
                let (li, off) = (bit / 64, bit % 64);
                let lo = limbs.get(li).copied().unwrap_or(0) >> off;
                let hi = if off + w > 64 && off > 0 {
                    limbs.get(li + 1).copied().unwrap_or(0) << (64 - off)
                } else {
                    0
                };
                dp[j] = (lo | hi) & mask;
            }
        }

        let mut c0 = ct.polys[0].clone();
        let mut c1 = ct.polys[1].clone();
        self.to_eval(&mut c0);
        self.to_eval(&mut c1);
        let mut buf = vec![0u64; self.n];
        for i in 0..k {
            let m = &self.q_moduli()[i];
            for (dp, (k0, k1)) in digit_polys.iter().zip(&rk.keys) {
                buf.copy_from_slice(dp);
                self.q_tables[i].forward(&mut buf);
                let (o0, o1) = (&mut c0.residues[i], &mut c1.residues[i]);
                for j in 0..self.n {
                    o0[j] = m.mul_add(buf[j], k0.residues[i][j], o0[j]);
                    o1[j] = m.mul_add(buf[j], k1.residues[i][j], o1[j]);
                }
            }
        }
        Ok(Ciphertext {
            polys: vec![c0, c1],
            params_id: self.params_id,
        })
    }

    pub fn multiply(&self, a: &Ciphertext, b: &Ciphertext, rk: &RelinKeys) -> Result<Ciphertext> {
        self.check_id(rk.params_id, "relinearization keys")?;
        let t = self.tensor(a, b)?;
        self.relinearize(&t, rk)
    }

    pub fn square(&self, a: &Ciphertext, rk: &RelinKeys) -> Result<Ciphertext> {
        self.multiply(a, a, rk)
    }

    /// Converts every polynomial to the evaluation domain (cheaper plaintext
    /// products later; decrypts identically).
    pub fn to_evaluation(&self, ct: &mut Ciphertext) {
        for p in ct.polys.iter_mut() {
            self.to_eval(p);
        }
    }

    pub fn to_coefficient(&self, ct: &mut Ciphertext) {
        for p in ct.polys.iter_mut() {
            self.to_coeff(p);
        }
    }

    /// Encryption of zero with no noise; the additive identity.
    pub fn zero_ciphertext(&self) -> Ciphertext {
        Ciphertext {
            polys: vec![
                RnsPoly::zero(self.n, self.k(), Domain::Evaluation),
                RnsPoly::zero(self.n, self.k(), Domain::Evaluation),
            ],
            params_id: self.params_id,
        }
    }
}

/// Convenience wrapper: validates `params` and generates keys.
pub fn keygen<R: Rng + ?Sized>(
    params: &EncryptionParams,
    rng: &mut R,
) -> Result<(Arc<BfvContext>, KeySet)> {
    let ctx = BfvContext::new(params.clone())?;
    let keys = ctx.keygen(rng);
    Ok((ctx, keys))
}
