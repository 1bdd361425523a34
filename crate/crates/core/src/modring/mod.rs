//! Arithmetic in the negacyclic ring `Z_q[x]/(x^n + 1)` for word-sized primes.
//!
//! Everything here is a pure function of its inputs. Nothing is constant-time.

mod arith;
mod ntt;
mod poly;
mod primes;
mod sample;

pub use arith::{Modulus, MAX_MODULUS};
pub use ntt::NttTables;
pub use poly::{ntt_forward, ntt_inverse, poly_mul, schoolbook_mul, Domain, RingPoly};
pub use primes::{is_prime, ntt_primes, primitive_root_2n, PrimeModulus};
pub use sample::{
    sample_gaussian, sample_gaussian_signed, sample_ternary, sample_ternary_signed,
    sample_uniform, DEFAULT_SIGMA,
};

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn ring(n: usize) -> (u64, NttTables) {
        let q = ntt_primes(30, n, 1, &[]).unwrap()[0];
        (q, NttTables::new(q, n).unwrap())
    }

    fn arb_poly(n: usize, q: u64) -> impl Strategy<Value = RingPoly> {
        proptest::collection::vec(0..q, n).prop_map(move |c| RingPoly::from_coeffs(c, q).unwrap())
    }

    proptest! {
        #[test]
        fn distributes_and_commutes(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (q, t) = ring(16);
            let a = sample_uniform(q, 16, &mut rng);
            let b = sample_uniform(q, 16, &mut rng);
            let c = sample_uniform(q, 16, &mut rng);
            let mut bc = b.clone();
            bc.add_assign(&c).unwrap();
            let lhs = poly_mul(&a, &bc, &t).unwrap();
            let mut rhs = poly_mul(&a, &b, &t).unwrap();
            rhs.add_assign(&poly_mul(&a, &c, &t).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
            prop_assert_eq!(poly_mul(&a, &b, &t).unwrap(), poly_mul(&b, &a, &t).unwrap());
        }

        #[test]
        fn roundtrip_n64(p in arb_poly(64, 12289)) {
            let t = NttTables::new(12289, 64).unwrap();
            let back = ntt_inverse(&ntt_forward(&p, &t).unwrap(), &t).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
