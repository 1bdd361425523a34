//! Negacyclic multiplication in Z_q[x]/(x^n+1): NTT against schoolbook.
//!
//! cargo run --release --example ntt_ring

use cipherdnn::modring::{ntt_primes, poly_mul, sample_uniform, schoolbook_mul, NttTables, RingPoly};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> cipherdnn::Result<()> {
    // x^3 · x = -1 when n = 4
    let q = 17;
    let tables = NttTables::new(q, 4)?;
    let x3 = RingPoly::from_coeffs(vec![0, 0, 0, 1], q)?;
    let x = RingPoly::from_coeffs(vec![0, 1, 0, 0], q)?;
    println!("x^3 * x mod (x^4+1, 17) = {:?}", poly_mul(&x3, &x, &tables)?.coeffs());

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for n in [8usize, 32, 1024] {
        let q = ntt_primes(50, n, 1, &[])?[0];
        let tables = NttTables::new(q, n)?;
        let a = sample_uniform(q, n, &mut rng);
        let b = sample_uniform(q, n, &mut rng);
        let fast = poly_mul(&a, &b, &tables)?;
        let slow = schoolbook_mul(&a, &b)?;
        println!("n={n:5} q={q} ntt == schoolbook: {}", fast == slow);
    }
    Ok(())
}
