//! Key and noise samplers. Not constant-time.

use rand::Rng;

use super::poly::RingPoly;

/// Standard deviation used for all error polynomials.
pub const DEFAULT_SIGMA: f64 = 3.2;

pub fn sample_uniform<R: Rng + ?Sized>(q: u64, n: usize, rng: &mut R) -> RingPoly {
    let coeffs = (0..n).map(|_| rng.gen_range(0..q)).collect();
    RingPoly::from_coeffs(coeffs, q).expect("uniform residues are in range")
}

/// Coefficients uniform over {-1, 0, 1}.
pub fn sample_ternary_signed<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1i64..=1)).collect()
}

pub fn sample_ternary<R: Rng + ?Sized>(n: usize, q: u64, rng: &mut R) -> RingPoly {
    RingPoly::from_signed(&sample_ternary_signed(n, rng), q)
}

/// Rounded Box-Muller samples with standard deviation `sigma`.
pub fn sample_gaussian_signed<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Vec<i64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // u1 in (0, 1] keeps ln finite
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt() * sigma;
        let theta = std::f64::consts::TAU * u2;
        out.push((r * theta.cos()).round() as i64);
        if out.len() < n {
            out.push((r * theta.sin()).round() as i64);
        }
    }
    out
}

pub fn sample_gaussian<R: Rng + ?Sized>(n: usize, sigma: f64, q: u64, rng: &mut R) -> RingPoly {
    RingPoly::from_signed(&sample_gaussian_signed(n, sigma, rng), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_stddev_within_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = sample_gaussian_signed(1_000_000, DEFAULT_SIGMA, &mut rng);
        let n = xs.len() as f64;
        let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        // rounding adds 1/12 to the variance
        let sd = var.sqrt();
        assert!((sd - 3.2).abs() / 3.2 < 0.02, "stddev {sd}");
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn ternary_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_ternary(4096, 97, &mut rng);
        assert!(p.coeffs().iter().all(|&c| c == 0 || c == 1 || c == 96));
        for v in [0, 1, 96] {
            assert!(p.coeffs().contains(&v));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = sample_uniform(97, 64, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_uniform(97, 64, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let g1 = sample_gaussian(64, 3.2, 97, &mut ChaCha8Rng::seed_from_u64(5));
        let g2 = sample_gaussian(64, 3.2, 97, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(g1, g2);
    }
}
