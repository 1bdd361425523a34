//! Slot batching and fixed-point scaling.
//!
//! With `t ≡ 1 (mod 2n)` the plaintext ring `Z_t[x]/(x^n+1)` splits into `n`
//! copies of `Z_t`; the negacyclic NTT mod `t` is that isomorphism, so a
//! batch is encoded by running the inverse transform over the slot values.
//! Slot order is the transform's evaluation order; nothing here rotates
//! slots, so the order only has to be consistent.

use serde::{Deserialize, Serialize};

use crate::bfv::Plaintext;
use crate::error::{Error, Result};
use crate::modring::{Domain, Modulus, NttTables, RingPoly};

#[derive(Debug)]
pub struct BatchLayout {
    tables: NttTables,
}

impl BatchLayout {
    pub fn new(slot_count: usize, plain_modulus: u64) -> Result<Self> {
        Ok(BatchLayout {
            tables: NttTables::new(plain_modulus, slot_count)?,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.tables.degree()
    }

    pub fn plain_modulus(&self) -> u64 {
        self.tables.modulus().value()
    }

    /// Encodes up to `slot_count` values; missing slots are zero.
    pub fn encode(&self, values: &[u64]) -> Result<Plaintext> {
        let n = self.slot_count();
        let t = self.plain_modulus();
        if values.len() > n {
            return Err(Error::Dimension(format!(
                "{} values for {n} slots",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v >= t) {
            return Err(Error::Range(format!("slot value {v} not below {t}")));
        }
        let mut slots = values.to_vec();
        slots.resize(n, 0);
        let mut poly = RingPoly::from_raw(slots, t, Domain::Evaluation)?;
        poly.to_coefficient(&self.tables)?;
        Ok(Plaintext::new(poly))
    }

    /// Every slot holds `value`. Same as the constant polynomial.
    pub fn encode_constant(&self, value: u64) -> Result<Plaintext> {
        Plaintext::constant(value, self.slot_count(), self.plain_modulus())
    }

    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<u64>> {
        if pt.degree() != self.slot_count() || pt.plain_modulus() != self.plain_modulus() {
            return Err(Error::Usage("plaintext does not match the batch layout".into()));
        }
        let mut poly = pt.poly().clone();
        poly.to_evaluation(&self.tables)?;
        Ok(poly.into_coeffs())
    }
}

pub fn batch_encode(layout: &BatchLayout, values: &[u64]) -> Result<Plaintext> {
    layout.encode(values)
}

pub fn batch_decode(layout: &BatchLayout, pt: &Plaintext) -> Result<Vec<u64>> {
    layout.decode(pt)
}

/// Current fixed-point scale: a value carries the factor `Δ^power`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleState {
    pub power: u32,
}

impl ScaleState {
    pub const fn new(power: u32) -> Self {
        ScaleState { power }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleOp {
    Add,
    Mul,
}

pub fn compose_scales(op: ScaleOp, a: ScaleState, b: ScaleState) -> Result<ScaleState> {
    match op {
        ScaleOp::Add if a.power != b.power => Err(Error::ScaleMismatch {
            left: a.power,
            right: b.power,
        }),
        ScaleOp::Add => Ok(a),
        ScaleOp::Mul => Ok(ScaleState::new(a.power + b.power)),
    }
}

/// Fixed-point codec: reals become `round(Δ^k·x)` mapped into `Z_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale: u64,
    plain_modulus: u64,
}

impl FixedPointCodec {
    pub fn new(scale: u64, plain_modulus: u64) -> Result<Self> {
        if scale < 2 || !scale.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "scale {scale} is not a power of two >= 2"
            )));
        }
        if plain_modulus < 3 {
            return Err(Error::Parameter("plain modulus too small".into()));
        }
        Ok(FixedPointCodec {
            scale,
            plain_modulus,
        })
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn plain_modulus(&self) -> u64 {
        self.plain_modulus
    }

    /// `Δ^power` as an exact integer, if it fits.
    pub fn scale_pow(&self, power: u32) -> Option<i128> {
        (self.scale as i128).checked_pow(power)
    }

    fn scale_pow_f64(&self, power: u32) -> f64 {
        (self.scale as f64).powi(power as i32)
    }

    /// Largest magnitude an exact integer may have without wrapping mod `t`.
    pub fn max_magnitude(&self) -> i128 {
        (self.plain_modulus as i128 - 1) / 2
    }

    /// `round(Δ^power·x)` as a signed integer, range-checked against `t/2`.
    pub fn quantize(&self, x: f64, power: u32) -> Result<i128> {
        if !x.is_finite() {
            return Err(Error::QuantizationOverflow(format!("non-finite value {x}")));
        }
        let v = (x * self.scale_pow_f64(power)).round();
        if v.abs() > self.max_magnitude() as f64 {
            return Err(Error::QuantizationOverflow(format!(
                "{x} at scale {}^{power} exceeds the plaintext range",
                self.scale
            )));
        }
        Ok(v as i128)
    }

    /// Signed integer to its residue in `[0, t)`; negatives land in the upper half.
    pub fn to_slot(&self, v: i128) -> u64 {
        v.rem_euclid(self.plain_modulus as i128) as u64
    }

    /// Centered lift of a residue: values `>= t/2` become negative.
    pub fn from_slot(&self, s: u64) -> i128 {
        Modulus::new(self.plain_modulus).center(s % self.plain_modulus) as i128
    }

    pub fn encode(&self, xs: &[f64], power: u32) -> Result<(Vec<u64>, ScaleState)> {
        let slots = xs
            .iter()
            .map(|&x| self.quantize(x, power).map(|v| self.to_slot(v)))
            .collect::<Result<Vec<_>>>()?;
        Ok((slots, ScaleState::new(power)))
    }

    pub fn decode(&self, slots: &[u64], state: ScaleState) -> Vec<f64> {
        let d = self.scale_pow_f64(state.power);
        slots.iter().map(|&s| self.from_slot(s) as f64 / d).collect()
    }
}

pub fn fix_encode(
    xs: &[f64],
    codec: &FixedPointCodec,
    power: u32,
) -> Result<(Vec<u64>, ScaleState)> {
    codec.encode(xs, power)
}

pub fn fix_decode(slots: &[u64], codec: &FixedPointCodec, state: ScaleState) -> Vec<f64> {
    codec.decode(slots, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::testing::toy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn t40() -> u64 {
        crate::modring::ntt_primes(40, 16384, 1, &[]).unwrap()[0]
    }

    #[test]
    fn zero_and_one_hot_roundtrip() {
        let layout = BatchLayout::new(16, 97).unwrap();
        let zero = layout.encode(&[0; 16]).unwrap();
        assert!(zero.coeffs().iter().all(|&c| c == 0));
        assert_eq!(layout.decode(&zero).unwrap(), vec![0; 16]);
        for j in 0..16 {
            let mut v = vec![0; 16];
            v[j] = 1;
            assert_eq!(layout.decode(&layout.encode(&v).unwrap()).unwrap(), v);
        }
    }

    #[test]
    fn constant_fills_every_slot() {
        let layout = BatchLayout::new(16, 97).unwrap();
        let c = layout.encode_constant(42).unwrap();
        assert_eq!(layout.decode(&c).unwrap(), vec![42; 16]);
        assert_eq!(layout.encode(&[42; 16]).unwrap(), c);
    }

    #[test]
    fn short_batches_are_zero_padded_and_bad_values_rejected() {
        let layout = BatchLayout::new(16, 97).unwrap();
        let d = layout.decode(&layout.encode(&[5, 6]).unwrap()).unwrap();
        assert_eq!(&d[..2], &[5, 6]);
        assert!(d[2..].iter().all(|&v| v == 0));
        assert!(matches!(layout.encode(&[97]), Err(Error::Range(_))));
        assert!(matches!(layout.encode(&[0; 17]), Err(Error::Dimension(_))));
        assert!(BatchLayout::new(16, 65).is_err());
    }

    #[test]
    fn random_roundtrip_and_slot_semantics() {
        let (ctx, keys) = toy();
        let layout = BatchLayout::new(16, 97).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let u: Vec<u64> = (0..16).map(|_| rng.gen_range(0..97)).collect();
            let v: Vec<u64> = (0..16).map(|_| rng.gen_range(0..97)).collect();
            let pu = layout.encode(&u).unwrap();
            let pv = layout.encode(&v).unwrap();
            assert_eq!(layout.decode(&pu).unwrap(), u);
            let cu = ctx.encrypt(&pu, &keys.public_key, &mut rng).unwrap();
            let cv = ctx.encrypt(&pv, &keys.public_key, &mut rng).unwrap();
            let prod = ctx.multiply(&cu, &cv, &keys.relin_keys).unwrap();
            let got = layout.decode(&ctx.decrypt(&prod, &keys.secret_key).unwrap()).unwrap();
            let expect: Vec<u64> = u.iter().zip(&v).map(|(a, b)| a * b % 97).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn fixed_point_examples() {
        let t = t40();
        let c = FixedPointCodec::new(1024, t).unwrap();
        assert_eq!(c.encode(&[0.5], 1).unwrap().0, vec![512]);
        assert_eq!(c.encode(&[-0.5], 1).unwrap().0, vec![t - 512]);
        assert_eq!(c.decode(&[t - 1], ScaleState::new(1)), vec![-1.0 / 1024.0]);
        assert_eq!(c.decode(&[0, 0], ScaleState::new(3)), vec![0.0, 0.0]);
        // half-way values round away from zero
        assert_eq!(c.quantize(0.5 / 1024.0, 1).unwrap(), 1);
        assert_eq!(c.quantize(-0.5 / 1024.0, 1).unwrap(), -1);
    }

    #[test]
    fn overflow_is_an_error() {
        let c = FixedPointCodec::new(1024, 1_000_003).unwrap();
        // t/(2Δ) ≈ 488.28
        assert!(c.quantize(488.0, 1).is_ok());
        assert!(matches!(
            c.quantize(489.0, 1),
            Err(Error::QuantizationOverflow(_))
        ));
        assert!(c.quantize(0.25, 2).is_ok());
        assert!(c.quantize(0.5, 2).is_err());
        assert!(c.quantize(f64::NAN, 1).is_err());
        assert!(FixedPointCodec::new(1000, 97).is_err());
        assert!(FixedPointCodec::new(1, 97).is_err());
    }

    #[test]
    fn scale_composition() {
        let k = ScaleState::new;
        assert_eq!(compose_scales(ScaleOp::Add, k(2), k(2)).unwrap(), k(2));
        assert_eq!(compose_scales(ScaleOp::Mul, k(1), k(1)).unwrap(), k(2));
        assert!(matches!(
            compose_scales(ScaleOp::Add, k(1), k(2)),
            Err(Error::ScaleMismatch { left: 1, right: 2 })
        ));
    }

    proptest! {
        #[test]
        fn quantization_error_bounded(x in -100.0f64..100.0, power in 1u32..3) {
            let c = FixedPointCodec::new(1024, t40()).unwrap();
            let (s, st) = c.encode(&[x], power).unwrap();
            let back = c.decode(&s, st)[0];
            let bound = 0.5 / (1024f64).powi(power as i32);
            prop_assert!((back - x).abs() <= bound * (1.0 + 1e-9));
        }
    }
}
