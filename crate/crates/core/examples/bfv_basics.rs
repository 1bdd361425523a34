//! Encrypt a batch at the 128-bit preset, add and multiply homomorphically,
//! and watch the noise budget shrink.
//!
//! cargo run --release --example bfv_basics

use cipherdnn::bfv::{keygen, select_preset};
use cipherdnn::encode::BatchLayout;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> cipherdnn::Result<()> {
    let preset = select_preset(128, 2, 17)?;
    let params = preset.params()?;
    println!(
        "n={} primes={} log q={} t={}",
        params.poly_degree,
        params.coeff_modulus.len(),
        params.log_q(),
        params.plain_modulus
    );

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (ctx, keys) = keygen(&params, &mut rng)?;
    let layout = BatchLayout::new(ctx.degree(), ctx.plain_modulus())?;
    let t = ctx.plain_modulus();

    let a: Vec<u64> = (0..8).collect();
    let b: Vec<u64> = (0..8).map(|i| 100 + i).collect();
    let ca = ctx.encrypt(&layout.encode(&a)?, &keys.public_key, &mut rng)?;
    let cb = ctx.encrypt(&layout.encode(&b)?, &keys.public_key, &mut rng)?;
    println!("fresh budget: {} bits", ctx.noise_budget(&ca, &keys.secret_key)?);

    let sum = ctx.add(&ca, &cb)?;
    let prod = ctx.multiply(&ca, &cb, &keys.relin_keys)?;
    let cube = ctx.multiply(&prod, &ca, &keys.relin_keys)?;

    for (name, ct) in [("a+b", &sum), ("a*b", &prod), ("a*b*a", &cube)] {
        let slots = layout.decode(&ctx.decrypt(ct, &keys.secret_key)?)?;
        println!(
            "{name:6} budget={:3} bits  first slots={:?}",
            ctx.noise_budget(ct, &keys.secret_key)?,
            &slots[..8]
        );
    }
    let want: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x * y % t * x % t).collect();
    let got = layout.decode(&ctx.decrypt(&cube, &keys.secret_key)?)?;
    assert_eq!(&got[..8], &want[..]);
    Ok(())
}
