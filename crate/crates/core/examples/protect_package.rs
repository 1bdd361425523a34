//! Quantize and encrypt a trained model, build the deployment package and
//! check it carries neither the secret key nor cleartext in-scope weights.
//!
//! cargo run --release --example protect_package

use cipherdnn::agents::{protect_for_deployment, ProtectOptions};
use cipherdnn::bench::REFERENCE_EXPANSION_RATIO;
use cipherdnn::bfv::contains_secret_key;
use cipherdnn::nn::{train_sgd, ActivationKind, Architecture, Dataset, TrainConfig};
use cipherdnn::protect::{cleartext_weight_hits, DeploymentPackage, EncryptionScope, Vault};

fn main() -> cipherdnn::Result<()> {
    let data = Dataset::digits().pooled(2)?;
    let arch = Architecture::classifier(data.input_dim(), 8, data.class_count, ActivationKind::SquarePlusTwo);
    let config = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let model = train_sgd(&data, None, &arch, &config)?.model;

    let opts = ProtectOptions {
        scope: EncryptionScope::Full,
        delta: 1 << 4,
        ..ProtectOptions::default()
    };
    let p = protect_for_deployment(&model, "digits-full", &opts)?;
    let r = &p.report;
    println!(
        "preset n={} primes={} t={} bits, depth {}",
        p.preset.poly_degree, p.preset.prime_count, p.preset.plain_bits, p.preset.depth
    );
    println!(
        "encrypted {} parameters in {:.2}s: {} -> {} bytes (x{:.0}; reference {REFERENCE_EXPANSION_RATIO})",
        r.parameter_count, r.seconds, r.plaintext_bytes, r.ciphertext_bytes, r.ratio
    );

    let bytes = &p.package_bytes;
    println!("package: {} bytes", bytes.len());
    println!("secret key marker present: {}", contains_secret_key(bytes));
    println!("cleartext weight rows found: {}", cleartext_weight_hits(bytes, &p.qmodel, opts.scope));
    assert_eq!(DeploymentPackage::from_bytes(bytes)?, p.package);

    let dir = tempfile::tempdir()?;
    let vault = Vault::open(dir.path())?;
    vault.store(&p.record)?;
    println!("vault ids: {:?}", vault.list()?);
    Ok(())
}
