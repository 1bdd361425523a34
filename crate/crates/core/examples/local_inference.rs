//! Run encrypted inference in-process for both input modes and check the
//! decrypted integers against the exact integer forward pass.
//!
//! cargo run --release --example local_inference

use cipherdnn::agents::{protect_for_deployment, ProtectOptions};
use cipherdnn::einfer::{decrypt_output, Engine, InferenceInput, InputMode};
use cipherdnn::nn::{oracle_forward_int, train_sgd, ActivationKind, Architecture, Dataset, TrainConfig};
use cipherdnn::protect::EncryptionScope;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> cipherdnn::Result<()> {
    let data = Dataset::digits().pooled(2)?;
    let (train, test) = data.split(0.8, 1);
    let arch = Architecture::classifier(train.input_dim(), 16, train.class_count, ActivationKind::Relu);
    let model = train_sgd(&train, None, &arch, &TrainConfig { epochs: 30, ..TrainConfig::default() })?.model;

    let p = protect_for_deployment(
        &model,
        "digits-last",
        &ProtectOptions {
            scope: EncryptionScope::LastLayer,
            ..ProtectOptions::default()
        },
    )?;
    let keys = &p.record.keys;
    let engine = Engine::new(p.package)?;
    let batch = test.take(100);
    let expected: Vec<Vec<u64>> = batch
        .features
        .iter()
        .map(|x| oracle_forward_int(&p.qmodel, &p.qmodel.quantize_input(x)?))
        .collect::<cipherdnn::Result<_>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for mode in [InputMode::Plaintext, InputMode::Encrypted] {
        let out = engine.run(
            InferenceInput::Features(batch.features.clone()),
            mode,
            Some(&keys.secret_key),
            &mut rng,
        )?;
        let dec = decrypt_output(engine.context(), &out.logits, &keys.secret_key, &p.qmodel.codec)?;
        let agree = dec
            .classes
            .iter()
            .zip(&batch.features)
            .filter(|(c, x)| model.predict(x).ok() == Some(**c))
            .count();
        println!(
            "{:9} exact={} budget={} bits, {:.0} ms, argmax agreement with float model {agree}/100",
            mode.as_str(),
            dec.residues == expected,
            dec.final_budget,
            out.trace.total_ms()
        );
        print!("{}", out.trace.to_csv());
    }
    Ok(())
}
