//! Backend and edge over loopback TCP: deploy, submit a job, decrypt.
//!
//! cargo run --release --example edge_loopback

use cipherdnn::agents::{backend_decrypt, prepare_job, protect_for_deployment, spawn_edge, EdgeClient, ProtectOptions};
use cipherdnn::einfer::{Engine, InputMode};
use cipherdnn::nn::{train_sgd, ActivationKind, Architecture, Dataset, TrainConfig};
use cipherdnn::protect::{EncryptionScope, Vault};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> cipherdnn::Result<()> {
    let dir = tempfile::tempdir()?;
    let edge = spawn_edge("127.0.0.1:0", dir.path().join("edge"))?;
    let vault = Vault::open(dir.path().join("vault"))?;
    println!("edge on {}", edge.addr());

    let data = Dataset::digits().pooled(2)?;
    let (train, test) = data.split(0.8, 2);
    let arch = Architecture::classifier(train.input_dim(), 8, train.class_count, ActivationKind::None);
    let model = train_sgd(&train, None, &arch, &TrainConfig { epochs: 30, ..TrainConfig::default() })?.model;
    let opts = ProtectOptions {
        scope: EncryptionScope::Full,
        delta: 1 << 6,
        ..ProtectOptions::default()
    };
    let p = protect_for_deployment(&model, "digits-linear", &opts)?;
    vault.store(&p.record)?;

    let mut client = EdgeClient::connect(edge.addr())?;
    println!("{}", client.deploy(&p.package_bytes)?);
    println!("{}", client.status()?);

    // The backend keeps its own engine only to encrypt inputs with the public key.
    let engine = Engine::new(p.package)?;
    let batch = test.take(50);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for (id, mode) in [(1, InputMode::Plaintext), (2, InputMode::Encrypted)] {
        let job = prepare_job(&engine, id, mode, batch.features.clone(), &mut rng)?;
        let resp = client.infer(&job)?;
        let (out, trace) = backend_decrypt(&resp, &vault)?;
        let hits = out.classes.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
        println!(
            "job {id} {:9} edge {:.0} ms, final budget {} bits, accuracy {hits}/{}",
            mode.as_str(),
            resp.edge_ms,
            out.final_budget,
            batch.len()
        );
        print!("{}", trace.to_csv());
    }
    edge.shutdown();
    Ok(())
}
