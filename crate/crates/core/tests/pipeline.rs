use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use cipherdnn::agents::{
    backend_decrypt, backend_infer, prepare_job, protect_for_deployment, spawn_edge, EdgeClient,
    ProtectOptions,
};
use cipherdnn::bfv::contains_secret_key;
use cipherdnn::einfer::{Engine, InputMode};
use cipherdnn::nn::{oracle_forward_int, train_sgd, ActivationKind, Architecture, Dataset, TrainConfig};
use cipherdnn::protect::{EncryptionScope, Vault};
use cipherdnn::Error;

#[test]
fn digits_over_loopback_match_the_oracle() {
    let data = Dataset::digits();
    let (train, test) = data.split(0.8, 11);
    let arch = Architecture::classifier(train.input_dim(), 12, train.class_count, ActivationKind::Relu);
    let config = TrainConfig {
        epochs: 30,
        seed: 11,
        ..TrainConfig::default()
    };
    let model = train_sgd(&train, None, &arch, &config).unwrap().model;
    let p = protect_for_deployment(&model, "digits", &ProtectOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let edge = spawn_edge("127.0.0.1:0", dir.path().join("edge")).unwrap();
    let vault = Vault::open(dir.path().join("vault")).unwrap();
    vault.store(&p.record).unwrap();
    let mut client = EdgeClient::connect(edge.addr()).unwrap();
    client.deploy(&p.package_bytes).unwrap();

    let engine = Engine::new(p.package.clone()).unwrap();
    let batch = test.take(100);
    let expected: Vec<Vec<u64>> = batch
        .features
        .iter()
        .map(|x| oracle_forward_int(&p.qmodel, &p.qmodel.quantize_input(x).unwrap()).unwrap())
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for (id, mode) in [(10, InputMode::Plaintext), (11, InputMode::Encrypted)] {
        let job = prepare_job(&engine, id, mode, batch.features.clone(), &mut rng).unwrap();
        let resp = client.infer(&job).unwrap();
        let (out, trace) = backend_decrypt(&resp, &vault).unwrap();
        assert_eq!(out.residues, expected, "{mode:?}");
        assert!(out.final_budget > 0);
        assert_eq!(trace.final_budget(), Some(out.final_budget));
        let agree = batch
            .features
            .iter()
            .zip(&out.classes)
            .filter(|(x, &c)| model.predict(x).unwrap() == c)
            .count();
        assert!(agree >= 99, "{agree}/100 agree with the float model");
    }
    for e in std::fs::read_dir(dir.path().join("edge/models")).unwrap() {
        let path = e.unwrap().path();
        assert_eq!(path.extension().and_then(|s| s.to_str()), Some("cdpk"), "stray file {path:?}");
        assert!(!contains_secret_key(&std::fs::read(&path).unwrap()));
    }
}

#[test]
fn redeploy_replaces_the_model_and_unknown_ids_fail() {
    let data = Dataset::digits().pooled(4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let edge = spawn_edge("127.0.0.1:0", dir.path().join("edge")).unwrap();
    let vault = Vault::open(dir.path().join("vault")).unwrap();
    let engine_for = |seed: u64| {
        let arch = Architecture::classifier(4, 3, 10, ActivationKind::None);
        let config = TrainConfig {
            epochs: 3,
            seed,
            ..TrainConfig::default()
        };
        let model = train_sgd(&data, None, &arch, &config).unwrap().model;
        let opts = ProtectOptions {
            scope: EncryptionScope::Full,
            delta: 1 << 6,
            seed,
            ..ProtectOptions::default()
        };
        protect_for_deployment(&model, "m", &opts).unwrap()
    };
    let first = engine_for(1);
    let second = engine_for(2);
    let mut client = EdgeClient::connect(edge.addr()).unwrap();
    client.deploy(&first.package_bytes).unwrap();
    client.deploy(&second.package_bytes).unwrap();
    vault.store(&second.record).unwrap();

    let engine = Engine::new(second.package).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let job = prepare_job(&engine, 1, InputMode::Encrypted, data.take(3).features, &mut rng).unwrap();
    let resp = backend_infer(edge.addr(), &job).unwrap();
    backend_decrypt(&resp, &vault).unwrap();

    let mut other = job.clone();
    other.model_id = "missing".into();
    match client.infer(&other) {
        Err(Error::Remote(m)) => assert!(m.contains("kind=not_found"), "{m}"),
        r => panic!("{r:?}"),
    }
}
