use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use cipherdnn::agents::{
    backend_decrypt, backend_deploy, backend_infer, edge_serve, largest_delta, plan_protection, prepare_job,
    protect_for_deployment, run_job, InferResponse, ProtectOptions,
};
use cipherdnn::bench::{
    accuracy_report, digits_variant_models, encryption_report, run_matrix, BenchConfig, Variant,
    REFERENCE_EXPANSION_RATIO,
};
use cipherdnn::bfv::SecurityLevel;
use cipherdnn::einfer::{Engine, InputMode};
use cipherdnn::nn::{accuracy, train_sgd, ActivationKind, Architecture, Dataset, ModelSpec, TrainConfig};
use cipherdnn::protect::{DeploymentPackage, EncryptionScope, Vault};
use cipherdnn::{Error, Result};

#[derive(Parser)]
#[command(name = "cipherdnn", version, about = "Encrypted dense-network inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a [FC -> act -> FC] classifier.
    Train(TrainArgs),
    /// Quantize a model and show the parameter preset it needs.
    Quantize(QuantizeArgs),
    /// Generate keys, encrypt the model and write a deployment package.
    Protect(ProtectArgs),
    /// Push a package to an edge agent.
    Deploy(DeployArgs),
    /// Submit a batch for inference and save the encrypted response.
    Infer(InferArgs),
    /// Decrypt a response with the vault.
    Decrypt(DecryptArgs),
    /// Run the benchmark matrix.
    Bench(BenchArgs),
    /// Run an edge agent.
    ServeEdge(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    #[value(name = "128")]
    L128,
    #[value(name = "192")]
    L192,
    #[value(name = "256")]
    L256,
}

impl From<Level> for SecurityLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::L128 => SecurityLevel::Bits128,
            Level::L192 => SecurityLevel::Bits192,
            Level::L256 => SecurityLevel::Bits256,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Last,
    Full,
}

impl From<Scope> for EncryptionScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::Last => EncryptionScope::LastLayer,
            Scope::Full => EncryptionScope::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Activation {
    Relu,
    Square2x,
    None,
}

impl From<Activation> for ActivationKind {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Relu => ActivationKind::Relu,
            Activation::Square2x => ActivationKind::SquarePlusTwo,
            Activation::None => ActivationKind::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(alias = "plaintext")]
    Plain,
    Encrypted,
}

impl From<Mode> for InputMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Plain => InputMode::Plaintext,
            Mode::Encrypted => InputMode::Encrypted,
        }
    }
}

/// Where samples come from: a CSV (`label,f1,f2,...`) or the bundled digits.
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Divisor applied to CSV features.
    #[arg(long, default_value_t = 1.0)]
    feature_scale: f64,
}

impl DataArgs {
    fn load(&self, pool: usize) -> Result<Dataset> {
        let data = match &self.data {
            Some(p) => Dataset::from_csv(p, self.feature_scale)?,
            None => Dataset::digits(),
        };
        if pool > 1 {
            data.pooled(pool)
        } else {
            Ok(data)
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "relu")]
    activation: Activation,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Average-pool factor applied to square images before training.
    #[arg(long, default_value_t = 2)]
    pool: usize,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Per-epoch CSV of loss and accuracy.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long, value_enum, default_value = "128")]
    level: Level,
    #[arg(long, value_enum, default_value = "last")]
    scope: Scope,
    #[arg(long, default_value = "quantized.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ProtectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "128")]
    level: Level,
    #[arg(long, value_enum, default_value = "last")]
    scope: Scope,
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "vault")]
    vault: PathBuf,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long, default_value = "package.cdpk")]
    out: PathBuf,
}

#[derive(Args)]
struct DeployArgs {
    #[arg(long)]
    package: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    package: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    mode: Mode,
    /// Edge agent; without it the job runs in-process.
    #[arg(long)]
    addr: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Number of held-out samples to submit.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    job_id: u64,
    #[arg(long, default_value = "response.bin")]
    out: PathBuf,
}

#[derive(Args)]
struct DecryptArgs {
    #[arg(long)]
    response: PathBuf,
    #[arg(long, default_value = "vault")]
    vault: PathBuf,
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Restrict to one level; all three by default.
    #[arg(long, value_enum)]
    level: Option<Level>,
    /// Restrict to one input mode; both by default.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Average-pool factor for the digits (2 gives 16 features, 4 gives 4).
    #[arg(long, default_value_t = 2)]
    pool: usize,
    #[arg(long, default_value_t = 6)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Samples per inference batch.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    parallel: bool,
    /// Also write the per-epoch accuracy comparison of the activations.
    #[arg(long)]
    accuracy_out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long, default_value = "edge-data")]
    data_dir: PathBuf,
}

fn levels(l: Option<Level>) -> Vec<SecurityLevel> {
    l.map_or(SecurityLevel::ALL.to_vec(), |l| vec![l.into()])
}

fn pool_for(input_dim: usize) -> Result<usize> {
    [1, 2, 4, 8]
        .into_iter()
        .find(|f| f * f * input_dim == 64)
        .ok_or_else(|| Error::Dimension(format!("no digits pooling yields {input_dim} features")))
}

fn train(a: TrainArgs) -> Result<()> {
    let data = a.data.load(a.pool)?;
    let (tr, val) = data.split(0.8, a.seed);
    let arch = Architecture::classifier(tr.input_dim(), a.hidden, tr.class_count, a.activation.into());
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let out = train_sgd(&tr, Some(&val), &arch, &config)?;
    let mut model = out.model;
    model.name = a.out.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    model.save(&a.out)?;
    if let Some(h) = &a.history {
        let mut csv = String::from("epoch,loss,train_accuracy,validation_accuracy\n");
        for e in &out.history {
            csv.push_str(&format!(
                "{},{:.6},{:.4},{:.4}\n",
                e.epoch,
                e.loss,
                e.train_accuracy,
                e.validation_accuracy.unwrap_or(f64::NAN)
            ));
        }
        fs::write(h, csv)?;
    }
    println!(
        "trained {} hidden={} activation={} train_acc={:.4} val_acc={:.4} -> {}",
        model.name,
        a.hidden,
        ActivationKind::from(a.activation),
        accuracy(&model, &tr)?,
        accuracy(&model, &val)?,
        a.out.display()
    );
    Ok(())
}

/// Δ comes from the flag, then the model file, then the largest that fits.
fn protect_options(model: &ModelSpec, level: Level, scope: Scope, delta: Option<u64>, seed: u64) -> Result<ProtectOptions> {
    let mut opts = ProtectOptions {
        level: level.into(),
        scope: scope.into(),
        delta: 1 << 10,
        input_range: 1.0,
        seed,
    };
    opts.delta = match delta.or(model.delta) {
        Some(d) => d,
        None => largest_delta(model, &opts)?,
    };
    Ok(opts)
}

fn quantize_cmd(a: QuantizeArgs) -> Result<()> {
    let model = ModelSpec::load(&a.model)?;
    let opts = protect_options(&model, a.level, a.scope, a.delta, 1)?;
    let (preset, q) = plan_protection(&model, &opts)?;
    let doc = serde_json::json!({
        "level": preset.level.bits(),
        "scope": EncryptionScope::from(a.scope).as_str(),
        "poly_degree": preset.poly_degree,
        "plain_bits": preset.plain_bits,
        "prime_count": preset.prime_count,
        "depth": preset.depth,
        "model": q,
    });
    fs::write(&a.out, serde_json::to_string_pretty(&doc)?)?;
    println!(
        "quantized delta={} t={} n={} primes={} depth={} -> {}",
        opts.delta,
        q.plain_modulus(),
        preset.poly_degree,
        preset.prime_count,
        preset.depth,
        a.out.display()
    );
    Ok(())
}

fn protect(a: ProtectArgs) -> Result<()> {
    let model = ModelSpec::load(&a.model)?;
    let opts = protect_options(&model, a.level, a.scope, a.delta, a.seed)?;
    let id = a.model_id.clone().unwrap_or_else(|| {
        let stem = a.model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        format!("{stem}-{}-{}", opts.scope.as_str(), opts.level.bits())
    });
    let p = protect_for_deployment(&model, &id, &opts)?;
    Vault::open(&a.vault)?.store(&p.record)?;
    cipherdnn::storage::write_atomic(&a.out, &p.package_bytes)?;
    let r = &p.report;
    println!(
        "protected {id} level={} scope={} delta={} n={} primes={} t_bits={} encrypt_s={:.3} params={} plain_bytes={} cipher_bytes={} ratio={:.2} (reference {REFERENCE_EXPANSION_RATIO}) -> {}",
        opts.level.bits(),
        opts.scope.as_str(),
        opts.delta,
        p.preset.poly_degree,
        p.preset.prime_count,
        p.preset.plain_bits,
        r.seconds,
        r.parameter_count,
        r.plaintext_bytes,
        r.ciphertext_bytes,
        r.ratio,
        a.out.display()
    );
    Ok(())
}

fn deploy(a: DeployArgs) -> Result<()> {
    let bytes = fs::read(&a.package)?;
    println!("{}", backend_deploy(a.addr.as_str(), &bytes)?);
    Ok(())
}

fn labels_path(response: &Path) -> PathBuf {
    let mut s = response.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

fn infer(a: InferArgs) -> Result<()> {
    let package = DeploymentPackage::load(&a.package)?;
    let data = a.data.load(if a.data.data.is_some() { 1 } else { pool_for(package.model.input_dim)? })?;
    let (_, held_out) = data.split(0.8, a.seed);
    let batch = held_out.take(a.count.min(held_out.len()));
    let engine = Engine::new(package)?;
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let start = Instant::now();
    let job = prepare_job(&engine, a.job_id, a.mode.into(), batch.features.clone(), &mut rng)?;
    let prep_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let resp = match &a.addr {
        Some(addr) => backend_infer(addr.as_str(), &job)?,
        None => run_job(&engine, job)?,
    };
    let round_ms = start.elapsed().as_secs_f64() * 1e3;
    resp.save(&a.out)?;
    let labels: String = batch.labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(labels_path(&a.out), labels)?;
    for w in &resp.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "job {} model={} mode={} samples={} prepare_ms={prep_ms:.1} edge_ms={:.1} round_trip_ms={round_ms:.1} -> {}",
        resp.job_id,
        resp.model_id,
        resp.mode.as_str(),
        batch.len(),
        resp.edge_ms,
        a.out.display()
    );
    Ok(())
}

fn decrypt(a: DecryptArgs) -> Result<()> {
    let resp = InferResponse::load(&a.response)?;
    let vault = Vault::open(&a.vault)?;
    let start = Instant::now();
    let (out, trace) = backend_decrypt(&resp, &vault)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut csv = String::from("sample,class");
    for k in 0..out.logits.first().map_or(0, Vec::len) {
        csv.push_str(&format!(",logit{k}"));
    }
    csv.push('\n');
    for (i, (c, l)) in out.classes.iter().zip(&out.logits).enumerate() {
        csv.push_str(&format!("{i},{c}"));
        for v in l {
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    fs::write(&a.out, csv)?;
    if let Some(t) = &a.trace {
        fs::write(t, trace.to_csv())?;
    }
    let mut line = format!(
        "decrypted job {} samples={} final_budget_bits={} decrypt_ms={ms:.1}",
        resp.job_id,
        out.classes.len(),
        out.final_budget
    );
    if let Ok(text) = fs::read_to_string(labels_path(&a.response)) {
        let labels: Vec<usize> = text.lines().filter_map(|l| l.trim().parse().ok()).collect();
        if labels.len() == out.classes.len() && !labels.is_empty() {
            let hits = labels.iter().zip(&out.classes).filter(|(a, b)| a == b).count();
            line.push_str(&format!(" accuracy={:.4}", hits as f64 / labels.len() as f64));
        }
    }
    println!("{line} -> {}", a.out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let (models, test) = digits_variant_models(a.pool, a.hidden, a.epochs, a.seed)?;
    let batch = test.take(a.samples.min(test.len())).features;
    let config = BenchConfig {
        levels: levels(a.level),
        modes: a.mode.map_or(vec![InputMode::Plaintext, InputMode::Encrypted], |m| vec![m.into()]),
        runs: a.runs,
        seed: a.seed,
        batch,
        input_range: 1.0,
        parallel: a.parallel,
    };
    let report = run_matrix(&models, &config)?;
    fs::write(&a.out, report.to_csv())?;
    for (variant, level, p) in &report.presets {
        println!(
            "preset {variant} {}: n={} primes={} t_bits={} depth={}",
            level.bits(),
            p.poly_degree,
            p.prime_count,
            p.plain_bits,
            p.depth
        );
    }
    let ratio_model = models
        .iter()
        .find(|m| m.variant == Variant::FullNoAct)
        .expect("all variants trained");
    for level in &config.levels {
        let (_, r) = encryption_report(&ratio_model.model, EncryptionScope::Full, *level, ratio_model.delta, a.seed)?;
        println!(
            "model encryption {}: {:.3}s plain_bytes={} cipher_bytes={} ratio={:.2} (reference {REFERENCE_EXPANSION_RATIO})",
            level.bits(),
            r.seconds,
            r.plaintext_bytes,
            r.ciphertext_bytes,
            r.ratio
        );
    }
    if let Some(path) = &a.accuracy_out {
        let data = Dataset::digits().pooled(a.pool)?;
        let (tr, val) = data.split(0.8, a.seed);
        let config = TrainConfig {
            epochs: a.epochs,
            seed: a.seed,
            ..TrainConfig::default()
        };
        let acc = accuracy_report(&tr, &val, a.hidden, &config)?;
        fs::write(path, acc.to_csv())?;
    }
    let failed = report.cells.iter().filter(|c| !c.correct()).count();
    println!(
        "bench cells={} failed={failed} config={:016x} env=\"{}\" -> {}",
        report.cells.len(),
        report.config_hash,
        report.environment,
        a.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Quantize(a) => quantize_cmd(a),
        Command::Protect(a) => protect(a),
        Command::Deploy(a) => deploy(a),
        Command::Infer(a) => infer(a),
        Command::Decrypt(a) => decrypt(a),
        Command::Bench(a) => bench(a),
        Command::ServeEdge(a) => edge_serve(a.addr.as_str(), &a.data_dir),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(if e.kind() == "usage" { 2 } else { 1 })
        }
    }
}
