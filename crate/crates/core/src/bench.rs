//! Evaluation harness: model encryption cost, inference cost in both input
//! modes, decryption, and accuracy of the activation choices.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::agents::{plan_protection, ProtectOptions};
use crate::bfv::{keygen, Preset, SecurityLevel};
use crate::einfer::{decrypt_output, Engine, InferenceInput, InputMode};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, oracle_forward_int, train_sgd, ActivationKind, Architecture, Dataset, ModelSpec, TrainConfig,
};
use crate::protect::{build_package, protect_model, EncryptionReport, EncryptionScope};

/// Expansion factor observed in the original evaluation, printed for context.
pub const REFERENCE_EXPANSION_RATIO: f64 = 8.22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    LastLayer,
    FullNoAct,
    FullSquare2x,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LastLayer, Variant::FullNoAct, Variant::FullSquare2x];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::LastLayer => "last_layer",
            Variant::FullNoAct => "full_no_act",
            Variant::FullSquare2x => "full_square2x",
        }
    }

    pub fn scope(self) -> EncryptionScope {
        match self {
            Variant::LastLayer => EncryptionScope::LastLayer,
            _ => EncryptionScope::Full,
        }
    }

    pub fn hidden_activation(self) -> ActivationKind {
        match self {
            Variant::LastLayer => ActivationKind::Relu,
            Variant::FullNoAct => ActivationKind::None,
            Variant::FullSquare2x => ActivationKind::SquarePlusTwo,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown variant {s:?}")))
    }
}

/// A model to benchmark under one variant.
#[derive(Clone, Debug)]
pub struct VariantModel {
    pub variant: Variant,
    pub model: ModelSpec,
    pub delta: u64,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub levels: Vec<SecurityLevel>,
    pub modes: Vec<InputMode>,
    pub runs: usize,
    pub seed: u64,
    /// Samples per inference batch.
    pub batch: Vec<Vec<f64>>,
    pub input_range: f64,
    /// Run (variant, level) groups on separate threads. Timings then
    /// include contention.
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchCell {
    pub variant: Variant,
    pub level: SecurityLevel,
    /// `None` for stages that do not depend on the input mode.
    pub mode: Option<InputMode>,
    pub stage: &'static str,
    pub time_s_mean: f64,
    pub bytes_mean: f64,
    pub budget_bits_mean: Option<f64>,
    pub runs: usize,
    /// Runs whose output matched the integer oracle.
    pub correct_runs: usize,
}

impl BenchCell {
    pub fn correct(&self) -> bool {
        self.correct_runs == self.runs
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub presets: Vec<(Variant, SecurityLevel, Preset)>,
    pub config_hash: u64,
    pub environment: String,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "variant,level,mode,stage,time_s_mean,bytes_mean,budget_bits_mean,runs,correct";

    pub fn cell(&self, variant: Variant, level: SecurityLevel, mode: Option<InputMode>, stage: &str) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.level == level && c.mode == mode && c.stage == stage)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.0},{},{},{}",
                c.variant,
                c.level.bits(),
                c.mode.map_or("any", InputMode::as_str),
                c.stage,
                c.time_s_mean,
                c.bytes_mean,
                c.budget_bits_mean.map(|b| format!("{b:.2}")).unwrap_or_default(),
                c.runs,
                c.correct()
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii")
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn config_hash(config: &BenchConfig, models: &[VariantModel]) -> u64 {
    let mut text = format!(
        "{:?}|{:?}|{}|{}|{}|",
        config.levels.iter().map(|l| l.bits()).collect::<Vec<_>>(),
        config.modes,
        config.runs,
        config.seed,
        config.input_range
    );
    for m in models {
        text.push_str(&format!("{}:{}:{}|", m.variant, m.delta, m.model.to_json()));
    }
    for row in &config.batch {
        text.push_str(&format!("{row:?}"));
    }
    crate::bfv::fnv1a(text.as_bytes())
}

/// Runs every (variant, level, mode) cell `runs` times. Keys are generated
/// once per (variant, level) from the seed; timings exclude key generation.
/// Means cover passing runs only; a run that errors or disagrees with the
/// integer oracle only lowers `correct_runs`.
pub fn run_matrix(models: &[VariantModel], config: &BenchConfig) -> Result<BenchReport> {
    if config.runs == 0 || config.batch.is_empty() {
        return Err(Error::Usage("bench needs at least one run and one sample".into()));
    }
    let groups: Vec<(&VariantModel, SecurityLevel)> = models
        .iter()
        .flat_map(|vm| config.levels.iter().map(move |&l| (vm, l)))
        .collect();
    let results: Vec<Result<(Preset, Vec<BenchCell>)>> = if config.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = groups
                .iter()
                .map(|&(vm, level)| s.spawn(move || run_group(vm, level, config)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Usage("bench worker panicked".into()))))
                .collect()
        })
    } else {
        groups.iter().map(|&(vm, level)| run_group(vm, level, config)).collect()
    };
    let mut cells = Vec::new();
    let mut presets = Vec::new();
    for (&(vm, level), r) in groups.iter().zip(results) {
        let (preset, group) = r?;
        presets.push((vm.variant, level, preset));
        cells.extend(group);
    }
    Ok(BenchReport {
        cells,
        presets,
        config_hash: config_hash(config, models),
        environment: format!(
            "{} {} cpus={} parallel={}",
            std::env::consts::OS,
            std::env::consts::ARCH,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            config.parallel
        ),
    })
}

#[derive(Default)]
struct Samples {
    time: Vec<f64>,
    bytes: Vec<f64>,
    budget: Vec<f64>,
}

impl Samples {
    fn cell(&self, vm: &VariantModel, level: SecurityLevel, mode: Option<InputMode>, stage: &'static str, runs: usize) -> BenchCell {
        BenchCell {
            variant: vm.variant,
            level,
            mode,
            stage,
            time_s_mean: mean(&self.time),
            bytes_mean: mean(&self.bytes),
            budget_bits_mean: (!self.budget.is_empty()).then(|| mean(&self.budget)),
            runs,
            correct_runs: self.time.len(),
        }
    }
}

fn run_group(vm: &VariantModel, level: SecurityLevel, config: &BenchConfig) -> Result<(Preset, Vec<BenchCell>)> {
    let opts = ProtectOptions {
        level,
        scope: vm.variant.scope(),
        delta: vm.delta,
        input_range: config.input_range,
        seed: config.seed,
    };
    let (preset, qmodel) = plan_protection(&vm.model, &opts)?;
    let params = preset.params()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ u64::from(level.bits()));
    let (ctx, keys) = keygen(&params, &mut rng)?;
    let expected: Vec<Vec<u64>> = config
        .batch
        .iter()
        .map(|x| oracle_forward_int(&qmodel, &qmodel.quantize_input(x)?))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut enc = Samples::default();
    let mut protected = None;
    for _ in 0..config.runs {
        let (pm, report) = protect_model(&qmodel, vm.variant.scope(), &ctx, &keys.public_key, &mut rng)?;
        enc.time.push(report.seconds);
        enc.bytes.push(report.ciphertext_bytes as f64);
        protected = Some(pm);
    }
    cells.push(enc.cell(vm, level, None, "encrypt_model", config.runs));
    let (package, _) = build_package(
        &format!("bench-{}-{}", vm.variant, level.bits()),
        protected.expect("runs > 0"),
        &params,
        &keys.public_key,
        &keys.relin_keys,
    )?;
    let engine = Engine::with_context(ctx.clone(), package)?;
    engine.prepare()?;

    for &mode in &config.modes {
        let mut inf = Samples::default();
        let mut dec = Samples::default();
        for _ in 0..config.runs {
            let start = Instant::now();
            let Ok(out) = engine.run(InferenceInput::Features(config.batch.clone()), mode, None, &mut rng) else {
                continue;
            };
            let inf_s = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let Ok(d) = decrypt_output(&ctx, &out.logits, &keys.secret_key, &qmodel.codec) else {
                continue;
            };
            let dec_s = start.elapsed().as_secs_f64();
            if d.final_budget == 0 || d.residues != expected {
                continue;
            }
            let peak = out.trace.rows.iter().map(|r| r.ciphertext_bytes).max().unwrap_or(0);
            inf.time.push(inf_s);
            inf.bytes.push(peak as f64);
            inf.budget.push(f64::from(d.final_budget));
            dec.time.push(dec_s);
            dec.bytes.push(out.logits.byte_size() as f64);
            dec.budget.push(f64::from(d.final_budget));
        }
        cells.push(inf.cell(vm, level, Some(mode), "inference", config.runs));
        cells.push(dec.cell(vm, level, Some(mode), "decrypt", config.runs));
    }
    Ok((preset, cells))
}

/// Protects `model` once at `level` and reports the cost.
pub fn encryption_report(
    model: &ModelSpec,
    scope: EncryptionScope,
    level: SecurityLevel,
    delta: u64,
    seed: u64,
) -> Result<(Preset, EncryptionReport)> {
    let opts = ProtectOptions {
        level,
        scope,
        delta,
        input_range: 1.0,
        seed,
    };
    let (preset, qmodel) = plan_protection(model, &opts)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (ctx, keys) = keygen(&preset.params()?, &mut rng)?;
    let (_, report) = protect_model(&qmodel, scope, &ctx, &keys.public_key, &mut rng)?;
    Ok((preset, report))
}

/// Validation accuracy per epoch for each hidden activation.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub activations: Vec<ActivationKind>,
    /// `series[k][epoch]` for `activations[k]`.
    pub series: Vec<Vec<f64>>,
    pub final_train: Vec<f64>,
}

impl AccuracyReport {
    pub fn final_validation(&self, act: ActivationKind) -> Option<f64> {
        let k = self.activations.iter().position(|&a| a == act)?;
        self.series[k].last().copied()
    }

    pub fn final_train(&self, act: ActivationKind) -> Option<f64> {
        let k = self.activations.iter().position(|&a| a == act)?;
        self.final_train.get(k).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for a in &self.activations {
            out.push(',');
            out.push_str(a.as_str());
        }
        out.push('\n');
        let epochs = self.series.iter().map(Vec::len).max().unwrap_or(0);
        for e in 0..epochs {
            out.push_str(&(e + 1).to_string());
            for s in &self.series {
                out.push_str(&format!(",{:.4}", s.get(e).copied().unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one `[FC → act → FC]` classifier per activation on `train` and
/// tracks accuracy on `validation`.
pub fn accuracy_report(
    train: &Dataset,
    validation: &Dataset,
    hidden: usize,
    config: &TrainConfig,
) -> Result<AccuracyReport> {
    let activations = vec![ActivationKind::Relu, ActivationKind::SquarePlusTwo, ActivationKind::None];
    let mut series = Vec::new();
    let mut final_train = Vec::new();
    for &act in &activations {
        let arch = Architecture::classifier(train.input_dim(), hidden, train.class_count, act);
        let out = train_sgd(train, Some(validation), &arch, config)?;
        series.push(
            out.history
                .iter()
                .map(|e| e.validation_accuracy.unwrap_or(0.0))
                .collect(),
        );
        final_train.push(accuracy(&out.model, train)?);
    }
    Ok(AccuracyReport {
        activations,
        series,
        final_train,
    })
}

/// Small random classifier for a variant; weights in `[-1, 1]`, biases in
/// `[-0.5, 0.5]`.
pub fn random_variant_model(variant: Variant, dims: [usize; 3], seed: u64) -> ModelSpec {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut layer = |o: usize, i: usize, act| {
        let w = (0..o).map(|_| (0..i).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b = (0..o).map(|_| rng.gen_range(-0.5..0.5)).collect();
        crate::nn::DenseLayer::new(w, b, act).expect("consistent shapes")
    };
    ModelSpec::new(
        variant.as_str(),
        vec![
            layer(dims[1], dims[0], variant.hidden_activation()),
            layer(dims[2], dims[1], ActivationKind::None),
        ],
    )
    .expect("consistent shapes")
}

/// Trains the three benchmark models on digits average-pooled by `pool`
/// (2 gives 4×4 images). Returns them with the held-out split.
pub fn digits_variant_models(
    pool: usize,
    hidden: usize,
    epochs: usize,
    seed: u64,
) -> Result<(Vec<VariantModel>, Dataset)> {
    let data = Dataset::digits().pooled(pool)?;
    let (train, test) = data.split(0.8, seed);
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let mut models = Vec::new();
    for variant in Variant::ALL {
        let arch = Architecture::classifier(train.input_dim(), hidden, train.class_count, variant.hidden_activation());
        let mut model = train_sgd(&train, None, &arch, &config)?.model;
        model.name = variant.as_str().to_string();
        let delta = match variant {
            Variant::LastLayer => 1 << 8,
            Variant::FullNoAct => 1 << 6,
            Variant::FullSquare2x => 1 << 3,
        };
        models.push(VariantModel { variant, model, delta });
    }
    Ok((models, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("half".parse::<Variant>().is_err());
    }

    #[test]
    fn accuracy_csv_shape() {
        let r = AccuracyReport {
            activations: vec![ActivationKind::Relu, ActivationKind::None],
            series: vec![vec![0.5, 0.75], vec![0.25, 0.5]],
            final_train: vec![0.8, 0.6],
        };
        assert_eq!(r.to_csv(), "epoch,relu,none\n1,0.5000,0.2500\n2,0.7500,0.5000\n");
        assert_eq!(r.final_validation(ActivationKind::None), Some(0.5));
    }

    #[test]
    fn small_matrix_is_correct_and_ordered() {
        let models: Vec<VariantModel> = Variant::ALL
            .into_iter()
            .map(|v| VariantModel {
                variant: v,
                model: random_variant_model(v, [4, 3, 2], 11),
                delta: 4,
            })
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let config = BenchConfig {
            levels: vec![SecurityLevel::Bits128],
            modes: vec![InputMode::Plaintext, InputMode::Encrypted],
            runs: 5,
            seed: 3,
            batch: (0..8).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect(),
            input_range: 1.0,
            parallel: false,
        };
        let report = run_matrix(&models, &config).unwrap();
        assert!(report.cells.iter().all(|c| c.correct() && c.runs == 5));
        let csv = report.to_csv();
        assert!(csv.starts_with(BenchReport::CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + 3 * (1 + 2 * 2));
    }
}
