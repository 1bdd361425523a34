//! A reduced benchmark matrix: three variants at the 128-bit level, both
//! input modes, five runs each.
//!
//! cargo run --release --example bench_matrix

use cipherdnn::bench::{digits_variant_models, encryption_report, run_matrix, BenchConfig, REFERENCE_EXPANSION_RATIO};
use cipherdnn::bfv::SecurityLevel;
use cipherdnn::einfer::InputMode;
use cipherdnn::protect::EncryptionScope;

fn main() -> cipherdnn::Result<()> {
    let (models, test) = digits_variant_models(2, 6, 20, 1)?;
    let config = BenchConfig {
        levels: vec![SecurityLevel::Bits128],
        modes: vec![InputMode::Plaintext, InputMode::Encrypted],
        runs: 5,
        seed: 1,
        batch: test.take(16).features,
        input_range: 1.0,
        parallel: false,
    };
    let report = run_matrix(&models, &config)?;
    print!("{}", report.to_csv());
    println!("# {} config={:016x}", report.environment, report.config_hash);

    for level in [SecurityLevel::Bits128, SecurityLevel::Bits256] {
        let (preset, r) = encryption_report(&models[1].model, EncryptionScope::Full, level, models[1].delta, 1)?;
        println!(
            "level {level}: n={} ratio {:.0} (reference {REFERENCE_EXPANSION_RATIO})",
            preset.poly_degree, r.ratio
        );
    }
    Ok(())
}
