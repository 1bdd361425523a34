//! Train the same small classifier with each activation on pooled 4x4
//! digits and compare validation accuracy.
//!
//! cargo run --release --example train_digits

use cipherdnn::bench::accuracy_report;
use cipherdnn::nn::{Dataset, TrainConfig};

fn main() -> cipherdnn::Result<()> {
    let data = Dataset::digits().pooled(2)?;
    let (train, val) = data.split(0.8, 1);
    println!("{} train / {} validation samples, {} features", train.len(), val.len(), train.input_dim());

    let config = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let report = accuracy_report(&train, &val, 16, &config)?;
    for act in &report.activations {
        println!(
            "{:16} train={:.3} validation={:.3}",
            act.as_str(),
            report.final_train(*act).unwrap_or(0.0),
            report.final_validation(*act).unwrap_or(0.0)
        );
    }
    print!("{}", report.to_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!("\n...");
    Ok(())
}
