//! Fitting an ensemble, classifying held-out data and inspecting posteriors.
//!
//! `cargo run --example mcr_classifier`

use h_ensemble::mcr::{evaluate, posterior, predict};
use h_ensemble::pipeline::{fit_ensemble, FitOptions};
use h_ensemble::synth::{generate_pool, AblationConfig};

fn main() -> h_ensemble::Result<()> {
    let cfg = AblationConfig::default();
    let data = generate_pool(&cfg, 42, 8)?;
    let (model, report) = fit_ensemble(&data.train, &data.train_labels, &FitOptions::default())?;

    println!("weights: {:.3?}", model.alpha.as_slice());
    println!(
        "H-score: {:.4} after {} iterations",
        report.final_objective(),
        report.iterations_used
    );
    println!(
        "train accuracy: {:.3}",
        evaluate(&predict(&model, &data.train)?, &data.train_labels)?
    );
    println!(
        "test accuracy:  {:.3}",
        evaluate(&predict(&model, &data.test)?, &data.test_labels)?
    );

    let mixed = model.target_features(&data.test)?;
    for i in 0..3 {
        let row: Vec<f64> = mixed.row(i).iter().copied().collect();
        println!(
            "sample {i} (class {}): posterior {:.3?}",
            data.test_labels.labels()[i],
            posterior(&model, &row)?
        );
    }
    Ok(())
}
