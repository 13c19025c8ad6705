//! Learning ensemble weights for an informative source and a noise source.
//!
//! `cargo run --example optimize_weights`

use h_ensemble::features::{FeatureMatrix, Ridge};
use h_ensemble::optimizer::{grid_oracle, optimize_weights, Objective, OptimizerConfig};
use h_ensemble::pipeline::prepare_sources;
use h_ensemble::synth::{generate_task, SyntheticTaskSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> h_ensemble::Result<()> {
    let task = generate_task(&SyntheticTaskSpec {
        n_classes: 3,
        feature_dim: 2,
        class_mean_scale: 1.5,
        noise_sigma: 1.0,
        n_samples: 300,
        seed: 3,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise: Vec<f64> = (0..600).map(|_| StandardNormal.sample(&mut rng)).collect();
    let sources = vec![
        task.features.clone(),
        FeatureMatrix::from_row_slice(300, 2, &noise)?,
    ];
    let prepared = prepare_sources(&sources, &task.labels, Ridge::Auto)?;

    for objective in [Objective::Full, Objective::Simplified] {
        let cfg = OptimizerConfig {
            objective,
            ..OptimizerConfig::default()
        };
        let report = optimize_weights(
            &prepared.conditional_means,
            &prepared.whitened,
            &task.labels,
            &cfg,
        )?;
        println!(
            "{:>10}: alpha = {:?}, H {:.4} -> {:.4}, {} iterations, converged={}, diverged={}",
            objective.as_str(),
            report.final_alpha.as_slice(),
            report.trajectory[0].1,
            report.final_objective(),
            report.iterations_used,
            report.converged,
            report.diverged
        );
    }

    let best = grid_oracle(
        &prepared.conditional_means,
        &prepared.whitened,
        &task.labels,
        Objective::Full,
        &[(-1.0, 2.0)],
        0.001,
        Ridge::Auto,
    )?;
    println!("grid oracle (full): alpha = {:?}", best.as_slice());
    Ok(())
}
