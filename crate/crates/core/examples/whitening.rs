//! Whitening a correlated feature matrix.
//!
//! `cargo run --example whitening`

use h_ensemble::features::{default_ridge, fit_whitener, Ridge};
use h_ensemble::synth::{generate_task, SyntheticTaskSpec};
use h_ensemble::FeatureMatrix;

fn main() -> h_ensemble::Result<()> {
    let task = generate_task(&SyntheticTaskSpec {
        n_classes: 3,
        feature_dim: 4,
        class_mean_scale: 2.0,
        noise_sigma: 0.5,
        n_samples: 300,
        seed: 7,
    })?;
    // skew the features so the covariance is far from identity
    let mixing = nalgebra::DMatrix::from_row_slice(
        4,
        4,
        &[
            3.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.2, 0.0, 0.0, 0.0, 0.1, 0.0, 1.0, 0.0, 0.0, 2.0,
        ],
    );
    let raw = FeatureMatrix::new(task.features.data() * mixing.transpose())?;

    println!("raw covariance:{:.3}", raw.covariance());
    println!("default ridge: {:.3e}", default_ridge(&raw));

    for ridge in [Ridge::Fixed(0.0), Ridge::Auto] {
        let w = fit_whitener(&raw, ridge.resolve(&raw))?;
        let white = w.apply(&raw)?;
        println!("{ridge:?}: whitened covariance{:.6}", white.covariance());
        println!("{ridge:?}: max |mean| = {:.2e}", white.mean().amax());
    }
    Ok(())
}
