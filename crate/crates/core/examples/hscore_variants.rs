//! The three H-score variants on one synthetic task, before and after whitening.
//!
//! `cargo run --example hscore_variants`

use h_ensemble::features::{conditional_means, fit_whitener, Ridge};
use h_ensemble::hscore::{h_score_one_sided_full, h_score_simplified, h_score_two_sided};
use h_ensemble::synth::{generate_task, SyntheticTaskSpec};

fn main() -> h_ensemble::Result<()> {
    for scale in [0.0, 0.5, 1.0, 2.0] {
        let task = generate_task(&SyntheticTaskSpec {
            n_classes: 4,
            feature_dim: 3,
            class_mean_scale: scale,
            noise_sigma: 1.0,
            n_samples: 400,
            seed: 1,
        })?;
        let labels = &task.labels;
        let centered = task.features.centered();
        let white = fit_whitener(&task.features, Ridge::Fixed(0.0).resolve(&task.features))?
            .apply(&task.features)?;

        let full = h_score_one_sided_full(&centered, labels, 0.0)?.value;
        let simplified = h_score_simplified(&conditional_means(&white, labels)?).value;
        let g = conditional_means(&white, labels)?.centered();
        let two_sided = h_score_two_sided(&white, labels, &g)?.value;

        println!(
            "scale {scale:.1}: full {full:.4}  simplified(whitened) {simplified:.4}  two-sided(g = E[f|Y]) {two_sided:.4}"
        );
    }
    Ok(())
}
