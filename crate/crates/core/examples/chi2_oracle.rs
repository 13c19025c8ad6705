//! The class embeddings `E[f | Y]` minimize the chi-squared divergence on an exact
//! discrete distribution; random perturbations only increase it.
//!
//! `cargo run --example chi2_oracle`

use h_ensemble::mcr::ClassEmbeddings;
use h_ensemble::synth::{chi2_divergence, DiscreteJointSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> h_ensemble::Result<()> {
    let spec = DiscreteJointSpec::random_whitened(5, 7, 4, 3, 1)?;
    let cm = spec.conditional_means(0)?;
    let best = ClassEmbeddings::new(cm.means().clone(), spec.p_y())?;
    let base = chi2_divergence(&spec, None, &best)?;
    let h = spec.two_sided_h_score(None, &best)?;
    println!("divergence at E[f|Y]: {base:.6}, two-sided H-score {h:.6}");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..1000 {
        let delta = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-0.5..0.5));
        let moved = ClassEmbeddings::new(cm.means() + delta, spec.p_y())?;
        worst_gap = worst_gap.min(chi2_divergence(&spec, None, &moved)? - base);
    }
    println!("smallest increase over 1000 perturbations: {worst_gap:.3e}");
    Ok(())
}
