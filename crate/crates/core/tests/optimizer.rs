use h_ensemble::features::{FeatureMatrix, LabelVector, Ridge};
use h_ensemble::hscore::{gram_matrix, h_score_one_sided_full};
use h_ensemble::mcr::mix_features;
use h_ensemble::optimizer::{
    evaluate_objective, grid_oracle, max_safe_learning_rate, optimize_weights, Objective,
    OptimizerConfig,
};
use h_ensemble::pipeline::{prepare_sources, PreparedSources};
use h_ensemble::synth::{generate_task, SyntheticTaskSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))).unwrap()
}

/// An informative source and a pure-noise source over the same 1000 samples.
fn informative_and_noise(seed: u64) -> (PreparedSources, LabelVector) {
    let task = generate_task(&SyntheticTaskSpec {
        n_classes: 4,
        feature_dim: 3,
        class_mean_scale: 3.0,
        noise_sigma: 1.0,
        n_samples: 1000,
        seed,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let sources = [task.features, noise(&mut rng, 1000, 3)];
    (
        prepare_sources(&sources, &task.labels, Ridge::Auto).unwrap(),
        task.labels,
    )
}

#[test]
fn full_objective_prefers_the_informative_source() {
    for seed in 0..5 {
        let (p, y) = informative_and_noise(seed);
        let report = optimize_weights(
            &p.conditional_means,
            &p.whitened,
            &y,
            &OptimizerConfig::default(),
        )
        .unwrap();
        let a = report.final_alpha.as_slice();
        assert!(
            (a[0] - 1.0).abs() < 0.05 && a[1].abs() < 0.05,
            "seed {seed}: {a:?}"
        );
        assert!(!report.diverged);

        let best = grid_oracle(
            &p.conditional_means,
            &p.whitened,
            &y,
            Objective::Full,
            &[(-1.0, 2.0)],
            0.01,
            Ridge::Auto,
        )
        .unwrap();
        assert!(
            (best.as_slice()[0] - a[0]).abs() < 0.05,
            "oracle {:?} vs {a:?}",
            best.as_slice()
        );
    }
}

#[test]
fn simplified_objective_runs_away_on_the_same_pair() {
    let (p, y) = informative_and_noise(0);
    let cfg = OptimizerConfig {
        objective: Objective::Simplified,
        ..OptimizerConfig::default()
    };
    let report = optimize_weights(&p.conditional_means, &p.whitened, &y, &cfg).unwrap();
    assert!(report.diverged);
    assert!(
        report.final_alpha.max_abs() > cfg.alpha_bound
            || report.final_objective() > cfg.objective_ceiling
    );
}

#[test]
fn duplicated_source_leaves_the_full_objective_flat() {
    let (p, y) = informative_and_noise(1);
    let twice = [p.whitened[0].clone(), p.whitened[0].clone()];
    let cms = [
        p.conditional_means[0].clone(),
        p.conditional_means[0].clone(),
    ];
    let report = optimize_weights(&cms, &twice, &y, &OptimizerConfig::default()).unwrap();
    // alpha_1 f + alpha_2 f = f on the hyperplane, so the ascent direction vanishes
    assert!(report.converged);
    assert_eq!(report.iterations_used, 1);
    for a in report.final_alpha.as_slice() {
        assert!((a - 0.5).abs() < 1e-6);
    }
}

#[test]
fn single_source_gets_unit_weight() {
    let (p, y) = informative_and_noise(2);
    let report = optimize_weights(
        &p.conditional_means[..1],
        &p.whitened[..1],
        &y,
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert_eq!(report.final_alpha.as_slice(), &[1.0]);
    assert!(report.converged);
    assert_eq!(report.iterations_used, 0);
}

#[test]
fn full_objective_matches_the_literal_mixture() {
    // evaluate_objective works from stacked moments; recompute on explicitly mixed features
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (p, y) = informative_and_noise(rng.random_range(0..1000));
        let alpha = [rng.random_range(-2.0..3.0), 0.0];
        let alpha = [alpha[0], 1.0 - alpha[0]];
        let fast = evaluate_objective(
            Objective::Full,
            &p.conditional_means,
            &p.whitened,
            &y,
            &alpha,
            Ridge::Auto,
        )
        .unwrap();
        let mixed = mix_features(&p.whitened, &alpha).unwrap().centered();
        let ridge = Ridge::Auto.resolve(&mixed);
        let literal = h_score_one_sided_full(&mixed, &y, ridge).unwrap().value;
        assert!(
            (fast - literal).abs() < 1e-9 * literal.abs().max(1.0),
            "{fast} vs {literal}"
        );
    }
}

#[test]
fn simplified_ascent_with_safe_step_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 90;
    let y = LabelVector::new((0..n).map(|i| i % 3).collect(), 3).unwrap();
    for _ in 0..10 {
        let m = rng.random_range(2..6);
        let sources: Vec<FeatureMatrix> = (0..m)
            .map(|_| {
                let shift: f64 = rng.random_range(0.0..1.0);
                let mut f = noise(&mut rng, n, 3).into_inner();
                for (i, mut row) in f.row_iter_mut().enumerate() {
                    row[i % 3] += shift;
                }
                FeatureMatrix::new(f).unwrap()
            })
            .collect();
        let p = prepare_sources(&sources, &y, Ridge::Auto).unwrap();
        let g = gram_matrix(&p.conditional_means).unwrap();
        let cfg = OptimizerConfig {
            objective: Objective::Simplified,
            learning_rate: 0.5 * max_safe_learning_rate(&g),
            max_iters: 200,
            seed: Some(rng.random()),
            ..OptimizerConfig::default()
        };
        let report = optimize_weights(&p.conditional_means, &p.whitened, &y, &cfg).unwrap();
        for w in report.trajectory.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-10);
        }
        for a in &report.alphas {
            assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn too_many_sources_for_the_grid() {
    let (p, y) = informative_and_noise(3);
    let four: Vec<_> = (0..4).map(|i| p.whitened[i % 2].clone()).collect();
    let cms: Vec<_> = (0..4).map(|i| p.conditional_means[i % 2].clone()).collect();
    let err = grid_oracle(
        &cms,
        &four,
        &y,
        Objective::Full,
        &[(0.0, 1.0); 3],
        0.1,
        Ridge::Auto,
    )
    .unwrap_err();
    assert!(matches!(err, h_ensemble::Error::TooManySources(4)));
}
