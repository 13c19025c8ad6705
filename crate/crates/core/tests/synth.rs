use h_ensemble::mcr::ClassEmbeddings;
use h_ensemble::optimizer::EnsembleWeights;
use h_ensemble::synth::{
    chi2_divergence, generate_pool, run_ablation, run_ablation_with, AblationConfig,
    DiscreteJointSpec, Domain, METHOD_AVERAGE, METHOD_FULL, METHOD_SIMPLIFIED, METHOD_SINGLE,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ablation_is_deterministic() {
    let a = run_ablation(11, 4).unwrap();
    let b = run_ablation(11, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    let methods: Vec<_> = a.rows.iter().map(|r| r.method).collect();
    assert_eq!(
        methods,
        [
            METHOD_SINGLE,
            METHOD_AVERAGE,
            METHOD_FULL,
            METHOD_SIMPLIFIED
        ]
    );
    assert_eq!(
        a.source_domains.iter().filter(|d| **d == Domain::B).count(),
        4
    );
    assert!((a.full_weights.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn many_shots_on_an_easy_pool_level_the_methods() {
    for seed in 0..3 {
        let r = run_ablation_with(&AblationConfig::easy(), seed, 64).unwrap();
        let accs: Vec<f64> = r.rows.iter().map(|row| row.accuracy).collect();
        let (lo, hi) = accs
            .iter()
            .fold((1.0f64, 0.0f64), |(l, h), &a| (l.min(a), h.max(a)));
        assert!(hi - lo <= 0.05, "seed {seed}: {accs:?}");
    }
}

#[test]
fn single_source_pool_gives_identical_methods() {
    let r = run_ablation_with(&AblationConfig::single_source(), 2, 8).unwrap();
    let first = r.rows[0].accuracy;
    assert!(
        r.rows.iter().all(|row| row.accuracy == first),
        "{:?}",
        r.rows
    );
    assert_eq!(r.full_weights.as_slice(), &[1.0]);
}

#[test]
fn ensemble_is_not_worse_than_uniform_weights_on_average() {
    let (mut full, mut avg) = (0.0, 0.0);
    for seed in 100..110 {
        let r = run_ablation(seed, 8).unwrap();
        full += r.accuracy(METHOD_FULL).unwrap();
        avg += r.accuracy(METHOD_AVERAGE).unwrap();
    }
    assert!(full > avg, "{full} vs {avg}");
}

#[test]
fn pool_rejects_zero_shots() {
    assert!(generate_pool(&AblationConfig::default(), 0, 0).is_err());
    assert!(run_ablation(0, 0).is_err());
}

/// Class-embedding perturbation that is zero-mean under the label marginal.
fn centered_direction(rng: &mut ChaCha8Rng, spec: &DiscreteJointSpec) -> DMatrix<f64> {
    let p_y = spec.p_y();
    let mut d = DMatrix::from_fn(spec.y_support(), spec.dim(), |_, _| {
        rng.random_range(-1.0..1.0)
    });
    let mean = d.transpose() * &p_y;
    for mut row in d.row_iter_mut() {
        row -= mean.transpose();
    }
    d
}

#[test]
fn divergence_and_two_sided_score_rank_embeddings_alike() {
    // for whitened f and zero-mean g the divergence is a constant minus twice the two-sided score
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for inst in 0..10 {
        let spec = DiscreteJointSpec::random_whitened(inst, 6, 3, 2, 1).unwrap();
        let star = spec.conditional_means(0).unwrap().means().clone();
        let dir = centered_direction(&mut rng, &spec);
        let grid: Vec<f64> = (0..=400).map(|i| -2.0 + i as f64 * 0.01).collect();
        let mut best_div = (f64::INFINITY, 0.0);
        let mut best_h = (f64::NEG_INFINITY, 0.0);
        let mut offset = None;
        for &t in &grid {
            let g = ClassEmbeddings::new(&star + &dir * t, spec.p_y()).unwrap();
            let div = chi2_divergence(&spec, None, &g).unwrap();
            let h = spec.two_sided_h_score(None, &g).unwrap();
            let c = div + 2.0 * h;
            assert!(
                (c - *offset.get_or_insert(c)).abs() < 1e-12,
                "instance {inst}, t {t}"
            );
            if div < best_div.0 {
                best_div = (div, t);
            }
            if h > best_h.0 {
                best_h = (h, t);
            }
        }
        assert!(
            (best_div.1 - best_h.1).abs() <= 0.01,
            "{best_div:?} vs {best_h:?}"
        );
        assert!(best_div.1.abs() <= 0.01);
    }
}

#[test]
fn scaled_optimal_embeddings_peak_at_one() {
    let spec = DiscreteJointSpec::random_whitened(3, 8, 4, 3, 1).unwrap();
    let star = spec.conditional_means(0).unwrap().means().clone();
    let score = |t: f64| {
        let g = ClassEmbeddings::new(&star * t, spec.p_y()).unwrap();
        (
            chi2_divergence(&spec, None, &g).unwrap(),
            spec.two_sided_h_score(None, &g).unwrap(),
        )
    };
    let (d1, h1) = score(1.0);
    for t in [0.0, 0.5, 0.9, 1.1, 2.0] {
        let (d, h) = score(t);
        assert!(d > d1 && h < h1, "t {t}");
    }
}

#[test]
fn mixed_tables_follow_the_weights() {
    let spec = DiscreteJointSpec::random_whitened(4, 7, 3, 2, 3).unwrap();
    assert!(spec.mixed_table(None).is_err());
    let one_hot = EnsembleWeights::one_hot(3, 1);
    assert_eq!(
        spec.mixed_table(Some(&one_hot)).unwrap(),
        *spec.feature_table(1)
    );
    let alpha = EnsembleWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
    let cms: Vec<_> = (0..3).map(|j| spec.conditional_means(j).unwrap()).collect();
    let g = h_ensemble::mcr::optimal_classifier(&cms, &alpha).unwrap();
    assert!(chi2_divergence(&spec, Some(&alpha), &g).unwrap() >= 0.0);
    let wrong_dim = ClassEmbeddings::new(DMatrix::zeros(3, 5), spec.p_y()).unwrap();
    assert!(chi2_divergence(&spec, Some(&alpha), &wrong_dim).is_err());
}
