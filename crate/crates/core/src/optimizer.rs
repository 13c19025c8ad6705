//! Ensemble weight optimization by projected gradient ascent.
//!
//! Weights live on the affine hyperplane `sum_j alpha_j = 1`; entries may be
//! negative. Two objectives are supported:
//!
//! * [`Objective::Simplified`] is the Gram quadratic `alpha^T G alpha`. It is a
//!   convex function maximized over an affine set, so it is usually unbounded
//!   and the divergence guard is what stops it.
//! * [`Objective::Full`] recomputes the one-sided H-score of the mixed features
//!   at every iterate, with a ridge-regularized inverse covariance. It is
//!   bounded by the feature dimension. Its gradient is taken by central finite
//!   differences and projected onto the hyperplane's tangent space.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::DEFAULT_RIDGE_FACTOR;
use crate::features::{ConditionalMeans, FeatureMatrix, LabelVector, Ridge};
use crate::hscore::{check_compatible, gram_matrix, trace_of_solve, GramMatrix};

/// Allowed drift of `sum alpha` from 1.
pub const SUM_TOL: f64 = 1e-9;

/// Ensemble weights `alpha` with `sum alpha = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidInput(
                "ensemble weights must be non-empty".into(),
            ));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput(
                "ensemble weights must be finite".into(),
            ));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "ensemble weights sum to {sum}, not 1"
            )));
        }
        Ok(Self(alpha))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, j: usize) -> Self {
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

/// Euclidean projection onto `sum alpha = 1`: shift every entry by `(1 - sum) / M`.
///
/// A shift below the rounding noise of the sum is skipped, so points already
/// on the hyperplane come back unchanged.
pub fn project_to_hyperplane(v: &[f64]) -> Result<EnsembleWeights> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "projection needs a non-empty finite vector".into(),
        ));
    }
    let m = v.len() as f64;
    let sum: f64 = v.iter().sum();
    let shift = (1.0 - sum) / m;
    let noise = 4.0 * f64::EPSILON * v.iter().map(|x| x.abs()).sum::<f64>().max(1.0) / m;
    if shift.abs() <= noise {
        return Ok(EnsembleWeights(v.to_vec()));
    }
    Ok(EnsembleWeights(v.iter().map(|x| x + shift).collect()))
}

/// One ascent step on the Gram quadratic: `project(alpha + lr * 2 G alpha)`.
pub fn pgd_step(
    g: &GramMatrix,
    alpha: &EnsembleWeights,
    learning_rate: f64,
) -> Result<EnsembleWeights> {
    let grad = g.gradient(alpha.as_slice())?;
    let moved: Vec<f64> = alpha
        .as_slice()
        .iter()
        .zip(grad.iter())
        .map(|(a, d)| a + learning_rate * d)
        .collect();
    project_to_hyperplane(&moved)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Gram quadratic over the class-conditional means.
    Simplified,
    /// One-sided H-score of the mixed features.
    #[default]
    Full,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Simplified => "simplified",
            Objective::Full => "full",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplified" => Ok(Objective::Simplified),
            "full" => Ok(Objective::Full),
            other => Err(Error::InvalidInput(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once `max_j |alpha_new - alpha_old| < tol`.
    pub tol: f64,
    pub objective: Objective,
    /// `None` starts from uniform weights.
    pub seed: Option<u64>,
    /// Covariance ridge for the full objective.
    pub ridge: Ridge,
    pub alpha_bound: f64,
    pub objective_ceiling: f64,
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iters: 500,
            tol: 1e-6,
            objective: Objective::Full,
            seed: None,
            ridge: Ridge::Auto,
            alpha_bound: 100.0,
            objective_ceiling: 1e6,
            fd_step: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("tol", self.tol)?;
        positive("alpha_bound", self.alpha_bound)?;
        positive("objective_ceiling", self.objective_ceiling)?;
        positive("fd_step", self.fd_step)?;
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if let Ridge::Fixed(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("ridge must be >= 0, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerReport {
    pub final_alpha: EnsembleWeights,
    /// `(iteration, objective)` for the initial point and every accepted iterate.
    pub trajectory: Vec<(usize, f64)>,
    pub converged: bool,
    pub iterations_used: usize,
    pub diverged: bool,
    /// Every iterate, starting with the initial weights.
    pub alphas: Vec<EnsembleWeights>,
}

impl OptimizerReport {
    pub fn final_objective(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |&(_, h)| h)
    }
}

/// Objective evaluator shared by the optimizer and the grid oracle.
pub(crate) enum ObjectiveFn {
    Simplified(GramMatrix),
    Full { moments: CrossMoments, ridge: Ridge },
}

/// Covariance and between-class covariance of all sources stacked side by side.
///
/// Both moments of `sum_j alpha_j f_j` are quadratic in `alpha`, so the full
/// objective only needs these `Md x Md` blocks once.
pub(crate) struct CrossMoments {
    cov: DMatrix<f64>,
    between: DMatrix<f64>,
    dim: usize,
}

impl CrossMoments {
    fn new(features: &[FeatureMatrix], cms: &[ConditionalMeans]) -> Result<Self> {
        let (n, d, m) = (features[0].n_samples(), features[0].dim(), features.len());
        let mut stacked = DMatrix::zeros(n, m * d);
        let mut means = DMatrix::zeros(cms[0].n_classes(), m * d);
        for (j, (f, cm)) in features.iter().zip(cms).enumerate() {
            stacked.columns_mut(j * d, d).copy_from(f.data());
            means.columns_mut(j * d, d).copy_from(&cm.centered());
        }
        let cov = FeatureMatrix::new(stacked)?.covariance();
        let mut between = DMatrix::zeros(m * d, m * d);
        for (row, &p) in means.row_iter().zip(cms[0].priors().iter()) {
            between += row.transpose() * row * p;
        }
        Ok(Self {
            cov,
            between,
            dim: d,
        })
    }

    fn mix(&self, big: &DMatrix<f64>, alpha: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut out = DMatrix::zeros(d, d);
        for (i, &a) in alpha.iter().enumerate() {
            for (j, &b) in alpha.iter().enumerate() {
                if a != 0.0 && b != 0.0 {
                    out += big.view((i * d, j * d), (d, d)) * (a * b);
                }
            }
        }
        out
    }
}

impl ObjectiveFn {
    pub(crate) fn new(
        objective: Objective,
        cms: &[ConditionalMeans],
        features: &[FeatureMatrix],
        labels: &LabelVector,
        ridge: Ridge,
    ) -> Result<Self> {
        check_compatible(cms)?;
        if features.len() != cms.len() {
            return Err(Error::dims(format!(
                "{} feature matrices for {} sources",
                features.len(),
                cms.len()
            )));
        }
        for (j, f) in features.iter().enumerate() {
            if f.n_samples() != labels.len() || f.dim() != cms[0].dim() {
                return Err(Error::dims(format!(
                    "source {j} features are {}x{}, expected {}x{}",
                    f.n_samples(),
                    f.dim(),
                    labels.len(),
                    cms[0].dim()
                )));
            }
        }
        Ok(match objective {
            Objective::Simplified => ObjectiveFn::Simplified(gram_matrix(cms)?),
            Objective::Full => ObjectiveFn::Full {
                moments: CrossMoments::new(features, cms)?,
                ridge,
            },
        })
    }

    /// Objective at an arbitrary weight vector (not necessarily on the hyperplane).
    pub(crate) fn eval(&self, alpha: &[f64]) -> Result<f64> {
        match self {
            ObjectiveFn::Simplified(g) => g.quadratic(alpha),
            ObjectiveFn::Full { moments, ridge } => {
                if alpha.len() * moments.dim != moments.cov.nrows() {
                    return Err(Error::dims(format!(
                        "{} weights for {} sources",
                        alpha.len(),
                        moments.cov.nrows() / moments.dim
                    )));
                }
                let cov = moments.mix(&moments.cov, alpha);
                let r = match ridge {
                    Ridge::Auto => DEFAULT_RIDGE_FACTOR * cov.trace() / moments.dim as f64,
                    Ridge::Fixed(r) => *r,
                };
                trace_of_solve(&cov, r, &moments.mix(&moments.between, alpha))
            }
        }
    }

    /// Ascent direction projected onto the hyperplane's tangent space.
    fn tangent_gradient(&self, alpha: &[f64], fd_step: f64) -> Result<Vec<f64>> {
        let mut grad: Vec<f64> = match self {
            ObjectiveFn::Simplified(g) => g.gradient(alpha)?.iter().copied().collect(),
            ObjectiveFn::Full { .. } => {
                let mut grad = Vec::with_capacity(alpha.len());
                let mut probe = alpha.to_vec();
                for j in 0..alpha.len() {
                    probe[j] = alpha[j] + fd_step;
                    let up = self.eval(&probe)?;
                    probe[j] = alpha[j] - fd_step;
                    let down = self.eval(&probe)?;
                    probe[j] = alpha[j];
                    grad.push((up - down) / (2.0 * fd_step));
                }
                grad
            }
        };
        let mean = grad.iter().sum::<f64>() / grad.len() as f64;
        grad.iter_mut().for_each(|g| *g -= mean);
        Ok(grad)
    }
}

fn initial_weights(m: usize, seed: Option<u64>) -> Result<EnsembleWeights> {
    match seed {
        None => Ok(EnsembleWeights::uniform(m)),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.1 / m as f64).expect("positive sigma");
            let v: Vec<f64> = (0..m)
                .map(|_| 1.0 / m as f64 + noise.sample(&mut rng))
                .collect();
            project_to_hyperplane(&v)
        }
    }
}

fn inf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Projected gradient ascent on the chosen objective.
///
/// `features` are the per-source (whitened) target features, `cms` their
/// class-conditional means under `labels`.
pub fn optimize_weights(
    cms: &[ConditionalMeans],
    features: &[FeatureMatrix],
    labels: &LabelVector,
    cfg: &OptimizerConfig,
) -> Result<OptimizerReport> {
    cfg.validate()?;
    let objective = ObjectiveFn::new(cfg.objective, cms, features, labels, cfg.ridge)?;
    let m = cms.len();

    let mut alpha = if m == 1 {
        EnsembleWeights::uniform(1)
    } else {
        initial_weights(m, cfg.seed)?
    };
    let h0 = objective.eval(alpha.as_slice())?;
    if !h0.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    let mut report = OptimizerReport {
        final_alpha: alpha.clone(),
        trajectory: vec![(0, h0)],
        converged: m == 1,
        iterations_used: 0,
        diverged: false,
        alphas: vec![alpha.clone()],
    };
    if m == 1 {
        return Ok(report);
    }

    for iter in 1..=cfg.max_iters {
        let grad = objective.tangent_gradient(alpha.as_slice(), cfg.fd_step)?;
        let moved: Vec<f64> = alpha
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(a, d)| a + cfg.learning_rate * d)
            .collect();
        let next = project_to_hyperplane(&moved)?;
        let h = objective.eval(next.as_slice())?;
        if !h.is_finite() {
            return Err(Error::NonFiniteObjective(iter));
        }
        let step = inf_distance(next.as_slice(), alpha.as_slice());
        report.trajectory.push((iter, h));
        report.alphas.push(next.clone());
        report.iterations_used = iter;
        alpha = next;

        if alpha.max_abs() > cfg.alpha_bound || h > cfg.objective_ceiling {
            report.diverged = true;
            break;
        }
        if step < cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.final_alpha = alpha;
    Ok(report)
}

/// Brute-force argmax of the objective over a grid on the hyperplane.
///
/// `bounds` gives an interval for each of the first `M - 1` weights; the last
/// weight is fixed by the constraint. Ties go to the lowest grid index.
pub fn grid_oracle(
    cms: &[ConditionalMeans],
    features: &[FeatureMatrix],
    labels: &LabelVector,
    objective: Objective,
    bounds: &[(f64, f64)],
    step: f64,
    ridge: Ridge,
) -> Result<EnsembleWeights> {
    let m = cms.len();
    if m > 3 {
        return Err(Error::TooManySources(m));
    }
    let eval = ObjectiveFn::new(objective, cms, features, labels, ridge)?;
    if m == 1 {
        return Ok(EnsembleWeights::uniform(1));
    }
    if bounds.len() != m - 1 {
        return Err(Error::dims(format!(
            "{} bounds for {} free weights",
            bounds.len(),
            m - 1
        )));
    }
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "grid step must be positive, got {step}"
        )));
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|k| lo + k as f64 * step).collect()
        })
        .collect();
    let points: Vec<Vec<f64>> = match axes.as_slice() {
        [a] => a.iter().map(|&x| vec![x, 1.0 - x]).collect(),
        [a, b] => a
            .iter()
            .flat_map(|&x| b.iter().map(move |&y| vec![x, y, 1.0 - x - y]))
            .collect(),
        _ => unreachable!(),
    };
    let values: Vec<f64> = points
        .par_iter()
        .map(|p| eval.eval(p))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    EnsembleWeights::new(points[best].clone())
}

/// Largest eigenvalue of `G`; ascent with `lr < 1 / (2 lambda_max)` is monotone.
pub fn max_safe_learning_rate(g: &GramMatrix) -> f64 {
    let (_, hi) = g.eigen_range();
    1.0 / (2.0 * hi.max(f64::MIN_POSITIVE))
}

/// Objective value of `alpha` under either objective.
pub fn evaluate_objective(
    objective: Objective,
    cms: &[ConditionalMeans],
    features: &[FeatureMatrix],
    labels: &LabelVector,
    alpha: &[f64],
    ridge: Ridge,
) -> Result<f64> {
    ObjectiveFn::new(objective, cms, features, labels, ridge)?.eval(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_source_gram() -> GramMatrix {
        GramMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25])).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_to_hyperplane(&[0.5, 0.5]).unwrap().as_slice(),
            &[0.5, 0.5]
        );
        assert_eq!(
            project_to_hyperplane(&[1.0, 1.0]).unwrap().as_slice(),
            &[0.5, 0.5]
        );
        assert_eq!(
            project_to_hyperplane(&[2.0, 0.0]).unwrap().as_slice(),
            &[1.5, -0.5]
        );
        assert!(project_to_hyperplane(&[]).is_err());
    }

    #[test]
    fn pgd_step_examples() {
        let g = two_source_gram();
        let a = EnsembleWeights::uniform(2);
        let next = pgd_step(&g, &a, 0.1).unwrap();
        // unprojected (0.65, 0.575), mean 0.6125
        assert!((next.as_slice()[0] - 0.5375).abs() < 1e-15);
        assert!((next.as_slice()[1] - 0.4625).abs() < 1e-15);

        let zero = GramMatrix::from_matrix(DMatrix::zeros(2, 2)).unwrap();
        let a = EnsembleWeights::new(vec![1.5, -0.5]).unwrap();
        assert_eq!(pgd_step(&zero, &a, 0.3).unwrap(), a);
        assert_eq!(pgd_step(&g, &a, 0.0).unwrap(), a);
        assert!(pgd_step(&g, &EnsembleWeights::uniform(3), 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("full".parse::<Objective>().unwrap(), Objective::Full);
        assert!("other".parse::<Objective>().is_err());
    }

    #[test]
    fn seeded_initialization_sits_on_hyperplane() {
        for seed in 0..20 {
            let a = initial_weights(5, Some(seed)).unwrap();
            assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() <= SUM_TOL);
            assert_ne!(a, EnsembleWeights::uniform(5));
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(v in prop::collection::vec(-1e3..1e3f64, 1..8)) {
            let once = project_to_hyperplane(&v).unwrap();
            let twice = project_to_hyperplane(once.as_slice()).unwrap();
            let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-13 * scale, "{} vs {}", a, b);
            }
            prop_assert!((once.as_slice().iter().sum::<f64>() - 1.0).abs() <= SUM_TOL);
        }

        #[test]
        fn projection_is_nearest_point(v in prop::collection::vec(-10.0..10.0f64, 2..6), seed in any::<u64>()) {
            let p = project_to_hyperplane(&v).unwrap();
            let dist = |u: &[f64]| u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = dist(p.as_slice());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-20.0..20.0)).collect();
                let u = project_to_hyperplane(&raw).unwrap();
                prop_assert!(dist(u.as_slice()) >= best - 1e-9);
            }
        }
    }
}
