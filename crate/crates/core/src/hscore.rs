//! H-score variants and the Gram matrix behind the ensemble score.
//!
//! All expectations are empirical. Between-class covariances are weighted by
//! the empirical class priors and centered at the priors-weighted mean of the
//! class means, so every one-sided score is nonnegative and translation
//! invariant even when the features are only approximately zero-mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::{
    conditional_means, ConditionalMeans, FeatureMatrix, LabelVector, SINGULAR_RTOL,
};
use crate::optimizer::EnsembleWeights;

/// Tolerance for the zero-mean preconditions.
pub const ZERO_MEAN_TOL: f64 = 1e-6;

/// Tolerance for comparing class priors across sources.
pub const PRIOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HScoreVariant {
    TwoSided,
    OneSidedFull,
    OneSidedSimplified,
}

impl HScoreVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            HScoreVariant::TwoSided => "two-sided",
            HScoreVariant::OneSidedFull => "full",
            HScoreVariant::OneSidedSimplified => "simplified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HScoreValue {
    pub value: f64,
    pub variant: HScoreVariant,
    /// Covariance ridge used by the full one-sided score, 0 otherwise.
    pub ridge: f64,
}

impl HScoreValue {
    fn new(value: f64, variant: HScoreVariant) -> Self {
        Self {
            value,
            variant,
            ridge: 0.0,
        }
    }
}

fn check_zero_mean(what: &'static str, mean: &DVector<f64>) -> Result<()> {
    let max_abs_mean = mean.amax();
    if max_abs_mean > ZERO_MEAN_TOL {
        return Err(Error::NotZeroMean { what, max_abs_mean });
    }
    Ok(())
}

fn check_lengths(features: &FeatureMatrix, labels: &LabelVector) -> Result<()> {
    if features.n_samples() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.n_samples(),
            right: labels.len(),
        });
    }
    Ok(())
}

/// `E[f(X)^T g(Y)] - 1/2 tr(cov f(X) cov g(Y))` for a feature/embedding pair.
///
/// `class_embeddings` is `d_T x d`, row `y` holding `g(y)`.
pub fn h_score_two_sided(
    features: &FeatureMatrix,
    labels: &LabelVector,
    class_embeddings: &DMatrix<f64>,
) -> Result<HScoreValue> {
    check_lengths(features, labels)?;
    if class_embeddings.nrows() != labels.n_classes() || class_embeddings.ncols() != features.dim()
    {
        return Err(Error::dims(format!(
            "embeddings are {}x{}, expected {}x{}",
            class_embeddings.nrows(),
            class_embeddings.ncols(),
            labels.n_classes(),
            features.dim()
        )));
    }
    let priors = labels.priors();
    check_zero_mean("features", &features.mean())?;
    let g_mean = class_embeddings.transpose() * &priors;
    check_zero_mean("class embeddings", &g_mean)?;

    let n = features.n_samples() as f64;
    let correlation: f64 = features
        .data()
        .row_iter()
        .zip(labels.labels())
        .map(|(f, &y)| f.dot(&class_embeddings.row(y)))
        .sum::<f64>()
        / n;

    let cov_g = ConditionalMeans::new(class_embeddings.clone(), priors)?.between_class_covariance();
    let penalty = 0.5 * (features.covariance() * cov_g).trace();
    Ok(HScoreValue::new(
        correlation - penalty,
        HScoreVariant::TwoSided,
    ))
}

/// `tr((cov f(X) + ridge I)^{-1} cov E[f(X) | Y])`.
pub fn h_score_one_sided_full(
    features: &FeatureMatrix,
    labels: &LabelVector,
    ridge: f64,
) -> Result<HScoreValue> {
    check_lengths(features, labels)?;
    check_zero_mean("features", &features.mean())?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let cm = conditional_means(features, labels)?;
    let value = trace_of_solve(
        &features.covariance(),
        ridge,
        &cm.between_class_covariance(),
    )?;
    Ok(HScoreValue {
        value,
        variant: HScoreVariant::OneSidedFull,
        ridge,
    })
}

/// `tr((a + ridge I)^{-1} b)` through the eigendecomposition of `a`.
pub(crate) fn trace_of_solve(a: &DMatrix<f64>, ridge: f64, b: &DMatrix<f64>) -> Result<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let (min_eig, max_eig) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if ridge == 0.0 && (max_eig <= 0.0 || min_eig < SINGULAR_RTOL * max_eig) {
        return Err(Error::SingularCovariance { min_eig, max_eig });
    }
    // tr(V D^{-1} V^T B) = sum_k (v_k^T B v_k) / (lambda_k + ridge)
    let v = &eig.eigenvectors;
    let projected = v.transpose() * b * v;
    Ok(eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &lambda)| projected[(k, k)] / (lambda.max(0.0) + ridge))
        .sum())
}

/// `tr(cov E[f(X) | Y])`, the score of features assumed to be whitened.
pub fn h_score_simplified(cm: &ConditionalMeans) -> HScoreValue {
    let c = cm.centered();
    let value = c
        .row_iter()
        .zip(cm.priors().iter())
        .map(|(row, &p)| p * row.norm_squared())
        .sum();
    HScoreValue::new(value, HScoreVariant::OneSidedSimplified)
}

/// `G_ij = sum_y P(y) <c_i(y), c_j(y)>` over centered class means.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: DMatrix<f64>,
}

impl GramMatrix {
    pub fn from_matrix(g: DMatrix<f64>) -> Result<Self> {
        if g.nrows() != g.ncols() || g.nrows() == 0 {
            return Err(Error::dims(format!(
                "Gram matrix must be square, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        let scale = g.amax().max(1.0);
        for i in 0..g.nrows() {
            for j in 0..i {
                if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { g })
    }

    pub fn n_sources(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.g.diagonal().iter().copied().collect()
    }

    /// `(min, max)` eigenvalue.
    pub fn eigen_range(&self) -> (f64, f64) {
        SymmetricEigen::new(self.g.clone())
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Smallest eigenvalue is at least `-1e-9` times the largest.
    pub fn is_psd(&self) -> bool {
        let (lo, hi) = self.eigen_range();
        lo >= -1e-9 * hi.max(0.0)
    }

    /// `v^T G v` for any vector, on the hyperplane or not.
    pub fn quadratic(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.n_sources() {
            return Err(Error::dims(format!(
                "{} weights for {} sources",
                v.len(),
                self.n_sources()
            )));
        }
        let v = DVector::from_column_slice(v);
        Ok(v.dot(&(&self.g * &v)))
    }

    /// `2 G v`.
    pub fn gradient(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.n_sources() {
            return Err(Error::dims(format!(
                "{} weights for {} sources",
                v.len(),
                self.n_sources()
            )));
        }
        Ok(&self.g * DVector::from_column_slice(v) * 2.0)
    }
}

/// Checks that all sources describe the same classes, dims and priors.
pub(crate) fn check_compatible(cms: &[ConditionalMeans]) -> Result<()> {
    let first = cms
        .first()
        .ok_or_else(|| Error::InvalidInput("need at least one source".into()))?;
    for (j, cm) in cms.iter().enumerate().skip(1) {
        if cm.n_classes() != first.n_classes() || cm.dim() != first.dim() {
            return Err(Error::dims(format!(
                "source {j} has {}x{} conditional means, source 0 has {}x{}",
                cm.n_classes(),
                cm.dim(),
                first.n_classes(),
                first.dim()
            )));
        }
        let dev = (cm.priors() - first.priors()).amax();
        if dev > PRIOR_TOL {
            return Err(Error::PriorMismatch(dev));
        }
    }
    Ok(())
}

pub fn gram_matrix(cms: &[ConditionalMeans]) -> Result<GramMatrix> {
    check_compatible(cms)?;
    let priors = cms[0].priors();
    let centered: Vec<DMatrix<f64>> = cms.iter().map(ConditionalMeans::centered).collect();
    let m = cms.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v: f64 = (0..priors.len())
                .map(|y| priors[y] * centered[i].row(y).dot(&centered[j].row(y)))
                .sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(GramMatrix { g })
}

/// `alpha^T G alpha`.
pub fn ensemble_h_score(g: &GramMatrix, alpha: &EnsembleWeights) -> Result<HScoreValue> {
    Ok(HScoreValue::new(
        g.quadratic(alpha.as_slice())?,
        HScoreVariant::OneSidedSimplified,
    ))
}
