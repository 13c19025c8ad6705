//! Feature matrices, labels, ZCA whitening and class-conditional statistics.
//!
//! Every statistic here uses the empirical (divide-by-N) estimator. Source
//! extractors are black boxes: all the toolkit ever sees is the matrix of
//! features they produced on the target samples, one row per sample.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a covariance counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Ridge multiplier used by [`default_ridge`].
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-3;

/// An `N x d` matrix of extracted features; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidFeatures(format!(
                "shape {}x{} has an empty axis",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (r, c) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::InvalidFeatures(format!(
                "non-finite entry at ({r}, {c})"
            )));
        }
        Ok(Self { data })
    }

    /// Builds a matrix from row-major values.
    pub fn from_row_slice(n_samples: usize, dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n_samples * dim {
            return Err(Error::dims(format!(
                "{} values cannot fill a {n_samples}x{dim} matrix",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n_samples, dim, values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::dims(format!(
                "row {i} has {} columns, expected {dim}",
                r.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), dim, &flat)
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Row `i` as an owned vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.data.transpose().as_slice().to_vec()
    }

    /// Sample mean over rows.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.n_samples() as f64;
        let mut mean = DVector::zeros(self.dim());
        for row in self.data.row_iter() {
            mean += row.transpose();
        }
        mean / n
    }

    /// Biased (divide-by-N) sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let centered = self.centered_with(&mean);
        let mut cov = centered.transpose() * &centered / self.n_samples() as f64;
        symmetrize(&mut cov);
        cov
    }

    /// Copy with `mean` subtracted from every row.
    pub fn centered(&self) -> FeatureMatrix {
        let mean = self.mean();
        FeatureMatrix {
            data: self.centered_with(&mean),
        }
    }

    fn centered_with(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut centered = self.data.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        centered
    }
}

/// Class indices in `0..n_classes`, one per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    /// Range-checks every label. Classes may be absent here (a prediction
    /// vector need not hit every class); [`conditional_means`] rejects them.
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidLabels("n_classes must be positive".into()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label: label as u64,
                n_classes: n_classes as u64,
            });
        }
        Ok(Self { labels, n_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Empirical class distribution `n_y / N`.
    pub fn priors(&self) -> DVector<f64> {
        let n = self.labels.len() as f64;
        DVector::from_iterator(
            self.n_classes,
            self.class_counts().into_iter().map(|c| c as f64 / n),
        )
    }

    /// Fails with [`Error::EmptyClass`] on the first class without samples.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(class) => Err(Error::EmptyClass { class }),
            None => Ok(()),
        }
    }
}

/// Affine map `x -> A (x - mean)` that whitens the data it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenTransform {
    mean: DVector<f64>,
    transform: DMatrix<f64>,
    ridge: f64,
}

impl WhitenTransform {
    pub fn new(mean: DVector<f64>, transform: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 || transform.nrows() != d || transform.ncols() != d {
            return Err(Error::dims(format!(
                "whitener mean has length {d} but transform is {}x{}",
                transform.nrows(),
                transform.ncols()
            )));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ridge must be finite and >= 0, got {ridge}"
            )));
        }
        if mean.iter().chain(transform.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "whitener has non-finite entries".into(),
            ));
        }
        Ok(Self {
            mean,
            transform,
            ridge,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            transform: DMatrix::identity(dim, dim),
            ridge: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        apply_whitener(self, features)
    }
}

/// `1e-3 * trace(cov) / d`, the ridge used when the caller does not pick one.
pub fn default_ridge(features: &FeatureMatrix) -> f64 {
    DEFAULT_RIDGE_FACTOR * features.covariance().trace() / features.dim() as f64
}

/// How to pick the covariance ridge for a whitener or a one-sided H-score.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Ridge {
    /// [`default_ridge`] of the data at hand.
    #[default]
    Auto,
    Fixed(f64),
}

impl Ridge {
    pub fn resolve(self, features: &FeatureMatrix) -> f64 {
        match self {
            Ridge::Auto => default_ridge(features),
            Ridge::Fixed(r) => r,
        }
    }
}

/// Fits a ZCA whitener from the sample mean and `(cov + ridge I)^{-1/2}`.
pub fn fit_whitener(features: &FeatureMatrix, ridge: f64) -> Result<WhitenTransform> {
    if features.n_samples() < 2 {
        return Err(Error::InsufficientSamples(features.n_samples()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let mean = features.mean();
    let cov = features.covariance();
    let transform = inverse_sqrt_psd(&cov, ridge)?;
    WhitenTransform::new(mean, transform, ridge)
}

/// Row-wise `A (x - mean)`.
pub fn apply_whitener(t: &WhitenTransform, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.dim() != t.dim() {
        return Err(Error::dims(format!(
            "features have {} columns but the whitener expects {}",
            features.dim(),
            t.dim()
        )));
    }
    let centered = features.centered_with(&t.mean);
    FeatureMatrix::new(centered * t.transform.transpose())
}

/// Symmetric inverse square root of `cov + ridge I`.
pub(crate) fn inverse_sqrt_psd(cov: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let (min_eig, max_eig) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if ridge == 0.0 && (max_eig <= 0.0 || min_eig < SINGULAR_RTOL * max_eig) {
        return Err(Error::SingularCovariance { min_eig, max_eig });
    }
    let scale = eig.eigenvalues.map(|v| 1.0 / (v.max(0.0) + ridge).sqrt());
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Per-class feature expectations `E[f(X) | Y = y]` with the class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeans {
    means: DMatrix<f64>,
    priors: DVector<f64>,
}

impl ConditionalMeans {
    /// `means` is `d_T x d` (row per class), `priors` has length `d_T`.
    pub fn new(means: DMatrix<f64>, priors: DVector<f64>) -> Result<Self> {
        if means.nrows() != priors.len() || means.nrows() == 0 || means.ncols() == 0 {
            return Err(Error::dims(format!(
                "means are {}x{} but there are {} priors",
                means.nrows(),
                means.ncols(),
                priors.len()
            )));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "conditional means have non-finite entries".into(),
            ));
        }
        if priors.iter().any(|&p| p.is_nan() || p < 0.0) || (priors.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "priors must be nonnegative and sum to 1, got sum {}",
                priors.sum()
            )));
        }
        Ok(Self { means, priors })
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn priors(&self) -> &DVector<f64> {
        &self.priors
    }

    pub fn n_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Priors-weighted average of the class means.
    pub fn weighted_mean(&self) -> DVector<f64> {
        self.means.transpose() * &self.priors
    }

    /// Class means with the priors-weighted average subtracted.
    pub fn centered(&self) -> DMatrix<f64> {
        let center = self.weighted_mean();
        let mut out = self.means.clone();
        for mut row in out.row_iter_mut() {
            row -= center.transpose();
        }
        out
    }

    /// Priors-weighted covariance of the class means, `d x d`.
    pub fn between_class_covariance(&self) -> DMatrix<f64> {
        let c = self.centered();
        let weighted = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] * self.priors[i]);
        let mut cov = c.transpose() * weighted;
        symmetrize(&mut cov);
        cov
    }
}

/// Averages the feature rows of each class.
pub fn conditional_means(
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<ConditionalMeans> {
    if features.n_samples() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.n_samples(),
            right: labels.len(),
        });
    }
    labels.require_all_classes()?;
    let counts = labels.class_counts();
    let mut sums = DMatrix::zeros(labels.n_classes(), features.dim());
    for (row, &y) in features.data().row_iter().zip(labels.labels()) {
        let mut target = sums.row_mut(y);
        target += row;
    }
    for (y, &n) in counts.iter().enumerate() {
        let mut r = sums.row_mut(y);
        r /= n as f64;
    }
    ConditionalMeans::new(sums, labels.priors())
}
