//! Closed-form maximal-correlation-regression head.
//!
//! The classifier is a label encoder: class `y` maps to the embedding
//! `g(y) = sum_j alpha_j E[f_j(X) | Y = y]`, and a sample is assigned to the
//! class whose embedding correlates most with its mixed feature.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{ConditionalMeans, FeatureMatrix, LabelVector, WhitenTransform};
use crate::hscore::check_compatible;
use crate::optimizer::{EnsembleWeights, Objective};

/// Class embeddings `g(y)` (row per class) with the class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings {
    g: DMatrix<f64>,
    priors: DVector<f64>,
}

impl ClassEmbeddings {
    pub fn new(g: DMatrix<f64>, priors: DVector<f64>) -> Result<Self> {
        // same invariants as conditional means
        let cm = ConditionalMeans::new(g, priors)?;
        Ok(Self {
            g: cm.means().clone(),
            priors: cm.priors().clone(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn priors(&self) -> &DVector<f64> {
        &self.priors
    }

    pub fn n_classes(&self) -> usize {
        self.g.nrows()
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    /// `<f, g(y)>` for every class.
    pub fn correlations(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.dim() {
            return Err(Error::dims(format!(
                "feature has length {}, embeddings have {}",
                feature.len(),
                self.dim()
            )));
        }
        Ok(self
            .g
            .row_iter()
            .map(|row| row.iter().zip(feature).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// `g(y) = sum_j alpha_j means_j[y]`, priors copied from the sources.
pub fn optimal_classifier(
    cms: &[ConditionalMeans],
    alpha: &EnsembleWeights,
) -> Result<ClassEmbeddings> {
    check_compatible(cms)?;
    if alpha.len() != cms.len() {
        return Err(Error::dims(format!(
            "{} weights for {} sources",
            alpha.len(),
            cms.len()
        )));
    }
    let mut g = DMatrix::zeros(cms[0].n_classes(), cms[0].dim());
    for (cm, &a) in cms.iter().zip(alpha.as_slice()) {
        g += cm.means() * a;
    }
    ClassEmbeddings::new(g, cms[0].priors().clone())
}

/// Entrywise `sum_j alpha_j F_j`.
///
/// Terms with a zero weight are skipped, so a one-hot weight vector returns
/// the selected matrix bit for bit. `alpha` need not lie on the hyperplane.
pub fn mix_features(features: &[FeatureMatrix], alpha: &[f64]) -> Result<FeatureMatrix> {
    if features.is_empty() || features.len() != alpha.len() {
        return Err(Error::dims(format!(
            "{} weights for {} feature matrices",
            alpha.len(),
            features.len()
        )));
    }
    let shape = (features[0].n_samples(), features[0].dim());
    if let Some((j, f)) = features
        .iter()
        .enumerate()
        .find(|(_, f)| (f.n_samples(), f.dim()) != shape)
    {
        return Err(Error::dims(format!(
            "source {j} is {}x{}, source 0 is {}x{}",
            f.n_samples(),
            f.dim(),
            shape.0,
            shape.1
        )));
    }
    let mut acc: Option<DMatrix<f64>> = None;
    for (f, &a) in features.iter().zip(alpha) {
        if a == 0.0 {
            continue;
        }
        let term = f.data() * a;
        acc = Some(match acc {
            Some(sum) => sum + term,
            None => term,
        });
    }
    FeatureMatrix::new(acc.unwrap_or_else(|| DMatrix::zeros(shape.0, shape.1)))
}

/// Everything needed to classify raw per-source features.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEnsembleModel {
    pub alpha: EnsembleWeights,
    pub whiteners: Vec<WhitenTransform>,
    pub embeddings: ClassEmbeddings,
    pub objective_used: Objective,
    pub h_score_final: f64,
}

impl FittedEnsembleModel {
    pub fn new(
        alpha: EnsembleWeights,
        whiteners: Vec<WhitenTransform>,
        embeddings: ClassEmbeddings,
        objective_used: Objective,
        h_score_final: f64,
    ) -> Result<Self> {
        if whiteners.len() != alpha.len() {
            return Err(Error::dims(format!(
                "{} whiteners for {} weights",
                whiteners.len(),
                alpha.len()
            )));
        }
        if let Some((j, w)) = whiteners
            .iter()
            .enumerate()
            .find(|(_, w)| w.dim() != embeddings.dim())
        {
            return Err(Error::dims(format!(
                "whitener {j} has dim {}, embeddings have dim {}",
                w.dim(),
                embeddings.dim()
            )));
        }
        Ok(Self {
            alpha,
            whiteners,
            embeddings,
            objective_used,
            h_score_final,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.alpha.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.embeddings.n_classes()
    }

    /// Whitens each source with its stored transform and mixes them.
    pub fn target_features(&self, per_source_features: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        if per_source_features.len() != self.n_sources() {
            return Err(Error::dims(format!(
                "model has {} sources, got {} feature matrices",
                self.n_sources(),
                per_source_features.len()
            )));
        }
        let whitened = per_source_features
            .iter()
            .zip(&self.whiteners)
            .map(|(f, w)| w.apply(f))
            .collect::<Result<Vec<_>>>()?;
        mix_features(&whitened, self.alpha.as_slice())
    }
}

/// `P(y) (1 + <f, g(y)>)`, clipped at zero and renormalized.
///
/// Falls back to the priors when every clipped value is zero.
pub fn posterior(model: &FittedEnsembleModel, mixed_feature_row: &[f64]) -> Result<Vec<f64>> {
    let priors = model.embeddings.priors();
    let raw: Vec<f64> = model
        .embeddings
        .correlations(mixed_feature_row)?
        .iter()
        .zip(priors.iter())
        .map(|(c, p)| (p * (1.0 + c)).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok(priors.iter().copied().collect());
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `argmax_y <f, g(y)>` for every row of already-mixed target features.
pub fn predict_mixed(embeddings: &ClassEmbeddings, mixed: &FeatureMatrix) -> Result<LabelVector> {
    let labels = (0..mixed.n_samples())
        .map(|i| {
            let row: Vec<f64> = mixed.data().row(i).iter().copied().collect();
            embeddings.correlations(&row).map(|c| argmax(&c))
        })
        .collect::<Result<Vec<_>>>()?;
    LabelVector::new(labels, embeddings.n_classes())
}

/// Classifies raw per-source features (whitening is applied internally).
pub fn predict(
    model: &FittedEnsembleModel,
    per_source_features: &[FeatureMatrix],
) -> Result<LabelVector> {
    let mixed = model.target_features(per_source_features)?;
    predict_mixed(&model.embeddings, &mixed)
}

/// Fraction of positions where the labels agree.
pub fn evaluate(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput(
            "cannot score empty label vectors".into(),
        ));
    }
    let hits = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(means: &[f64], rows: usize, priors: &[f64]) -> ConditionalMeans {
        ConditionalMeans::new(
            DMatrix::from_row_slice(rows, means.len() / rows, means),
            DVector::from_column_slice(priors),
        )
        .unwrap()
    }

    fn model_with(g: &[f64], priors: &[f64], dim: usize) -> FittedEnsembleModel {
        let emb = ClassEmbeddings::new(
            DMatrix::from_row_slice(priors.len(), dim, g),
            DVector::from_column_slice(priors),
        )
        .unwrap();
        FittedEnsembleModel::new(
            EnsembleWeights::uniform(1),
            vec![WhitenTransform::identity(dim)],
            emb,
            Objective::Full,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn optimal_classifier_cases() {
        let a = cm(&[1.0, 2.0, -1.0, -2.0], 2, &[0.5, 0.5]);
        let b = cm(&[0.0, 4.0, 0.0, -4.0], 2, &[0.5, 0.5]);
        let g =
            optimal_classifier(&[a.clone(), b.clone()], &EnsembleWeights::one_hot(2, 0)).unwrap();
        assert_eq!(g.matrix(), a.means());

        let a = cm(&[2.0, -2.0], 2, &[0.5, 0.5]);
        let b = cm(&[0.0, 0.0], 2, &[0.5, 0.5]);
        let g = optimal_classifier(&[a, b], &EnsembleWeights::uniform(2)).unwrap();
        assert_eq!(g.matrix()[(0, 0)], 1.0);
        assert_eq!(g.priors().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn mix_cases() {
        let f1 = FeatureMatrix::from_row_slice(1, 2, &[1.0, 0.0]).unwrap();
        let f2 = FeatureMatrix::from_row_slice(1, 2, &[0.0, 1.0]).unwrap();
        let mixed = mix_features(&[f1.clone(), f2.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(mixed.data().as_slice(), &[0.5, 0.5]);

        let neg = FeatureMatrix::from_row_slice(1, 2, &[-0.0, 3.25]).unwrap();
        let picked = mix_features(&[f1.clone(), neg.clone()], &[0.0, 1.0]).unwrap();
        assert_eq!(picked.data()[(0, 0)].to_bits(), (-0.0f64).to_bits());
        assert_eq!(picked, neg);

        let wide = FeatureMatrix::from_row_slice(1, 3, &[0.0; 3]).unwrap();
        assert!(matches!(
            mix_features(&[f1, wide], &[0.5, 0.5]),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn posterior_cases() {
        let m = model_with(&[1.0, -1.0], &[0.5, 0.5], 1);
        assert_eq!(posterior(&m, &[0.0]).unwrap(), vec![0.5, 0.5]);
        let p = posterior(&m, &[0.6]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15);
        // <f,g(0)> = -3, <f,g(1)> = 3 -> raw (-1, 2) -> clipped (0, 1)
        let m = model_with(&[-1.0, 1.0 / 3.0], &[0.5, 0.5], 1);
        assert_eq!(posterior(&m, &[3.0]).unwrap(), vec![0.0, 1.0]);
        assert!(posterior(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn posterior_all_clipped_returns_priors() {
        let m = model_with(&[-1.0, -1.0], &[0.25, 0.75], 1);
        assert_eq!(posterior(&m, &[5.0]).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn predict_cases() {
        let m = model_with(&[1.0, 0.0, 0.0, 1.0], &[0.5, 0.5], 2);
        let f = FeatureMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.2, 0.9]).unwrap();
        assert_eq!(
            predict(&m, std::slice::from_ref(&f)).unwrap().labels(),
            &[0, 0, 1]
        );
        assert!(matches!(
            predict(&m, &[f.clone(), f]),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn evaluate_cases() {
        let lv = |v: Vec<usize>| LabelVector::new(v, 3).unwrap();
        assert_eq!(
            evaluate(&lv(vec![0, 1, 2]), &lv(vec![0, 1, 2])).unwrap(),
            1.0
        );
        assert_eq!(
            evaluate(&lv(vec![1, 2, 0]), &lv(vec![0, 1, 2])).unwrap(),
            0.0
        );
        assert_eq!(
            evaluate(&lv(vec![0, 1, 2, 2]), &lv(vec![0, 1, 2, 0])).unwrap(),
            0.75
        );
        assert!(matches!(
            evaluate(&lv(vec![0]), &lv(vec![0, 1])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn posterior_is_a_distribution(
            g in prop::collection::vec(-3.0..3.0f64, 6),
            f in prop::collection::vec(-3.0..3.0f64, 2),
            w in prop::collection::vec(0.1..1.0f64, 3),
        ) {
            let total: f64 = w.iter().sum();
            let mut priors: Vec<f64> = w.iter().map(|v| v / total).collect();
            let drift: f64 = 1.0 - priors.iter().sum::<f64>();
            priors[0] += drift;
            let m = model_with(&g, &priors, 2);
            let p = posterior(&m, &f).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn posterior_argmax_matches_predict_under_uniform_priors(
            g in prop::collection::vec(-3.0..3.0f64, 6),
            f in prop::collection::vec(-3.0..3.0f64, 2),
        ) {
            // with unequal priors P(y)(1 + c_y) can reorder classes, so the
            // agreement only holds when the priors are uniform
            let m = model_with(&g, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 2);
            let corr = m.embeddings.correlations(&f).unwrap();
            let pred = argmax(&corr);
            let p = posterior(&m, &f).unwrap();
            if 1.0 + corr[pred] > 0.0 {
                prop_assert_eq!(argmax(&p), pred);
            }
        }

        #[test]
        fn mixing_equal_matrices_is_identity(vals in prop::collection::vec(-5.0..5.0f64, 6), a in -3.0..4.0f64) {
            let f = FeatureMatrix::from_row_slice(3, 2, &vals).unwrap();
            let mixed = mix_features(&[f.clone(), f.clone()], &[a, 1.0 - a]).unwrap();
            let err = (mixed.data() - f.data()).amax();
            prop_assert!(err <= 1e-12);
        }
    }
}
