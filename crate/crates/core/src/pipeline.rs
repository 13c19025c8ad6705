//! End-to-end training: whiten each source, collect class-conditional means,
//! optimize the ensemble weights and build the closed-form classifier.

use crate::error::{Error, Result};
use crate::features::{
    conditional_means, fit_whitener, ConditionalMeans, FeatureMatrix, LabelVector, Ridge,
};
use crate::mcr::{optimal_classifier, FittedEnsembleModel};
use crate::optimizer::{optimize_weights, OptimizerConfig, OptimizerReport};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    pub optimizer: OptimizerConfig,
    /// Ridge of the per-source whiteners.
    pub whiten_ridge: Ridge,
}

/// Per-source whitened target features and their conditional means.
#[derive(Debug, Clone)]
pub struct PreparedSources {
    pub whiteners: Vec<crate::features::WhitenTransform>,
    pub whitened: Vec<FeatureMatrix>,
    pub conditional_means: Vec<ConditionalMeans>,
}

pub fn prepare_sources(
    features: &[FeatureMatrix],
    labels: &LabelVector,
    ridge: Ridge,
) -> Result<PreparedSources> {
    if features.is_empty() {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    labels.require_all_classes()?;
    let mut out = PreparedSources {
        whiteners: vec![],
        whitened: vec![],
        conditional_means: vec![],
    };
    for (j, f) in features.iter().enumerate() {
        if f.n_samples() != labels.len() {
            return Err(Error::dims(format!(
                "source {j} has {} rows but there are {} labels",
                f.n_samples(),
                labels.len()
            )));
        }
        let w = fit_whitener(f, ridge.resolve(f))?;
        let white = w.apply(f)?;
        out.conditional_means
            .push(conditional_means(&white, labels)?);
        out.whitened.push(white);
        out.whiteners.push(w);
    }
    Ok(out)
}

/// Trains an ensemble model on few-shot target features from `M` sources.
pub fn fit_ensemble(
    features: &[FeatureMatrix],
    labels: &LabelVector,
    opts: &FitOptions,
) -> Result<(FittedEnsembleModel, OptimizerReport)> {
    let prepared = prepare_sources(features, labels, opts.whiten_ridge)?;
    let report = optimize_weights(
        &prepared.conditional_means,
        &prepared.whitened,
        labels,
        &opts.optimizer,
    )?;
    let embeddings = optimal_classifier(&prepared.conditional_means, &report.final_alpha)?;
    let model = FittedEnsembleModel::new(
        report.final_alpha.clone(),
        prepared.whiteners,
        embeddings,
        opts.optimizer.objective,
        report.final_objective(),
    )?;
    Ok((model, report))
}
